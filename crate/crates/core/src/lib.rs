//! emoflow: a multi-agent engine that rewrites the emotion an image evokes
//! while producing several distinct results for one request.
//!
//! A job flows through three agents. The planning agent turns the source
//! image and a target emotion into `k` distinct edit plans, drawing on a
//! per-emotion knowledge base of visual factors. The editing agent carries
//! out each plan with a registry of editing tools, checking every step and
//! retrying on failure. The critic agent scores each result and, when the
//! target emotion is missing, diagnoses which instructions to fix. The
//! orchestrator runs branches in parallel and records everything in a
//! resumable run directory.
//!
//! All model inference sits behind the JSON protocol in [`backends`]; the
//! bundled mock implements it deterministically.

pub mod artifact;
pub mod backends;
pub mod config;
pub mod critic;
pub mod digest;
pub mod editing;
pub mod emotion;
pub mod knowledge;
pub mod metrics;
pub mod orchestrator;
pub mod planning;

pub use emotion::{Emotion, EmotionDistribution, EmotionLabel};
pub use orchestrator::{
    evaluate_runs, inspect, resume, run_job, Engine, JobRecord, JobSpec, OrchestratorError, Phase,
    RunOptions,
};
