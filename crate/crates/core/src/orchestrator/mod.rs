//! Orchestrator: runs a job through planning, parallel pre-creation and
//! per-branch optimization, persisting every intermediate artifact in a
//! resumable run directory.
//!
//! Run directory layout:
//!
//! ```text
//! job.json                 the job as submitted (source stored as a relative uri)
//! settings.json            run settings in effect
//! plans/plan_<k>.json
//! branches/<k>/step_<i>/{before,after,trace.json}
//! branches/<k>/assessment_<i>.json, diagnosis_<i>.json
//! outputs/branch_<k>.<ext>
//! blobs/<sha256>.<ext>     content-addressed images
//! audit.log                one JSON event per line
//! record.json              the job record
//! manifest.json            hashes of everything committed so far
//! ```

mod evaluate;
mod inspect;
mod run;
pub mod rundir;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use evaluate::evaluate_runs;
pub use inspect::inspect;
pub use run::{resume, run_job};
pub use rundir::{Agent, AuditEvent, RunDir};

use crate::artifact::{ArtifactError, ImageArtifact};
use crate::backends::{BackendError, ModelBackends};
use crate::config::RunSettings;
use crate::critic::{CriticError, Diagnosis, EmotionAssessment};
use crate::editing::{ActionTrace, EditingError, ToolRegistry, DEFAULT_RETRY_BUDGET};
use crate::emotion::EmotionLabel;
use crate::knowledge::{EmotionFactorTree, KnowledgeError};
use crate::metrics::MetricsError;
use crate::planning::{EditPlan, PlanningError, SemanticCues, DEFAULT_K, DEFAULT_N_MAX};

pub const DEFAULT_MAX_OPT_ITERS: u32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("invalid job: {0}")]
    InvalidJob(String),
    #[error("run directory {0} already holds a job; resume it instead")]
    RunExists(PathBuf),
    #[error("corrupt run directory ({path}): {detail}")]
    Corrupt { path: String, detail: String },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Planning(#[from] PlanningError),
    #[error(transparent)]
    Editing(#[from] EditingError),
    #[error(transparent)]
    Critic(#[from] CriticError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl OrchestratorError {
    /// The backend error at the root of this failure, if any.
    pub fn backend_error(&self) -> Option<&BackendError> {
        match self {
            OrchestratorError::Backend(e)
            | OrchestratorError::Planning(PlanningError::Backend(e))
            | OrchestratorError::Editing(EditingError::Backend(e))
            | OrchestratorError::Critic(CriticError::Backend(e))
            | OrchestratorError::Knowledge(KnowledgeError::Backend(e))
            | OrchestratorError::Metrics(MetricsError::Backend(e)) => Some(e),
            _ => None,
        }
    }

    pub fn is_backend_unavailable(&self) -> bool {
        self.backend_error().is_some_and(BackendError::is_unavailable)
    }
}

fn default_k() -> usize {
    DEFAULT_K
}
fn default_n_max() -> usize {
    DEFAULT_N_MAX
}
fn default_retry_budget() -> u32 {
    DEFAULT_RETRY_BUDGET
}
fn default_max_opt_iters() -> u32 {
    DEFAULT_MAX_OPT_ITERS
}
fn default_profile() -> String {
    "mock".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    /// Path to the source image; inside a run directory, the relative blob uri.
    pub source_image: String,
    pub target_emotion: EmotionLabel,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_retry_budget")]
    pub retry_budget: u32,
    #[serde(default = "default_max_opt_iters")]
    pub max_opt_iters: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_profile")]
    pub backend_profile: String,
}

impl JobSpec {
    pub fn new(source_image: impl Into<String>, target_emotion: EmotionLabel) -> Self {
        Self {
            source_image: source_image.into(),
            target_emotion,
            k: DEFAULT_K,
            n_max: DEFAULT_N_MAX,
            retry_budget: DEFAULT_RETRY_BUDGET,
            max_opt_iters: DEFAULT_MAX_OPT_ITERS,
            seed: 0,
            backend_profile: default_profile(),
        }
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.k == 0 {
            return Err(OrchestratorError::InvalidJob("k must be at least 1".into()));
        }
        if self.n_max == 0 {
            return Err(OrchestratorError::InvalidJob("n_max must be at least 1".into()));
        }
        if self.source_image.trim().is_empty() {
            return Err(OrchestratorError::InvalidJob("source_image is empty".into()));
        }
        Ok(())
    }
}

/// Last phase whose results are committed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Started,
    Planned,
    PreCreated,
    Complete,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Started => "started",
            Phase::Planned => "planned",
            Phase::PreCreated => "pre_created",
            Phase::Complete => "complete",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchStatus {
    PreCreation,
    Optimizing,
    Accepted,
    Rejected,
}

impl BranchStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            BranchStatus::PreCreation => "pre_creation",
            BranchStatus::Optimizing => "optimizing",
            BranchStatus::Accepted => "accepted",
            BranchStatus::Rejected => "rejected",
        }
    }
}

/// One assessed step of a branch. Step 0 is pre-creation; step `i > 0` is
/// optimization pass `i`. The diagnosis, when present, was made of this
/// step's result and drove step `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: u32,
    pub image: ImageArtifact,
    pub traces: Vec<ActionTrace>,
    pub assessment: EmotionAssessment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnosis: Option<Diagnosis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchState {
    pub branch: u32,
    pub plan: EditPlan,
    pub current_image: ImageArtifact,
    /// Optimization passes completed.
    pub iteration: u32,
    pub status: BranchStatus,
    pub history: Vec<HistoryEntry>,
    pub edit_calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub branch: u32,
    pub image: ImageArtifact,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_similarity: Option<f64>,
    /// Whether source similarity met the preservation floor; informational.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preserved: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobFailure {
    /// Phase that was running when the job failed.
    pub phase: String,
    pub message: String,
}

/// Wall-clock milliseconds per phase. Never part of record equality, so
/// records of identical runs compare equal.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timing {
    pub phases_ms: BTreeMap<String, u64>,
}

impl PartialEq for Timing {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub spec: JobSpec,
    pub source: ImageArtifact,
    pub settings: RunSettings,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cues: Option<SemanticCues>,
    /// Factor node ids retrieved for planning.
    pub retrieved: Vec<String>,
    /// True when plans came from the proposer instead of the knowledge base.
    pub proposer_fallback: bool,
    pub branches: Vec<BranchState>,
    pub outputs: Vec<OutputRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<JobFailure>,
    pub timing: Timing,
}

impl JobRecord {
    pub fn branch(&self, k: u32) -> Option<&BranchState> {
        self.branches.iter().find(|b| b.branch == k)
    }

    pub fn accepted(&self) -> impl Iterator<Item = &BranchState> {
        self.branches.iter().filter(|b| b.status == BranchStatus::Accepted)
    }
}

/// Shared, read-only services a job runs against.
#[derive(Clone, Copy)]
pub struct Engine<'a> {
    pub tree: &'a EmotionFactorTree,
    pub registry: &'a ToolRegistry,
    pub backends: &'a dyn ModelBackends,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Used for new runs; a resumed run keeps its persisted settings.
    pub settings: RunSettings,
    /// Branches processed concurrently. Results do not depend on it.
    pub parallelism: usize,
    /// Stop cleanly once this phase is committed.
    pub halt_after: Option<Phase>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            settings: RunSettings::default(),
            parallelism: 4,
            halt_after: None,
        }
    }
}
