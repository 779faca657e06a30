//! Fixtures shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use emoflow_core::backends::{BackendClient, BackendProfile, MockBackend, MockRule, MockScript, Route};
use emoflow_core::editing::ToolRegistry;
use emoflow_core::knowledge::{ClusterParams, ElementKind, EmotionFactorTree, FactorNode, Provenance};
use emoflow_core::orchestrator::{Engine, JobSpec, RunOptions};
use emoflow_core::{Emotion, EmotionLabel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

/// Source image bytes. Not a decodable image, so the store assumes the
/// default working resolution.
pub const SOURCE_BYTES: &[u8] = b"emoflow fixture image: a quiet harbour at dusk\n";

pub fn write_source(dir: &Path) -> PathBuf {
    let path = dir.join("source.img");
    std::fs::write(&path, SOURCE_BYTES).unwrap();
    path
}

const AWE_FACTORS: &[(&str, ElementKind)] = &[
    ("towering waterfall", ElementKind::Object),
    ("vast starry night sky", ElementKind::BackgroundScene),
    ("golden hour light", ElementKind::ColorTone),
    ("person gazing upward", ElementKind::Action),
    ("ancient cathedral", ElementKind::Object),
    ("wide-eyed wonder", ElementKind::FacialExpression),
    ("monumental scale", ElementKind::Attribute),
];

const FEAR_FACTORS: &[(&str, ElementKind)] = &[
    ("looming shadow", ElementKind::Object),
    ("dark stormy forest", ElementKind::BackgroundScene),
    ("cold desaturated tones", ElementKind::ColorTone),
];

/// A small knowledge base: seven awe factors and three fear factors with
/// seeded 8-dimensional embeddings.
pub fn fixture_tree() -> EmotionFactorTree {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut nodes = Vec::new();
    for (emotion, factors) in [(Emotion::Awe, AWE_FACTORS), (Emotion::Fear, FEAR_FACTORS)] {
        for (i, (desc, kind)) in factors.iter().enumerate() {
            nodes.push(FactorNode {
                id: format!("{}-{:05}", emotion.as_str(), i),
                emotion,
                kind: *kind,
                description: (*desc).into(),
                embedding: (0..8).map(|_| rng.random_range(-1.0..1.0)).collect(),
                provenance: Provenance {
                    cluster_id: i as u32,
                    cluster_size: 6,
                },
            });
        }
    }
    EmotionFactorTree::new(nodes, 8, ClusterParams::default()).unwrap()
}

pub struct Harness {
    pub mock: Arc<MockBackend>,
    pub client: BackendClient,
    pub tree: EmotionFactorTree,
    pub registry: ToolRegistry,
}

impl Harness {
    pub fn new(script: MockScript) -> Self {
        Self::with_profile(script, BackendProfile::default())
    }

    pub fn with_profile(script: MockScript, profile: BackendProfile) -> Self {
        let mock = Arc::new(MockBackend::new(script));
        Self {
            client: BackendClient::with_mock(profile, mock.clone()),
            mock,
            tree: fixture_tree(),
            registry: ToolRegistry::default_table(),
        }
    }

    pub fn engine(&self) -> Engine<'_> {
        Engine {
            tree: &self.tree,
            registry: &self.registry,
            backends: &self.client,
        }
    }

    /// Edit calls the mock received for one branch.
    pub fn edit_calls(&self, branch: u32) -> usize {
        self.mock
            .requests()
            .iter()
            .filter(|r| r.route == Route::Edit.path() && r.body["trace"]["branch"] == json!(branch))
            .count()
    }
}

pub fn options(parallelism: usize) -> RunOptions {
    RunOptions {
        parallelism,
        ..RunOptions::default()
    }
}

/// The end-to-end scenario: three branches toward awe. Branch 1's first
/// instruction fails self-validation once and recovers on another tool;
/// branch 2 fails its first assessment and passes after one optimization
/// pass; branch 3 passes straight away.
pub fn scenario_script() -> MockScript {
    MockScript::with_seed(4)
        .rule(MockRule::respond(
            Route::Validate,
            json!({"trace": {"branch": 1, "iteration": 0, "instruction": 1, "attempt": 0}}),
            json!({"verdict": "failed", "reason": "edited region does not match the directive"}),
        ))
        .rule(MockRule::respond(
            Route::Critique,
            json!({"mode": "assess", "trace": {"branch": 2, "iteration": 0}}),
            json!({
                "distribution": {
                    "amusement": 0.05, "anger": 0.05, "awe": 0.2, "contentment": 0.3,
                    "disgust": 0.05, "excitement": 0.1, "fear": 0.05, "sadness": 0.2
                },
                "rationale": ["calm water reads as contentment", "nothing conveys scale or grandeur"],
                "source_similarity": 0.91
            }),
        ))
}

pub fn scenario_spec(source: &Path) -> JobSpec {
    let mut spec = JobSpec::new(source.display().to_string(), Emotion::Awe.into());
    spec.k = 3;
    spec.n_max = 3;
    spec.seed = 2024;
    spec
}

pub fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

use emoflow_core::artifact::{ImageArtifact, ImageStore};
use emoflow_core::backends::*;
use emoflow_core::knowledge::ElementKind as Kind;
use emoflow_core::planning::EditingMethod;

/// Issues one typed request on every route through `client`, which
/// validates each reply against the client schema. Returns the route and
/// outcome of each call.
pub fn call_every_route(
    client: &BackendClient,
    store: &ImageStore,
    image: &ImageArtifact,
) -> Vec<(Route, Result<(), BackendError>)> {
    let img = ImageRef::from_artifact(store, image);
    let trace = TraceContext::branch(1).with_iteration(0).with_instruction(1).with_attempt(0);
    let target = EmotionLabel::from(Emotion::Awe);
    let view = InstructionView {
        index: 1,
        text: "add a towering waterfall to the scene".into(),
        element: "towering waterfall".into(),
        kind: Kind::Object,
        method: EditingMethod::AddObject,
    };
    let bbox = BoundingBox { x0: 10, y0: 10, x1: 100, y1: 80, score: 0.9 };
    let edited = client.edit(&EditRequest {
        tool: "magicbrush".into(),
        image: img.clone(),
        directive: "add a towering waterfall to the scene".into(),
        mask: None,
        reference: None,
        trace,
    });
    let edited_ref = edited.as_ref().map(|r| r.image.clone()).unwrap_or_else(|_| img.clone());
    vec![
        (Route::Analyze, client.analyze(&AnalyzeRequest { image: img.clone() }).map(drop)),
        (
            Route::PlanPropose,
            client
                .propose(&ProposeRequest {
                    mode: ProposeMode::Suggest,
                    target_emotion: target.clone(),
                    scene_summary: "a harbour at dusk".into(),
                    entities: vec!["boat".into()],
                    exclude: vec![],
                    count: 4,
                })
                .map(drop),
        ),
        (
            Route::PlanPropose,
            client
                .revise(&ReviseRequest {
                    mode: ProposeMode::Revise,
                    instruction: view.text.clone(),
                    method: EditingMethod::AddObject,
                    failure_reason: "no visible change".into(),
                    trace,
                })
                .map(drop),
        ),
        (Route::Edit, edited.map(drop)),
        (
            Route::Detect,
            client
                .detect(&DetectRequest { image: img.clone(), phrase: "boat".into(), trace })
                .map(drop),
        ),
        (
            Route::Segment,
            client.segment(&SegmentRequest { image: img.clone(), bbox, trace }).map(drop),
        ),
        (
            Route::Validate,
            client
                .validate(&ValidateRequest {
                    before: img.clone(),
                    after: edited_ref,
                    directive: view.text.clone(),
                    tool: "magicbrush".into(),
                    trace,
                })
                .map(drop),
        ),
        (
            Route::Critique,
            client
                .assess(&AssessRequest {
                    mode: CritiqueMode::Assess,
                    image: img.clone(),
                    target: target.clone(),
                    source: Some(img.clone()),
                    trace,
                })
                .map(drop),
        ),
        (
            Route::Critique,
            client
                .assess(&AssessRequest {
                    mode: CritiqueMode::Assess,
                    image: img.clone(),
                    target: EmotionLabel::parse("nostalgia").unwrap(),
                    source: None,
                    trace,
                })
                .map(drop),
        ),
        (
            Route::Critique,
            client
                .diagnose(&DiagnoseRequest {
                    mode: CritiqueMode::Diagnose,
                    image: img.clone(),
                    target: target.clone(),
                    instruction: view.clone(),
                    trace,
                })
                .map(drop),
        ),
        (
            Route::Critique,
            client
                .escalate(&EscalateRequest {
                    mode: CritiqueMode::Escalate,
                    image: img.clone(),
                    target: target.clone(),
                    plan: vec![view],
                    trace,
                })
                .map(drop),
        ),
        (Route::Embed, client.embed(&EmbedRequest::text("a harbour at dusk")).map(drop)),
        (Route::Embed, client.embed(&EmbedRequest::image(img.clone())).map(drop)),
        (Route::Classify, client.classify(&ClassifyRequest { image: img.clone() }).map(drop)),
        (
            Route::Describe,
            client
                .describe(&DescribeRequest {
                    emotion: Emotion::Awe,
                    cluster_id: 3,
                    members: vec!["a waterfall".into(), "a canyon".into()],
                })
                .map(drop),
        ),
        (
            Route::PerceptualDistance,
            client
                .perceptual_distance(&PerceptualDistanceRequest { a: img.clone(), b: img })
                .map(drop),
        ),
    ]
}

pub fn ingest_source(store: &ImageStore) -> ImageArtifact {
    store.ingest(SOURCE_BYTES, None).unwrap()
}
