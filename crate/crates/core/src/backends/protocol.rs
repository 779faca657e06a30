//! Wire protocol `emoflow-proto/1`.
//!
//! Every route is a JSON POST whose body carries `"version": "emoflow-proto/1"`.
//! Errors come back as `{"error": {"code", "message"}}` with a non-2xx status.
//! Images travel by reference ([`ImageRef`]), never inline.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::artifact::{ArtifactError, ImageArtifact, ImageStore};
use crate::digest::is_sha256_hex;
use crate::editing::RleMask;
use crate::emotion::{Emotion, EmotionDistribution, EmotionLabel};
use crate::knowledge::ElementKind;
use crate::planning::EditingMethod;

pub const PROTOCOL_VERSION: &str = "emoflow-proto/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    Analyze,
    PlanPropose,
    Edit,
    Detect,
    Segment,
    Validate,
    Critique,
    Embed,
    Classify,
    Describe,
    /// Adapter extension used only by the LPIPS diversity metric.
    PerceptualDistance,
}

impl Route {
    pub const ALL: [Route; 11] = [
        Route::Analyze,
        Route::PlanPropose,
        Route::Edit,
        Route::Detect,
        Route::Segment,
        Route::Validate,
        Route::Critique,
        Route::Embed,
        Route::Classify,
        Route::Describe,
        Route::PerceptualDistance,
    ];

    pub fn path(self) -> &'static str {
        match self {
            Route::Analyze => "/analyze",
            Route::PlanPropose => "/plan-propose",
            Route::Edit => "/edit",
            Route::Detect => "/detect",
            Route::Segment => "/segment",
            Route::Validate => "/validate",
            Route::Critique => "/critique",
            Route::Embed => "/embed",
            Route::Classify => "/classify",
            Route::Describe => "/describe",
            Route::PerceptualDistance => "/perceptual-distance",
        }
    }

    pub fn from_path(path: &str) -> Option<Route> {
        Route::ALL.into_iter().find(|r| r.path() == path)
    }

    /// Key used for per-route timeouts in a backend profile.
    pub fn name(self) -> &'static str {
        &self.path()[1..]
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.path())
    }
}

/// Content-addressed image reference. `path` is resolvable by the backend;
/// it is excluded from request content hashes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: String,
    pub content_hash: String,
    pub width: u32,
    pub height: u32,
}

impl ImageRef {
    /// Reference to a stored artifact by absolute path.
    pub fn from_artifact(store: &ImageStore, image: &ImageArtifact) -> Self {
        let path = store.resolve(image);
        let path = std::path::absolute(&path).unwrap_or(path);
        Self {
            path: path.to_string_lossy().into_owned(),
            content_hash: image.content_hash.clone(),
            width: image.width,
            height: image.height,
        }
    }

    /// Copies the referenced bytes into `store` (a no-op when already
    /// there) after checking them against `content_hash`.
    pub fn adopt(&self, store: &ImageStore) -> Result<ImageArtifact, ArtifactError> {
        let path = std::path::Path::new(&self.path);
        let bytes = std::fs::read(path).map_err(|source| ArtifactError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        let actual = crate::digest::sha256_hex(&bytes);
        if actual != self.content_hash {
            return Err(ArtifactError::HashMismatch {
                uri: self.path.clone(),
                expected: self.content_hash.clone(),
                actual,
            });
        }
        store.ingest(&bytes, Some((self.width, self.height)))
    }

    fn check(&self, field: &str) -> Result<(), String> {
        if !is_sha256_hex(&self.content_hash) {
            return Err(format!("{field}.content_hash is not a sha256 hex digest"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(format!("{field} has zero dimensions"));
        }
        if self.path.is_empty() {
            return Err(format!("{field}.path is empty"));
        }
        Ok(())
    }
}

/// Correlation fields. They take part in the request content hash, which
/// lets fixtures target one branch, pass, instruction or attempt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceContext {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt: Option<u32>,
}

impl TraceContext {
    pub fn is_empty(&self) -> bool {
        *self == TraceContext::default()
    }
    pub fn branch(branch: u32) -> Self {
        Self {
            branch: Some(branch),
            ..Self::default()
        }
    }
    pub fn with_iteration(mut self, iteration: u32) -> Self {
        self.iteration = Some(iteration);
        self
    }
    pub fn with_instruction(mut self, index: u32) -> Self {
        self.instruction = Some(index);
        self
    }
    pub fn with_attempt(mut self, attempt: u32) -> Self {
        self.attempt = Some(attempt);
        self
    }
}

pub trait WireResponse: Serialize + DeserializeOwned {
    fn validate(&self) -> Result<(), String>;
}

pub trait WireRequest: Serialize {
    const ROUTE: Route;
    type Response: WireResponse;
}

fn non_empty(s: &str, field: &str) -> Result<(), String> {
    if s.trim().is_empty() {
        Err(format!("{field} is empty"))
    } else {
        Ok(())
    }
}

fn unit_interval(x: f64, field: &str) -> Result<(), String> {
    if x.is_finite() && (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(format!("{field} = {x} outside [0, 1]"))
    }
}

macro_rules! wire {
    ($req:ty => $resp:ty, $route:expr) => {
        impl WireRequest for $req {
            const ROUTE: Route = $route;
            type Response = $resp;
        }
    };
}

// ---- /analyze ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeRequest {
    pub image: ImageRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    pub salience: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeResponse {
    pub scene_summary: String,
    pub entities: Vec<Entity>,
    pub source_emotion: EmotionLabel,
    pub source_confidence: f64,
}

impl WireResponse for AnalyzeResponse {
    fn validate(&self) -> Result<(), String> {
        non_empty(&self.scene_summary, "scene_summary")?;
        for (i, e) in self.entities.iter().enumerate() {
            non_empty(&e.name, &format!("entities[{i}].name"))?;
            unit_interval(e.salience, &format!("entities[{i}].salience"))?;
        }
        unit_interval(self.source_confidence, "source_confidence")
    }
}
wire!(AnalyzeRequest => AnalyzeResponse, Route::Analyze);

// ---- /plan-propose ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposeMode {
    Suggest,
    Revise,
}

/// An element/method pair proposed by a model rather than retrieved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementSuggestion {
    pub element: String,
    pub kind: ElementKind,
    pub method: EditingMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_hint: Option<String>,
}

impl ElementSuggestion {
    fn check(&self, field: &str) -> Result<(), String> {
        non_empty(&self.element, &format!("{field}.element"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRef {
    pub element: String,
    pub method: EditingMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposeRequest {
    pub mode: ProposeMode,
    pub target_emotion: EmotionLabel,
    pub scene_summary: String,
    pub entities: Vec<String>,
    pub exclude: Vec<PairRef>,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposeResponse {
    pub suggestions: Vec<ElementSuggestion>,
}

impl WireResponse for ProposeResponse {
    fn validate(&self) -> Result<(), String> {
        for (i, s) in self.suggestions.iter().enumerate() {
            s.check(&format!("suggestions[{i}]"))?;
        }
        Ok(())
    }
}
wire!(ProposeRequest => ProposeResponse, Route::PlanPropose);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviseRequest {
    pub mode: ProposeMode,
    pub instruction: String,
    pub method: EditingMethod,
    pub failure_reason: String,
    #[serde(default, skip_serializing_if = "TraceContext::is_empty")]
    pub trace: TraceContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviseResponse {
    pub revised_text: String,
}

impl WireResponse for ReviseResponse {
    fn validate(&self) -> Result<(), String> {
        non_empty(&self.revised_text, "revised_text")
    }
}
wire!(ReviseRequest => ReviseResponse, Route::PlanPropose);

// ---- /edit ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub tool: String,
    pub image: ImageRef,
    pub directive: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<RleMask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ImageRef>,
    #[serde(default, skip_serializing_if = "TraceContext::is_empty")]
    pub trace: TraceContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditResponse {
    pub image: ImageRef,
}

impl WireResponse for EditResponse {
    fn validate(&self) -> Result<(), String> {
        self.image.check("image")
    }
}
wire!(EditRequest => EditResponse, Route::Edit);

// ---- /detect and /segment ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub image: ImageRef,
    pub phrase: String,
    #[serde(default, skip_serializing_if = "TraceContext::is_empty")]
    pub trace: TraceContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub boxes: Vec<BoundingBox>,
}

impl WireResponse for DetectResponse {
    fn validate(&self) -> Result<(), String> {
        for (i, b) in self.boxes.iter().enumerate() {
            if b.x0 >= b.x1 || b.y0 >= b.y1 {
                return Err(format!("boxes[{i}] is degenerate"));
            }
            unit_interval(b.score, &format!("boxes[{i}].score"))?;
        }
        Ok(())
    }
}
wire!(DetectRequest => DetectResponse, Route::Detect);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image: ImageRef,
    pub bbox: BoundingBox,
    #[serde(default, skip_serializing_if = "TraceContext::is_empty")]
    pub trace: TraceContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub mask: RleMask,
}

impl WireResponse for SegmentResponse {
    fn validate(&self) -> Result<(), String> {
        self.mask.validate().map_err(|e| format!("mask: {e}"))
    }
}
wire!(SegmentRequest => SegmentResponse, Route::Segment);

// ---- /validate ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateRequest {
    pub before: ImageRef,
    pub after: ImageRef,
    pub directive: String,
    pub tool: String,
    #[serde(default, skip_serializing_if = "TraceContext::is_empty")]
    pub trace: TraceContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateResponse {
    pub verdict: VerdictKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl WireResponse for ValidateResponse {
    fn validate(&self) -> Result<(), String> {
        match (&self.verdict, &self.reason) {
            (VerdictKind::Failed, None) => Err("failed verdict without reason".into()),
            (VerdictKind::Failed, Some(r)) => non_empty(r, "reason"),
            _ => Ok(()),
        }
    }
}
wire!(ValidateRequest => ValidateResponse, Route::Validate);

// ---- /critique ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CritiqueMode {
    Assess,
    Diagnose,
    Escalate,
}

/// Instruction as shown to the critic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionView {
    pub index: u32,
    pub text: String,
    pub element: String,
    pub kind: ElementKind,
    pub method: EditingMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessRequest {
    pub mode: CritiqueMode,
    pub image: ImageRef,
    pub target: EmotionLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<ImageRef>,
    #[serde(default, skip_serializing_if = "TraceContext::is_empty")]
    pub trace: TraceContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<BTreeMap<String, f64>>,
    /// Direct verdict, used for out-of-domain targets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conveys: Option<bool>,
    pub rationale: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_similarity: Option<f64>,
}

impl WireResponse for AssessResponse {
    fn validate(&self) -> Result<(), String> {
        if self.rationale.is_empty() {
            return Err("rationale is empty".into());
        }
        match (&self.distribution, self.conveys) {
            (None, None) => return Err("neither distribution nor conveys present".into()),
            (Some(d), _) => {
                EmotionDistribution::from_map(d).map_err(|e| format!("distribution: {e}"))?;
            }
            _ => {}
        }
        if let Some(s) = self.source_similarity {
            if !s.is_finite() {
                return Err("source_similarity is not finite".into());
            }
        }
        Ok(())
    }
}
wire!(AssessRequest => AssessResponse, Route::Critique);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseRequest {
    pub mode: CritiqueMode,
    pub image: ImageRef,
    pub target: EmotionLabel,
    pub instruction: InstructionView,
    #[serde(default, skip_serializing_if = "TraceContext::is_empty")]
    pub trace: TraceContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseResponse {
    pub effective: bool,
    pub executed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised: Option<ElementSuggestion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_note: Option<String>,
}

impl WireResponse for DiagnoseResponse {
    fn validate(&self) -> Result<(), String> {
        match (self.effective, self.executed) {
            (false, _) => match &self.revised {
                Some(r) => r.check("revised"),
                None => Err("ineffective instruction without a revision".into()),
            },
            (true, false) => match &self.error_note {
                Some(n) => non_empty(n, "error_note"),
                None => Err("unexecuted instruction without an error note".into()),
            },
            (true, true) => Ok(()),
        }
    }
}
wire!(DiagnoseRequest => DiagnoseResponse, Route::Critique);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalateRequest {
    pub mode: CritiqueMode,
    pub image: ImageRef,
    pub target: EmotionLabel,
    pub plan: Vec<InstructionView>,
    #[serde(default, skip_serializing_if = "TraceContext::is_empty")]
    pub trace: TraceContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalateResponse {
    pub proposal: ElementSuggestion,
}

impl WireResponse for EscalateResponse {
    fn validate(&self) -> Result<(), String> {
        self.proposal.check("proposal")
    }
}
wire!(EscalateRequest => EscalateResponse, Route::Critique);

// ---- /embed, /classify, /describe, /perceptual-distance ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageRef>,
}

impl EmbedRequest {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: Some(text.into()),
            image: None,
        }
    }
    pub fn image(image: ImageRef) -> Self {
        Self {
            text: None,
            image: Some(image),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f64>,
}

impl WireResponse for EmbedResponse {
    fn validate(&self) -> Result<(), String> {
        if self.vector.is_empty() {
            return Err("vector is empty".into());
        }
        if self.vector.iter().any(|x| !x.is_finite()) {
            return Err("vector has non-finite components".into());
        }
        Ok(())
    }
}
wire!(EmbedRequest => EmbedResponse, Route::Embed);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub image: ImageRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub distribution: BTreeMap<String, f64>,
}

impl ClassifyResponse {
    pub fn distribution(&self) -> EmotionDistribution {
        EmotionDistribution::from_map(&self.distribution).expect("validated response")
    }
}

impl WireResponse for ClassifyResponse {
    fn validate(&self) -> Result<(), String> {
        EmotionDistribution::from_map(&self.distribution)
            .map(|_| ())
            .map_err(|e| format!("distribution: {e}"))
    }
}
wire!(ClassifyRequest => ClassifyResponse, Route::Classify);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescribeRequest {
    pub emotion: Emotion,
    pub cluster_id: u32,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescribeResponse {
    pub description: String,
    pub kind: ElementKind,
}

impl WireResponse for DescribeResponse {
    fn validate(&self) -> Result<(), String> {
        non_empty(&self.description, "description")
    }
}
wire!(DescribeRequest => DescribeResponse, Route::Describe);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptualDistanceRequest {
    pub a: ImageRef,
    pub b: ImageRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptualDistanceResponse {
    pub distance: f64,
}

impl WireResponse for PerceptualDistanceResponse {
    fn validate(&self) -> Result<(), String> {
        if self.distance.is_finite() && self.distance >= 0.0 {
            Ok(())
        } else {
            Err(format!("distance {} is not a finite non-negative number", self.distance))
        }
    }
}
wire!(PerceptualDistanceRequest => PerceptualDistanceResponse, Route::PerceptualDistance);

/// `{"error": {"code", "message"}}`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub error: ErrorBody,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}
