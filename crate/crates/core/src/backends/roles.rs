//! One trait per model role. [`BackendClient`](super::BackendClient)
//! implements all of them; tests can substitute any single role.

use super::protocol::*;
use super::BackendError;

pub trait AnalysisBackend: Sync {
    fn analyze(&self, req: &AnalyzeRequest) -> Result<AnalyzeResponse, BackendError>;
}

pub trait EmbeddingBackend: Sync {
    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError>;
}

pub trait PlannerBackend: Sync {
    fn propose(&self, req: &ProposeRequest) -> Result<ProposeResponse, BackendError>;
    fn revise(&self, req: &ReviseRequest) -> Result<ReviseResponse, BackendError>;
}

pub trait EditBackend: Sync {
    fn edit(&self, req: &EditRequest) -> Result<EditResponse, BackendError>;
}

pub trait DetectionBackend: Sync {
    fn detect(&self, req: &DetectRequest) -> Result<DetectResponse, BackendError>;
}

pub trait SegmentationBackend: Sync {
    fn segment(&self, req: &SegmentRequest) -> Result<SegmentResponse, BackendError>;
}

/// The editing agent's self-critic.
pub trait ValidationBackend: Sync {
    fn validate(&self, req: &ValidateRequest) -> Result<ValidateResponse, BackendError>;
}

pub trait CriticBackend: Sync {
    fn assess(&self, req: &AssessRequest) -> Result<AssessResponse, BackendError>;
    fn diagnose(&self, req: &DiagnoseRequest) -> Result<DiagnoseResponse, BackendError>;
    fn escalate(&self, req: &EscalateRequest) -> Result<EscalateResponse, BackendError>;
}

pub trait ClassifierBackend: Sync {
    fn classify(&self, req: &ClassifyRequest) -> Result<ClassifyResponse, BackendError>;
}

pub trait DescriptionBackend: Sync {
    fn describe(&self, req: &DescribeRequest) -> Result<DescribeResponse, BackendError>;
}

pub trait PerceptualBackend: Sync {
    fn perceptual_distance(
        &self,
        req: &PerceptualDistanceRequest,
    ) -> Result<PerceptualDistanceResponse, BackendError>;
}

/// Every role at once; what the orchestrator needs.
pub trait ModelBackends:
    AnalysisBackend
    + EmbeddingBackend
    + PlannerBackend
    + EditBackend
    + DetectionBackend
    + SegmentationBackend
    + ValidationBackend
    + CriticBackend
    + ClassifierBackend
    + DescriptionBackend
    + PerceptualBackend
{
}

impl<T> ModelBackends for T where
    T: AnalysisBackend
        + EmbeddingBackend
        + PlannerBackend
        + EditBackend
        + DetectionBackend
        + SegmentationBackend
        + ValidationBackend
        + CriticBackend
        + ClassifierBackend
        + DescriptionBackend
        + PerceptualBackend
{
}
