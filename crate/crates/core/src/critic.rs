//! Critic agent: emotion assessment of a result and two-level diagnosis of
//! the instructions that produced it.

use serde::{Deserialize, Serialize};

use crate::artifact::{ImageArtifact, ImageStore};
use crate::backends::{
    AssessRequest, BackendError, CriticBackend, CritiqueMode, DiagnoseRequest, ElementSuggestion,
    EscalateRequest, ImageRef, InstructionView, Route, TraceContext,
};
use crate::editing::{ActionTrace, StageStatus};
use crate::emotion::{Emotion, EmotionDistribution, EmotionLabel};
use crate::planning::{ElementRef, Instruction, PlanningError};

pub const DEFAULT_PASS_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum CriticError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid revision for instruction {index}: {source}")]
    InvalidRevision {
        index: u32,
        #[source]
        source: PlanningError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionAssessment {
    /// All zeros for out-of-domain targets.
    pub distribution: EmotionDistribution,
    pub verdict: Verdict,
    pub rationale: Vec<String>,
    pub target: EmotionLabel,
    /// Backend similarity between source and result, recorded as the
    /// structure-preservation proxy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_similarity: Option<f64>,
}

impl EmotionAssessment {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Pass iff the target is the (lexicographic) argmax or holds at least `threshold` mass.
pub fn pass_rule(distribution: &EmotionDistribution, target: Emotion, threshold: f64) -> bool {
    distribution.argmax() == target || distribution.get(target) >= threshold
}

pub fn assess(
    image: &ImageArtifact,
    source: Option<&ImageArtifact>,
    target: &EmotionLabel,
    critic: &dyn CriticBackend,
    store: &ImageStore,
    pass_threshold: f64,
    trace: TraceContext,
) -> Result<EmotionAssessment, CriticError> {
    let reply = critic.assess(&AssessRequest {
        mode: CritiqueMode::Assess,
        image: ImageRef::from_artifact(store, image),
        target: target.clone(),
        source: source.map(|s| ImageRef::from_artifact(store, s)),
        trace,
    })?;
    let malformed = |detail: &str| BackendError::Malformed {
        route: Route::Critique,
        detail: detail.into(),
    };
    let (distribution, verdict) = match target.in_domain() {
        Some(e) => {
            let map = reply
                .distribution
                .as_ref()
                .ok_or_else(|| malformed("in-domain assessment without a distribution"))?;
            let d = EmotionDistribution::from_map(map).map_err(|err| malformed(&err.to_string()))?;
            let v = if pass_rule(&d, e, pass_threshold) {
                Verdict::Pass
            } else {
                Verdict::Fail
            };
            (d, v)
        }
        None => {
            let conveys = reply
                .conveys
                .ok_or_else(|| malformed("out-of-domain assessment without a verdict"))?;
            let v = if conveys { Verdict::Pass } else { Verdict::Fail };
            (EmotionDistribution::sentinel(), v)
        }
    };
    Ok(EmotionAssessment {
        distribution,
        verdict,
        rationale: reply.rationale,
        target: target.clone(),
        source_similarity: reply.source_similarity,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionDiagnosis {
    pub instruction_index: u32,
    pub effective: bool,
    pub executed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised: Option<Instruction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_note: Option<String>,
}

impl InstructionDiagnosis {
    pub fn is_ok(&self) -> bool {
        self.effective && self.executed
    }

    /// Exactly one of the three diagnosis shapes holds.
    pub fn is_well_formed(&self) -> bool {
        match (self.effective, self.executed) {
            (true, true) => self.revised.is_none() && self.error_note.is_none(),
            (true, false) => self.revised.is_none() && self.error_note.is_some(),
            (false, _) => self.revised.is_some() && self.error_note.is_none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub items: Vec<InstructionDiagnosis>,
    /// Extra instruction requested when every instruction looks right but
    /// the emotion is still missing. Its index is provisional.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escalation: Option<Instruction>,
}

fn view(ins: &Instruction) -> InstructionView {
    InstructionView {
        index: ins.index,
        text: ins.text.clone(),
        element: ins.element.description().to_string(),
        kind: ins.element.kind(),
        method: ins.method,
    }
}

fn to_instruction(index: u32, s: ElementSuggestion) -> Result<Instruction, CriticError> {
    Instruction::new(
        index,
        ElementRef::free_text(s.element.trim(), s.kind),
        s.method,
        s.region_hint,
    )
    .map_err(|source| CriticError::InvalidRevision { index, source })
}

/// Two-level diagnosis of every instruction in `plan`. Instructions whose
/// trace failed are diagnosed locally as effective but not executed; the
/// rest go to the backend. Traces are matched by instruction index and the
/// last trace for an index wins.
pub fn diagnose(
    plan: &[Instruction],
    image: &ImageArtifact,
    target: &EmotionLabel,
    traces: &[ActionTrace],
    critic: &dyn CriticBackend,
    store: &ImageStore,
    trace: TraceContext,
) -> Result<Diagnosis, CriticError> {
    let image_ref = ImageRef::from_artifact(store, image);
    let mut items = Vec::with_capacity(plan.len());
    for ins in plan {
        let last = traces.iter().rev().find(|t| t.instruction_index == ins.index);
        if let Some(t) = last.filter(|t| t.final_status == StageStatus::Failed) {
            items.push(InstructionDiagnosis {
                instruction_index: ins.index,
                effective: true,
                executed: false,
                revised: None,
                error_note: Some(t.failure_reason().unwrap_or("execution failed").to_string()),
            });
            continue;
        }
        let reply = critic.diagnose(&DiagnoseRequest {
            mode: CritiqueMode::Diagnose,
            image: image_ref.clone(),
            target: target.clone(),
            instruction: view(ins),
            trace: trace.with_instruction(ins.index),
        })?;
        let d = match (reply.effective, reply.executed) {
            (false, _) => InstructionDiagnosis {
                instruction_index: ins.index,
                effective: false,
                executed: false,
                revised: Some(to_instruction(
                    ins.index,
                    reply.revised.expect("validated: revision present"),
                )?),
                error_note: None,
            },
            (true, false) => InstructionDiagnosis {
                instruction_index: ins.index,
                effective: true,
                executed: false,
                revised: None,
                error_note: reply.error_note,
            },
            (true, true) => InstructionDiagnosis {
                instruction_index: ins.index,
                effective: true,
                executed: true,
                revised: None,
                error_note: None,
            },
        };
        items.push(d);
    }

    let escalation = if items.iter().all(InstructionDiagnosis::is_ok) {
        let reply = critic.escalate(&EscalateRequest {
            mode: CritiqueMode::Escalate,
            image: image_ref,
            target: target.clone(),
            plan: plan.iter().map(view).collect(),
            trace,
        })?;
        Some(to_instruction(plan.len() as u32 + 1, reply.proposal)?)
    } else {
        None
    };
    Ok(Diagnosis { items, escalation })
}
