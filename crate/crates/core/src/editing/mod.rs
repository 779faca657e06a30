//! Editing agent: tool registry, spatial priors and the pre / edit / val
//! action machine that executes one plan with bounded retries.

mod act;
mod mask;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, Route};
use crate::planning::{EditingMethod, Instruction};

pub use act::{
    act_edit, act_pre, act_val, execute_instructions, execute_plan, ExecutionContext,
    ExecutionOutcome, ValVerdict, DEFAULT_RETRY_BUDGET,
};
pub use mask::{MaskError, RleMask};

#[derive(Debug, thiserror::Error)]
pub enum EditingError {
    #[error("no tool supports {0}")]
    ToolUnavailable(EditingMethod),
    #[error("tool {tool} needs a spatial mask but none was prepared")]
    MissingMask { tool: String },
    #[error("tool {tool} does not support {method}")]
    UnsupportedMethod { tool: String, method: EditingMethod },
    #[error("invalid tool registry: {0}")]
    InvalidRegistry(String),
    #[error("edit changed resolution from {before:?} to {after:?}")]
    ResolutionChanged {
        before: (u32, u32),
        after: (u32, u32),
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Artifact(#[from] crate::artifact::ArtifactError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    TextGuided,
    TextAndMask,
    MaskAndReference,
}

impl Modality {
    pub fn needs_mask(self) -> bool {
        self != Modality::TextGuided
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub modality: Modality,
    pub supported_methods: Vec<EditingMethod>,
    pub endpoint: String,
    /// Lower ranks are preferred within a modality.
    pub priority: u32,
}

impl ToolDescriptor {
    pub fn supports(&self, method: EditingMethod) -> bool {
        self.supported_methods.contains(&method)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolRegistry {
    tools: Vec<ToolDescriptor>,
}

impl ToolRegistry {
    /// Validates that tools are well formed and priorities are unique per method.
    /// Coverage of every method is checked by [`ToolRegistry::validate_coverage`].
    pub fn new(tools: Vec<ToolDescriptor>) -> Result<Self, EditingError> {
        for t in &tools {
            if t.supported_methods.is_empty() {
                return Err(EditingError::InvalidRegistry(format!(
                    "tool {} supports no method",
                    t.name
                )));
            }
        }
        for m in EditingMethod::ALL {
            let mut ranks: Vec<u32> = tools.iter().filter(|t| t.supports(m)).map(|t| t.priority).collect();
            ranks.sort_unstable();
            if ranks.windows(2).any(|w| w[0] == w[1]) {
                return Err(EditingError::InvalidRegistry(format!(
                    "two tools for {m} share a priority rank"
                )));
            }
        }
        let mut names: Vec<&str> = tools.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(EditingError::InvalidRegistry("duplicate tool name".into()));
        }
        Ok(Self { tools })
    }

    pub fn validate_coverage(&self) -> Result<(), EditingError> {
        for m in EditingMethod::ALL {
            if !self.tools.iter().any(|t| t.supports(m)) {
                return Err(EditingError::ToolUnavailable(m));
            }
        }
        Ok(())
    }

    /// The default library: five text-guided editors, two text-and-mask
    /// inpainters and one mask-and-reference editor. Object removal has no
    /// dedicated editor, so the general instruction editor and the
    /// inpainter carry it.
    pub fn default_table() -> Self {
        use EditingMethod::*;
        let tool = |name: &str, modality, methods: &[EditingMethod], priority| ToolDescriptor {
            name: name.into(),
            modality,
            supported_methods: methods.to_vec(),
            endpoint: Route::Edit.path().into(),
            priority,
        };
        Self::new(vec![
            tool("magicbrush", Modality::TextGuided, &[AddObject, RemoveObject], 10),
            tool("plug_and_play", Modality::TextGuided, &[ChangeBackground], 11),
            tool("guide", Modality::TextGuided, &[ChangeExpression], 12),
            tool("ip2p", Modality::TextGuided, &[ChangeFilter], 13),
            tool("rf_solver_edit", Modality::TextGuided, &[ChangeAttribute, ReplaceObject], 14),
            tool("sdxl_inpainting", Modality::TextAndMask, &[ReplaceObject, RemoveObject], 20),
            tool("mag_edit", Modality::TextAndMask, &[ChangeAttribute], 21),
            tool("mimicbrush", Modality::MaskAndReference, &[AddObject, ReplaceObject], 30),
        ])
        .expect("default table is valid")
    }

    pub fn tools(&self) -> &[ToolDescriptor] {
        &self.tools
    }

    pub fn get(&self, name: &str) -> Option<&ToolDescriptor> {
        self.tools.iter().find(|t| t.name == name)
    }

    /// Removes every tool supporting `method`; used to exercise the
    /// unavailable-tool path.
    pub fn without_method(&self, method: EditingMethod) -> Self {
        Self {
            tools: self.tools.iter().filter(|t| !t.supports(method)).cloned().collect(),
        }
    }

    /// Tools supporting `method` in preference order. Mask-based modalities
    /// lead when `masked` is set (a region is named and a prior can be
    /// obtained); text-guided tools lead otherwise. Ties go to the lower rank.
    pub fn candidates(&self, method: EditingMethod, masked: bool) -> Vec<&ToolDescriptor> {
        let modality_rank = |m: Modality| match (masked, m) {
            (true, Modality::TextAndMask) => 0,
            (true, Modality::MaskAndReference) => 1,
            (true, Modality::TextGuided) => 2,
            (false, Modality::TextGuided) => 0,
            (false, Modality::TextAndMask) => 1,
            (false, Modality::MaskAndReference) => 2,
        };
        let mut out: Vec<_> = self.tools.iter().filter(|t| t.supports(method)).collect();
        out.sort_by_key(|t| (modality_rank(t.modality), t.priority, t.name.clone()));
        out
    }
}

/// Picks the tool for an instruction. `prior_obtainable` says whether
/// detection and segmentation backends are available.
pub fn select_tool<'r>(
    registry: &'r ToolRegistry,
    instruction: &Instruction,
    prior_obtainable: bool,
) -> Result<&'r ToolDescriptor, EditingError> {
    let masked = instruction.region_hint.is_some() && prior_obtainable;
    registry
        .candidates(instruction.method, masked)
        .into_iter()
        .next()
        .ok_or(EditingError::ToolUnavailable(instruction.method))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    Detection,
    Segmentation,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialPrior {
    pub mask: RleMask,
    pub source: PriorSource,
    pub target_entity: String,
}

impl SpatialPrior {
    pub fn none(width: u32, height: u32, target_entity: impl Into<String>) -> Self {
        Self {
            mask: RleMask::empty(width, height),
            source: PriorSource::None,
            target_entity: target_entity.into(),
        }
    }

    pub fn is_none(&self) -> bool {
        self.source == PriorSource::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pre,
    Edit,
    Val,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Failed,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pre => "pre",
            Stage::Edit => "edit",
            Stage::Val => "val",
        }
    }
}

impl StageStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            StageStatus::Ok => "ok",
            StageStatus::Failed => "failed",
        }
    }
}

impl fmt::Display for StageStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Zero-based attempt number within the instruction.
    pub attempt: u32,
    pub stage: Stage,
    pub tool: String,
    pub status: StageStatus,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionTrace {
    pub instruction_index: u32,
    /// Directive text of the final attempt; differs from the plan text after a revision.
    pub directive: String,
    pub attempts: Vec<StageRecord>,
    pub final_status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_hash: Option<String>,
}

impl ActionTrace {
    /// Number of edit-backend calls recorded.
    pub fn edit_calls(&self) -> usize {
        self.attempts.iter().filter(|a| a.stage == Stage::Edit).count()
    }

    /// Retries consumed: the highest attempt number recorded.
    pub fn retries(&self) -> usize {
        self.attempts.iter().map(|a| a.attempt as usize).max().unwrap_or(0)
    }

    /// Detail of the last failed stage, if any.
    pub fn failure_reason(&self) -> Option<&str> {
        self.attempts
            .iter()
            .rev()
            .find(|a| a.status == StageStatus::Failed)
            .map(|a| a.detail.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::ElementKind;
    use crate::planning::ElementRef;

    fn ins(kind: ElementKind, method: EditingMethod, hint: Option<&str>) -> Instruction {
        Instruction::new(1, ElementRef::free_text("x", kind), method, hint.map(String::from)).unwrap()
    }

    #[test]
    fn default_table_covers_every_method() {
        ToolRegistry::default_table().validate_coverage().unwrap();
    }

    #[test]
    fn filter_goes_to_text_guided_tool() {
        let r = ToolRegistry::default_table();
        let t = select_tool(&r, &ins(ElementKind::ColorTone, EditingMethod::ChangeFilter, None), true).unwrap();
        assert_eq!(t.name, "ip2p");
        assert_eq!(t.modality, Modality::TextGuided);
    }

    #[test]
    fn replacement_with_region_prefers_masked_tool() {
        let r = ToolRegistry::default_table();
        let i = ins(ElementKind::Object, EditingMethod::ReplaceObject, Some("dog"));
        assert_eq!(select_tool(&r, &i, true).unwrap().name, "sdxl_inpainting");
        assert_eq!(select_tool(&r, &i, false).unwrap().name, "rf_solver_edit");
        let order: Vec<_> = r.candidates(EditingMethod::ReplaceObject, true).iter().map(|t| t.name.as_str()).collect();
        assert_eq!(order, ["sdxl_inpainting", "mimicbrush", "rf_solver_edit"]);
    }

    #[test]
    fn stripped_registry_reports_unavailable() {
        let r = ToolRegistry::default_table().without_method(EditingMethod::ChangeExpression);
        let i = ins(ElementKind::FacialExpression, EditingMethod::ChangeExpression, None);
        assert!(matches!(select_tool(&r, &i, true), Err(EditingError::ToolUnavailable(_))));
        assert!(r.validate_coverage().is_err());
    }

    #[test]
    fn registry_rejects_shared_priority() {
        let mut tools = ToolRegistry::default_table().tools().to_vec();
        tools[1].supported_methods.push(EditingMethod::AddObject);
        tools[1].priority = tools[0].priority;
        assert!(ToolRegistry::new(tools).is_err());
    }
}
