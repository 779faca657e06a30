//! Planning agent: scene analysis and construction of K distinct edit plans
//! over the emotion / element / method decision space.

mod generate;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, Entity};
use crate::emotion::EmotionLabel;
use crate::knowledge::{ElementKind, FactorNode, KnowledgeError};

pub use generate::{analyze, generate_plans, PlanningOptions, DEFAULT_K, DEFAULT_N_MAX};

#[derive(Debug, thiserror::Error)]
pub enum PlanningError {
    #[error("method {method} cannot edit an element of kind {kind}")]
    IncompatiblePair {
        kind: ElementKind,
        method: EditingMethod,
    },
    #[error("planning failed: {0}")]
    PlanningFailed(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("invalid planning input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Artifact(#[from] crate::artifact::ArtifactError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditingMethod {
    ReplaceObject,
    AddObject,
    RemoveObject,
    ChangeExpression,
    ChangeFilter,
    ChangeBackground,
    ChangeAttribute,
}

impl EditingMethod {
    pub const ALL: [EditingMethod; 7] = [
        EditingMethod::ReplaceObject,
        EditingMethod::AddObject,
        EditingMethod::RemoveObject,
        EditingMethod::ChangeExpression,
        EditingMethod::ChangeFilter,
        EditingMethod::ChangeBackground,
        EditingMethod::ChangeAttribute,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EditingMethod::ReplaceObject => "replace_object",
            EditingMethod::AddObject => "add_object",
            EditingMethod::RemoveObject => "remove_object",
            EditingMethod::ChangeExpression => "change_expression",
            EditingMethod::ChangeFilter => "change_filter",
            EditingMethod::ChangeBackground => "change_background",
            EditingMethod::ChangeAttribute => "change_attribute",
        }
    }

    /// Whether the template mentions the region being edited.
    pub fn uses_region(self) -> bool {
        matches!(
            self,
            EditingMethod::ReplaceObject | EditingMethod::ChangeAttribute
        )
    }
}

impl fmt::Display for EditingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Element kind / editing method compatibility matrix.
pub fn compatible_methods(kind: ElementKind) -> &'static [EditingMethod] {
    use EditingMethod::*;
    match kind {
        ElementKind::Object => &[ReplaceObject, AddObject, RemoveObject, ChangeAttribute],
        ElementKind::BackgroundScene => &[ChangeBackground],
        ElementKind::FacialExpression => &[ChangeExpression],
        ElementKind::ColorTone => &[ChangeFilter],
        ElementKind::Attribute => &[ChangeAttribute],
        ElementKind::Action => &[AddObject, ChangeAttribute],
    }
}

pub fn check_compatible(kind: ElementKind, method: EditingMethod) -> Result<(), PlanningError> {
    if compatible_methods(kind).contains(&method) {
        Ok(())
    } else {
        Err(PlanningError::IncompatiblePair { kind, method })
    }
}

/// Directive text for an (element, method) pair.
pub fn format_instruction(
    description: &str,
    kind: ElementKind,
    method: EditingMethod,
    region_hint: Option<&str>,
) -> Result<String, PlanningError> {
    check_compatible(kind, method)?;
    let desc = description.trim();
    if desc.is_empty() {
        return Err(PlanningError::InvalidInput("element description is empty".into()));
    }
    let region = region_hint.map(str::trim).filter(|r| !r.is_empty()).unwrap_or("the object");
    Ok(match method {
        EditingMethod::ChangeBackground => format!("replace the background with {desc}"),
        EditingMethod::AddObject => format!("add {desc} to the scene"),
        EditingMethod::RemoveObject => format!("remove {desc}"),
        EditingMethod::ReplaceObject => format!("replace {region} with {desc}"),
        EditingMethod::ChangeExpression => format!("change the facial expression to {desc}"),
        EditingMethod::ChangeFilter => format!("apply a {desc} color tone"),
        EditingMethod::ChangeAttribute => format!("change {region} to be {desc}"),
    })
}

/// Where an instruction's element came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ElementRef {
    Factor {
        node_id: String,
        description: String,
        kind: ElementKind,
    },
    FreeText {
        description: String,
        kind: ElementKind,
    },
}

impl ElementRef {
    pub fn factor(node: &FactorNode) -> Self {
        ElementRef::Factor {
            node_id: node.id.clone(),
            description: node.description.clone(),
            kind: node.kind,
        }
    }

    pub fn free_text(description: impl Into<String>, kind: ElementKind) -> Self {
        ElementRef::FreeText {
            description: description.into(),
            kind,
        }
    }

    /// Identity used for plan distinctness: node id, or `text:<description>`.
    pub fn key(&self) -> String {
        match self {
            ElementRef::Factor { node_id, .. } => node_id.clone(),
            ElementRef::FreeText { description, .. } => format!("text:{description}"),
        }
    }

    pub fn description(&self) -> &str {
        match self {
            ElementRef::Factor { description, .. } | ElementRef::FreeText { description, .. } => {
                description
            }
        }
    }

    pub fn kind(&self) -> ElementKind {
        match self {
            ElementRef::Factor { kind, .. } | ElementRef::FreeText { kind, .. } => *kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub index: u32,
    pub element: ElementRef,
    pub method: EditingMethod,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_hint: Option<String>,
}

impl Instruction {
    pub fn new(
        index: u32,
        element: ElementRef,
        method: EditingMethod,
        region_hint: Option<String>,
    ) -> Result<Self, PlanningError> {
        let text = format_instruction(
            element.description(),
            element.kind(),
            method,
            region_hint.as_deref(),
        )?;
        Ok(Self {
            index,
            element,
            method,
            text,
            region_hint,
        })
    }

    pub fn pair_key(&self) -> (String, EditingMethod) {
        (self.element.key(), self.method)
    }

    pub fn validate(&self) -> Result<(), PlanningError> {
        check_compatible(self.element.kind(), self.method)?;
        if self.text.trim().is_empty() {
            return Err(PlanningError::InvalidPlan(format!(
                "instruction {} has empty text",
                self.index
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditPlan {
    pub plan_id: u32,
    pub instructions: Vec<Instruction>,
    pub rationale: String,
}

impl EditPlan {
    /// Sorted (element key, method) multiset; two plans are distinct iff these differ.
    pub fn signature(&self) -> Vec<(String, EditingMethod)> {
        let mut sig: Vec<_> = self.instructions.iter().map(Instruction::pair_key).collect();
        sig.sort();
        sig
    }

    pub fn validate(&self, n_max: usize) -> Result<(), PlanningError> {
        let n = self.instructions.len();
        if n == 0 || n > n_max {
            return Err(PlanningError::InvalidPlan(format!(
                "plan {} has {n} instructions; expected 1..={n_max}",
                self.plan_id
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, ins) in self.instructions.iter().enumerate() {
            if ins.index as usize != i + 1 {
                return Err(PlanningError::InvalidPlan(format!(
                    "plan {} instruction {} has index {}",
                    self.plan_id,
                    i + 1,
                    ins.index
                )));
            }
            ins.validate()?;
            if !seen.insert(ins.pair_key()) {
                return Err(PlanningError::InvalidPlan(format!(
                    "plan {} repeats element {} with {}",
                    self.plan_id,
                    ins.element.key(),
                    ins.method
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSet {
    pub plans: Vec<EditPlan>,
    pub target_emotion: EmotionLabel,
}

impl PlanSet {
    /// First pair of plans `(a, b)` with equal signatures, if any.
    pub fn duplicate(&self) -> Option<(u32, u32)> {
        let sigs: Vec<_> = self.plans.iter().map(EditPlan::signature).collect();
        for i in 0..sigs.len() {
            for j in i + 1..sigs.len() {
                if sigs[i] == sigs[j] {
                    return Some((self.plans[i].plan_id, self.plans[j].plan_id));
                }
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticCues {
    pub scene_summary: String,
    pub entities: Vec<Entity>,
    pub source_emotion: EmotionLabel,
    pub source_confidence: f64,
    pub cue_embedding: Vec<f64>,
}

impl SemanticCues {
    /// Entity names by descending salience, ties by name.
    pub fn ranked_entities(&self) -> Vec<&str> {
        let mut es: Vec<&Entity> = self.entities.iter().collect();
        es.sort_by(|a, b| b.salience.total_cmp(&a.salience).then_with(|| a.name.cmp(&b.name)));
        es.into_iter().map(|e| e.name.as_str()).collect()
    }
}
