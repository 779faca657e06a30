//! Emotion-factor knowledge base.
//!
//! Exemplar embeddings are clustered per emotion with average-linkage
//! agglomeration, filtered, summarized by a description backend and stored
//! as [`FactorNode`]s. Retrieval ranks the nodes of one emotion by L2
//! distance to a query embedding under a per-kind diversity cap.

mod cluster;
pub mod distance;
mod retrieve;
mod store;

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use cluster::{agglomerate, build_tree, Merge};
pub use distance::{cosine_similarity, l2_distance, VectorError};
pub use retrieve::{retrieve, DEFAULT_PER_KIND_CAP, DEFAULT_TOP_K};
pub use store::{load_tree, save_tree, tree_file_name};

use crate::backends::BackendError;
use crate::emotion::Emotion;

#[derive(Debug, thiserror::Error)]
pub enum KnowledgeError {
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("knowledge base has no factors for emotion {0}")]
    EmptyKnowledgeBase(Emotion),
    #[error("invalid cluster parameters: {0}")]
    InvalidParams(String),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation in {file} at `{field}`: {detail}")]
    SchemaViolation {
        file: String,
        field: String,
        detail: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Object,
    BackgroundScene,
    Action,
    FacialExpression,
    ColorTone,
    Attribute,
}

impl ElementKind {
    pub const ALL: [ElementKind; 6] = [
        ElementKind::Object,
        ElementKind::BackgroundScene,
        ElementKind::Action,
        ElementKind::FacialExpression,
        ElementKind::ColorTone,
        ElementKind::Attribute,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::Object => "object",
            ElementKind::BackgroundScene => "background_scene",
            ElementKind::Action => "action",
            ElementKind::FacialExpression => "facial_expression",
            ElementKind::ColorTone => "color_tone",
            ElementKind::Attribute => "attribute",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == name)
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub cluster_id: u32,
    pub cluster_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorNode {
    pub id: String,
    pub emotion: Emotion,
    pub kind: ElementKind,
    pub description: String,
    pub embedding: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    /// Agglomeration stops once no pair of clusters reaches this average cosine similarity.
    pub merge_threshold: f64,
    pub min_cluster_size: usize,
    /// Clusters whose median pairwise perceptual-hash distance (bits) falls below this are redundant.
    pub redundancy_distance_min: f64,
    pub relevance_required: bool,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            merge_threshold: 0.89,
            min_cluster_size: 5,
            redundancy_distance_min: 8.0,
            relevance_required: false,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<(), KnowledgeError> {
        if !(self.merge_threshold > 0.0 && self.merge_threshold <= 1.0) {
            return Err(KnowledgeError::InvalidParams(format!(
                "merge_threshold {} outside (0, 1]",
                self.merge_threshold
            )));
        }
        if self.min_cluster_size < 1 {
            return Err(KnowledgeError::InvalidParams(
                "min_cluster_size must be at least 1".into(),
            ));
        }
        if !self.redundancy_distance_min.is_finite() || self.redundancy_distance_min < 0.0 {
            return Err(KnowledgeError::InvalidParams(
                "redundancy_distance_min must be a non-negative number".into(),
            ));
        }
        Ok(())
    }
}

/// 64-bit perceptual hash, serialized as 16 hex digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PerceptualHash(pub u64);

impl PerceptualHash {
    pub fn hamming(self, other: PerceptualHash) -> u32 {
        (self.0 ^ other.0).count_ones()
    }
}

impl Serialize for PerceptualHash {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{:016x}", self.0))
    }
}

impl<'de> Deserialize<'de> for PerceptualHash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        if raw.len() != 16 {
            return Err(serde::de::Error::custom("perceptual hash must be 16 hex digits"));
        }
        u64::from_str_radix(&raw, 16)
            .map(PerceptualHash)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarItem {
    pub id: String,
    pub emotion: Emotion,
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perceptual_hash: Option<PerceptualHash>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmotionFactorTree {
    nodes: Vec<FactorNode>,
    dimension: usize,
    build_params: ClusterParams,
}

impl EmotionFactorTree {
    pub fn new(
        nodes: Vec<FactorNode>,
        dimension: usize,
        build_params: ClusterParams,
    ) -> Result<Self, KnowledgeError> {
        build_params.validate()?;
        let mut seen = HashSet::new();
        for n in &nodes {
            if !seen.insert(n.id.as_str()) {
                return Err(KnowledgeError::InvalidTree(format!("duplicate node id {}", n.id)));
            }
            if n.description.trim().is_empty() {
                return Err(KnowledgeError::InvalidTree(format!(
                    "node {} has an empty description",
                    n.id
                )));
            }
            if n.embedding.len() != dimension {
                return Err(VectorError::DimensionMismatch {
                    left: n.embedding.len(),
                    right: dimension,
                }
                .into());
            }
            if n.embedding.iter().any(|x| !x.is_finite()) {
                return Err(KnowledgeError::InvalidTree(format!(
                    "node {} has a non-finite embedding",
                    n.id
                )));
            }
            if n.provenance.cluster_size < build_params.min_cluster_size {
                return Err(KnowledgeError::InvalidTree(format!(
                    "node {} cluster size {} below minimum {}",
                    n.id, n.provenance.cluster_size, build_params.min_cluster_size
                )));
            }
        }
        Ok(Self {
            nodes,
            dimension,
            build_params,
        })
    }

    pub fn empty(dimension: usize, build_params: ClusterParams) -> Self {
        Self {
            nodes: Vec::new(),
            dimension,
            build_params,
        }
    }

    pub fn nodes(&self) -> &[FactorNode] {
        &self.nodes
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn build_params(&self) -> &ClusterParams {
        &self.build_params
    }

    pub fn nodes_for(&self, emotion: Emotion) -> impl Iterator<Item = &FactorNode> {
        self.nodes.iter().filter(move |n| n.emotion == emotion)
    }

    pub fn node(&self, id: &str) -> Option<&FactorNode> {
        self.nodes.iter().find(|n| n.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: &str, size: usize) -> FactorNode {
        FactorNode {
            id: id.into(),
            emotion: Emotion::Awe,
            kind: ElementKind::Object,
            description: "a lighthouse".into(),
            embedding: vec![1.0, 0.0],
            provenance: Provenance {
                cluster_id: 0,
                cluster_size: size,
            },
        }
    }

    #[test]
    fn tree_rejects_duplicates_and_undersized_clusters() {
        let p = ClusterParams::default();
        assert!(EmotionFactorTree::new(vec![node("a", 5), node("a", 5)], 2, p).is_err());
        assert!(EmotionFactorTree::new(vec![node("a", 4)], 2, p).is_err());
        assert!(EmotionFactorTree::new(vec![node("a", 5)], 3, p).is_err());
        assert!(EmotionFactorTree::new(vec![node("a", 5)], 2, p).is_ok());
    }

    #[test]
    fn params_validation() {
        let mut p = ClusterParams::default();
        p.merge_threshold = 0.0;
        assert!(p.validate().is_err());
        p.merge_threshold = 1.0;
        p.min_cluster_size = 0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn perceptual_hash_serde() {
        let h = PerceptualHash(0xdead_beef);
        let s = serde_json::to_string(&h).unwrap();
        assert_eq!(s, "\"00000000deadbeef\"");
        assert_eq!(serde_json::from_str::<PerceptualHash>(&s).unwrap(), h);
        assert_eq!(PerceptualHash(0b1011).hamming(PerceptualHash(0b0001)), 2);
    }
}
