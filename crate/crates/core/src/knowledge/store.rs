//! One JSON document per emotion category:
//!
//! ```json
//! {"emotion": "awe", "dimension": 8, "build_params": {...},
//!  "nodes": [{"id", "kind", "description", "embedding": [...], "provenance": {...}}]}
//! ```

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use super::{
    ClusterParams, ElementKind, EmotionFactorTree, FactorNode, KnowledgeError, Provenance,
};
use crate::emotion::Emotion;

pub fn tree_file_name(emotion: Emotion) -> String {
    format!("{emotion}.json")
}

#[derive(Serialize)]
struct NodeDoc<'a> {
    id: &'a str,
    kind: ElementKind,
    description: &'a str,
    embedding: &'a [f64],
    provenance: Provenance,
}

#[derive(Serialize)]
struct FileDoc<'a> {
    emotion: Emotion,
    dimension: usize,
    build_params: ClusterParams,
    nodes: Vec<NodeDoc<'a>>,
}

/// Writes all eight emotion files into `dir`, including empty ones, so the
/// tree's dimension and build parameters survive a round trip.
pub fn save_tree(tree: &EmotionFactorTree, dir: &Path) -> Result<(), KnowledgeError> {
    let io = |source| KnowledgeError::Io {
        path: dir.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(io)?;
    for emotion in Emotion::ALL {
        let doc = FileDoc {
            emotion,
            dimension: tree.dimension(),
            build_params: *tree.build_params(),
            nodes: tree
                .nodes_for(emotion)
                .map(|n| NodeDoc {
                    id: &n.id,
                    kind: n.kind,
                    description: &n.description,
                    embedding: &n.embedding,
                    provenance: n.provenance,
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("tree serializes");
        text.push('\n');
        let path = dir.join(tree_file_name(emotion));
        fs::write(&path, text).map_err(|source| KnowledgeError::Io { path, source })?;
    }
    Ok(())
}

struct Schema<'a> {
    file: &'a str,
}

impl Schema<'_> {
    fn violation(&self, field: &str, detail: impl Into<String>) -> KnowledgeError {
        KnowledgeError::SchemaViolation {
            file: self.file.to_string(),
            field: field.to_string(),
            detail: detail.into(),
        }
    }

    fn object<'v>(&self, v: &'v Value, path: &str) -> Result<&'v Map<String, Value>, KnowledgeError> {
        v.as_object()
            .ok_or_else(|| self.violation(path, "expected an object"))
    }

    fn field<'v>(
        &self,
        m: &'v Map<String, Value>,
        parent: &str,
        name: &str,
    ) -> Result<(&'v Value, String), KnowledgeError> {
        let path = if parent.is_empty() {
            name.to_string()
        } else {
            format!("{parent}.{name}")
        };
        match m.get(name) {
            Some(v) => Ok((v, path)),
            None => Err(self.violation(&path, "missing field")),
        }
    }

    fn string(&self, v: &Value, path: &str) -> Result<String, KnowledgeError> {
        v.as_str()
            .map(str::to_string)
            .ok_or_else(|| self.violation(path, "expected a string"))
    }

    fn count(&self, v: &Value, path: &str) -> Result<u64, KnowledgeError> {
        v.as_u64()
            .ok_or_else(|| self.violation(path, "expected a non-negative integer"))
    }

    fn number(&self, v: &Value, path: &str) -> Result<f64, KnowledgeError> {
        v.as_f64()
            .ok_or_else(|| self.violation(path, "expected a number"))
    }
}

fn parse_file(
    file: &str,
    doc: &Value,
) -> Result<(Emotion, usize, ClusterParams, Vec<FactorNode>), KnowledgeError> {
    let s = Schema { file };
    let root = s.object(doc, "$")?;
    let (v, p) = s.field(root, "", "emotion")?;
    let emotion_name = s.string(v, &p)?;
    let emotion = Emotion::from_name(&emotion_name)
        .ok_or_else(|| s.violation(&p, format!("{emotion_name:?} is not an in-domain emotion")))?;
    let (v, p) = s.field(root, "", "dimension")?;
    let dimension = s.count(v, &p)? as usize;

    let (v, p) = s.field(root, "", "build_params")?;
    let bp = s.object(v, &p)?;
    let (v, q) = s.field(bp, &p, "merge_threshold")?;
    let merge_threshold = s.number(v, &q)?;
    let (v, q) = s.field(bp, &p, "min_cluster_size")?;
    let min_cluster_size = s.count(v, &q)? as usize;
    let (v, q) = s.field(bp, &p, "redundancy_distance_min")?;
    let redundancy_distance_min = s.number(v, &q)?;
    let (v, q) = s.field(bp, &p, "relevance_required")?;
    let relevance_required = v
        .as_bool()
        .ok_or_else(|| s.violation(&q, "expected a boolean"))?;
    let params = ClusterParams {
        merge_threshold,
        min_cluster_size,
        redundancy_distance_min,
        relevance_required,
    };

    let (v, p) = s.field(root, "", "nodes")?;
    let arr = v
        .as_array()
        .ok_or_else(|| s.violation(&p, "expected an array"))?;
    let mut nodes = Vec::with_capacity(arr.len());
    for (i, raw) in arr.iter().enumerate() {
        let np = format!("nodes[{i}]");
        let n = s.object(raw, &np)?;
        let (v, p) = s.field(n, &np, "id")?;
        let id = s.string(v, &p)?;
        let (v, p) = s.field(n, &np, "kind")?;
        let kind_name = s.string(v, &p)?;
        let kind = ElementKind::from_name(&kind_name)
            .ok_or_else(|| s.violation(&p, format!("unknown element kind {kind_name:?}")))?;
        let (v, p) = s.field(n, &np, "description")?;
        let description = s.string(v, &p)?;
        let (v, p) = s.field(n, &np, "embedding")?;
        let embedding = v
            .as_array()
            .ok_or_else(|| s.violation(&p, "expected an array of numbers"))?
            .iter()
            .enumerate()
            .map(|(j, x)| s.number(x, &format!("{p}[{j}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let (v, p) = s.field(n, &np, "provenance")?;
        let prov = s.object(v, &p)?;
        let (v, q) = s.field(prov, &p, "cluster_id")?;
        let cluster_id = u32::try_from(s.count(v, &q)?)
            .map_err(|_| s.violation(&q, "cluster id out of range"))?;
        let (v, q) = s.field(prov, &p, "cluster_size")?;
        let cluster_size = s.count(v, &q)? as usize;
        nodes.push(FactorNode {
            id,
            emotion,
            kind,
            description,
            embedding,
            provenance: Provenance {
                cluster_id,
                cluster_size,
            },
        });
    }
    Ok((emotion, dimension, params, nodes))
}

/// Loads every emotion file present in `dir`. Files must agree on dimension
/// and build parameters, and each file's `emotion` must match its name.
pub fn load_tree(dir: &Path) -> Result<EmotionFactorTree, KnowledgeError> {
    let mut header: Option<(usize, ClusterParams)> = None;
    let mut nodes = Vec::new();
    for emotion in Emotion::ALL {
        let name = tree_file_name(emotion);
        let path = dir.join(&name);
        if !path.exists() {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|source| KnowledgeError::Io {
            path: path.clone(),
            source,
        })?;
        let doc: Value = serde_json::from_str(&text).map_err(|e| KnowledgeError::SchemaViolation {
            file: name.clone(),
            field: "$".into(),
            detail: e.to_string(),
        })?;
        let (declared, dimension, params, file_nodes) = parse_file(&name, &doc)?;
        let violation = |field: &str, detail: String| KnowledgeError::SchemaViolation {
            file: name.clone(),
            field: field.into(),
            detail,
        };
        if declared != emotion {
            return Err(violation("emotion", format!("file declares {declared}")));
        }
        match header {
            None => header = Some((dimension, params)),
            Some((d, p)) => {
                if d != dimension {
                    return Err(violation("dimension", format!("{dimension} differs from {d}")));
                }
                if p != params {
                    return Err(violation("build_params", "differs between files".into()));
                }
            }
        }
        nodes.extend(file_nodes);
    }
    let (dimension, params) = header.ok_or_else(|| KnowledgeError::Io {
        path: dir.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "no emotion files found"),
    })?;
    EmotionFactorTree::new(nodes, dimension, params)
}
