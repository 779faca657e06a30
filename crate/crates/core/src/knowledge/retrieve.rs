use std::collections::HashMap;

use super::distance::{l2_distance, VectorError};
use super::{EmotionFactorTree, FactorNode, KnowledgeError};
use crate::emotion::Emotion;

pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_PER_KIND_CAP: usize = 2;

/// Nearest factor nodes of `target` to `query`, ascending by L2 distance
/// with ties on node id. At most `per_kind_cap` nodes of any one element
/// kind are kept; over-cap nodes are skipped and later kinds fill in.
pub fn retrieve<'t>(
    tree: &'t EmotionFactorTree,
    query: &[f64],
    target: Emotion,
    k: usize,
    per_kind_cap: usize,
) -> Result<Vec<&'t FactorNode>, KnowledgeError> {
    if k == 0 {
        return Err(KnowledgeError::InvalidQuery("k must be at least 1".into()));
    }
    if query.len() != tree.dimension() {
        return Err(VectorError::DimensionMismatch {
            left: query.len(),
            right: tree.dimension(),
        }
        .into());
    }
    let mut scored = tree
        .nodes_for(target)
        .map(|n| Ok((l2_distance(&n.embedding, query)?, n)))
        .collect::<Result<Vec<_>, VectorError>>()?;
    if scored.is_empty() {
        return Err(KnowledgeError::EmptyKnowledgeBase(target));
    }
    scored.sort_by(|(da, a), (db, b)| da.total_cmp(db).then_with(|| a.id.cmp(&b.id)));

    let mut per_kind = HashMap::new();
    let mut out = Vec::with_capacity(k);
    for (_, node) in scored {
        let used = per_kind.entry(node.kind).or_insert(0usize);
        if *used >= per_kind_cap {
            continue;
        }
        *used += 1;
        out.push(node);
        if out.len() == k {
            break;
        }
    }
    Ok(out)
}
