//! Average-linkage agglomeration over cosine similarity and the tree build
//! pipeline that turns surviving clusters into factor nodes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::distance::{cosine_similarity, normalize, VectorError};
use super::{
    ClusterParams, EmotionFactorTree, ExemplarItem, FactorNode, KnowledgeError, Provenance,
};
use crate::backends::{DescribeRequest, DescriptionBackend};
use crate::emotion::Emotion;

/// Mean relevance a cluster needs when the relevance filter is active.
pub const RELEVANCE_PASS_SCORE: f64 = 0.5;

/// One agglomeration step. The merged cluster keeps the smaller id `keep`,
/// which is always the smallest member index of the merged cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub keep: usize,
    pub absorbed: usize,
    pub similarity: f64,
    pub size: usize,
}

/// Condensed upper-triangular similarity matrix.
struct SimMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SimMatrix {
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }
}

#[derive(Clone, Copy)]
struct RowBest {
    sim: f64,
    col: usize,
}

/// Runs average-linkage agglomeration until the best pair falls below
/// `threshold`. Returns the merge sequence and the final clusters, each a
/// sorted member list, ordered by their smallest member.
///
/// Ties are broken toward the lexicographically smallest `(keep, absorbed)` pair.
pub fn agglomerate(
    embeddings: &[Vec<f64>],
    threshold: f64,
) -> Result<(Vec<Merge>, Vec<Vec<usize>>), VectorError> {
    let n = embeddings.len();
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut sims = SimMatrix {
        n,
        data: vec![0.0; n * (n - 1) / 2],
    };
    for i in 0..n {
        for j in i + 1..n {
            sims.set(i, j, cosine_similarity(&embeddings[i], &embeddings[j])?);
        }
    }
    if n == 1 {
        // still validate the lone vector
        cosine_similarity(&embeddings[0], &embeddings[0])?;
    }

    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut best: Vec<Option<RowBest>> = vec![None; n];

    let row_best = |sims: &SimMatrix, active: &[bool], i: usize| -> Option<RowBest> {
        let mut out: Option<RowBest> = None;
        for j in i + 1..n {
            if !active[j] {
                continue;
            }
            let s = sims.get(i, j);
            if out.is_none_or(|b| s > b.sim) {
                out = Some(RowBest { sim: s, col: j });
            }
        }
        out
    };
    for (i, slot) in best.iter_mut().enumerate() {
        *slot = row_best(&sims, &active, i);
    }

    let mut merges = Vec::new();
    loop {
        let mut pick: Option<(usize, RowBest)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            if let Some(b) = best[i] {
                if pick.is_none_or(|(_, p)| b.sim > p.sim) {
                    pick = Some((i, b));
                }
            }
        }
        let Some((a, RowBest { sim, col: b })) = pick else {
            break;
        };
        if sim < threshold {
            break;
        }

        let (na, nb) = (size[a] as f64, size[b] as f64);
        active[b] = false;
        for k in 0..n {
            if !active[k] || k == a {
                continue;
            }
            let merged = (na * sims.get(a, k) + nb * sims.get(b, k)) / (na + nb);
            sims.set(a, k, merged);
        }
        size[a] += size[b];
        let absorbed = std::mem::take(&mut members[b]);
        members[a].extend(absorbed);
        members[a].sort_unstable();
        best[b] = None;
        merges.push(Merge {
            keep: a,
            absorbed: b,
            similarity: sim,
            size: size[a],
        });

        best[a] = row_best(&sims, &active, a);
        for i in 0..n {
            if !active[i] || i == a {
                continue;
            }
            match best[i] {
                Some(rb) if rb.col == a || rb.col == b => best[i] = row_best(&sims, &active, i),
                Some(rb) if i < a => {
                    let s = sims.get(i, a);
                    if s > rb.sim || (s == rb.sim && a < rb.col) {
                        best[i] = Some(RowBest { sim: s, col: a });
                    }
                }
                _ => {}
            }
        }
    }

    let clusters = (0..n)
        .filter(|&i| active[i])
        .map(|i| members[i].clone())
        .collect();
    Ok((merges, clusters))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len() / 2;
    if values.len() % 2 == 0 {
        (values[m - 1] + values[m]) / 2.0
    } else {
        values[m]
    }
}

/// True when every member carries a perceptual hash and the median pairwise
/// Hamming distance is below the redundancy floor.
fn is_redundant(members: &[&ExemplarItem], params: &ClusterParams) -> bool {
    let hashes: Option<Vec<_>> = members.iter().map(|m| m.perceptual_hash).collect();
    let Some(hashes) = hashes else {
        return false;
    };
    if hashes.len() < 2 {
        return false;
    }
    let mut dists = Vec::with_capacity(hashes.len() * (hashes.len() - 1) / 2);
    for i in 0..hashes.len() {
        for j in i + 1..hashes.len() {
            dists.push(f64::from(hashes[i].hamming(hashes[j])));
        }
    }
    median(&mut dists) < params.redundancy_distance_min
}

fn is_relevant(members: &[&ExemplarItem]) -> bool {
    let scores: Vec<f64> = members.iter().filter_map(|m| m.relevance_score).collect();
    if scores.is_empty() {
        return false;
    }
    scores.iter().sum::<f64>() / scores.len() as f64 >= RELEVANCE_PASS_SCORE
}

fn centroid(members: &[&ExemplarItem], dim: usize) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    for m in members {
        for (acc, x) in c.iter_mut().zip(&m.embedding) {
            *acc += x;
        }
    }
    let n = members.len() as f64;
    c.iter_mut().for_each(|x| *x /= n);
    normalize(&mut c);
    c
}

fn build_emotion(
    emotion: Emotion,
    items: &[&ExemplarItem],
    params: &ClusterParams,
    dim: usize,
    describe: &dyn DescriptionBackend,
) -> Result<Vec<FactorNode>, KnowledgeError> {
    let embeddings: Vec<Vec<f64>> = items.iter().map(|i| i.embedding.clone()).collect();
    let (_, clusters) = agglomerate(&embeddings, params.merge_threshold)?;

    let mut nodes = Vec::new();
    for cluster in clusters {
        if cluster.len() < params.min_cluster_size {
            continue;
        }
        let members: Vec<&ExemplarItem> = cluster.iter().map(|&i| items[i]).collect();
        if is_redundant(&members, params) {
            continue;
        }
        if params.relevance_required && !is_relevant(&members) {
            continue;
        }
        let cluster_id = cluster[0] as u32;
        let summary = describe.describe(&DescribeRequest {
            emotion,
            cluster_id,
            members: members.iter().map(|m| m.id.clone()).collect(),
        })?;
        nodes.push(FactorNode {
            id: format!("{emotion}-{cluster_id:05}"),
            emotion,
            kind: summary.kind,
            description: summary.description,
            embedding: centroid(&members, dim),
            provenance: Provenance {
                cluster_id,
                cluster_size: members.len(),
            },
        });
    }
    Ok(nodes)
}

/// Clusters the exemplars of each emotion and materializes the surviving
/// clusters as factor nodes. Emotions are processed independently and in
/// parallel; output order is canonical emotion order, then cluster id.
pub fn build_tree(
    items: &[ExemplarItem],
    params: &ClusterParams,
    describe: &dyn DescriptionBackend,
) -> Result<EmotionFactorTree, KnowledgeError> {
    params.validate()?;
    let dim = items.first().map_or(0, |i| i.embedding.len());
    for item in items {
        if item.embedding.len() != dim {
            return Err(VectorError::DimensionMismatch {
                left: item.embedding.len(),
                right: dim,
            }
            .into());
        }
        if item.embedding.iter().any(|x| !x.is_finite()) {
            return Err(KnowledgeError::InvalidTree(format!(
                "exemplar {} has a non-finite embedding",
                item.id
            )));
        }
    }

    let per_emotion: Vec<Result<Vec<FactorNode>, KnowledgeError>> = Emotion::ALL
        .par_iter()
        .map(|&emotion| {
            let group: Vec<&ExemplarItem> = items.iter().filter(|i| i.emotion == emotion).collect();
            if group.is_empty() {
                return Ok(Vec::new());
            }
            build_emotion(emotion, &group, params, dim, describe)
        })
        .collect();

    let mut nodes = Vec::new();
    for r in per_emotion {
        nodes.extend(r?);
    }
    EmotionFactorTree::new(nodes, dim, *params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{BackendError, DescribeResponse};
    use crate::knowledge::{ElementKind, PerceptualHash};

    struct FixedDescriber;
    impl DescriptionBackend for FixedDescriber {
        fn describe(&self, req: &DescribeRequest) -> Result<DescribeResponse, BackendError> {
            Ok(DescribeResponse {
                description: format!("{} cluster of {}", req.emotion, req.members.len()),
                kind: ElementKind::Object,
            })
        }
    }

    fn item(id: usize, emotion: Emotion, v: Vec<f64>) -> ExemplarItem {
        ExemplarItem {
            id: format!("x{id}"),
            emotion,
            embedding: v,
            perceptual_hash: None,
            relevance_score: None,
        }
    }

    #[test]
    fn empty_input_gives_empty_tree() {
        let t = build_tree(&[], &ClusterParams::default(), &FixedDescriber).unwrap();
        assert!(t.nodes().is_empty());
    }

    #[test]
    fn six_identical_embeddings_form_one_node() {
        let items: Vec<_> = (0..6).map(|i| item(i, Emotion::Awe, vec![0.6, 0.8])).collect();
        let t = build_tree(&items, &ClusterParams::default(), &FixedDescriber).unwrap();
        assert_eq!(t.nodes().len(), 1);
        let n = &t.nodes()[0];
        assert_eq!(n.provenance.cluster_size, 6);
        assert_eq!(n.id, "awe-00000");
        assert!((n.embedding[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn four_identical_embeddings_are_filtered() {
        let items: Vec<_> = (0..4).map(|i| item(i, Emotion::Awe, vec![1.0, 0.0])).collect();
        let t = build_tree(&items, &ClusterParams::default(), &FixedDescriber).unwrap();
        assert!(t.nodes().is_empty());
    }

    #[test]
    fn orthogonal_points_never_merge() {
        let e = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let (merges, clusters) = agglomerate(&e, 0.89).unwrap();
        assert!(merges.is_empty());
        assert_eq!(clusters, vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn ties_merge_lowest_pair_first() {
        let e = vec![vec![1.0, 0.0]; 3];
        let (merges, _) = agglomerate(&e, 0.5).unwrap();
        assert_eq!((merges[0].keep, merges[0].absorbed), (0, 1));
        assert_eq!((merges[1].keep, merges[1].absorbed), (0, 2));
    }

    #[test]
    fn zero_vector_is_rejected() {
        let e = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        assert_eq!(agglomerate(&e, 0.5).unwrap_err(), VectorError::ZeroVector);
    }

    #[test]
    fn redundant_clusters_are_dropped() {
        let mut items: Vec<_> = (0..5).map(|i| item(i, Emotion::Fear, vec![1.0, 0.1])).collect();
        for it in &mut items {
            it.perceptual_hash = Some(PerceptualHash(0xff));
        }
        let t = build_tree(&items, &ClusterParams::default(), &FixedDescriber).unwrap();
        assert!(t.nodes().is_empty());
        // one member without a hash disables the filter
        items[0].perceptual_hash = None;
        let t = build_tree(&items, &ClusterParams::default(), &FixedDescriber).unwrap();
        assert_eq!(t.nodes().len(), 1);
    }

    #[test]
    fn relevance_filter_only_when_required() {
        let mut items: Vec<_> = (0..5).map(|i| item(i, Emotion::Fear, vec![1.0, 0.1])).collect();
        for it in &mut items {
            it.relevance_score = Some(0.2);
        }
        let mut p = ClusterParams::default();
        assert_eq!(build_tree(&items, &p, &FixedDescriber).unwrap().nodes().len(), 1);
        p.relevance_required = true;
        assert!(build_tree(&items, &p, &FixedDescriber).unwrap().nodes().is_empty());
        for it in &mut items {
            it.relevance_score = Some(0.9);
        }
        assert_eq!(build_tree(&items, &p, &FixedDescriber).unwrap().nodes().len(), 1);
    }

    #[test]
    fn mixed_dimensions_fail() {
        let items = vec![item(0, Emotion::Awe, vec![1.0]), item(1, Emotion::Awe, vec![1.0, 0.0])];
        assert!(matches!(
            build_tree(&items, &ClusterParams::default(), &FixedDescriber),
            Err(KnowledgeError::Vector(VectorError::DimensionMismatch { .. }))
        ));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
