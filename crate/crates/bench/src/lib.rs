//! Seeded input generators shared by the kernel benchmarks.

use emoflow_core::knowledge::{ClusterParams, ElementKind, EmotionFactorTree, FactorNode, Provenance};
use emoflow_core::Emotion;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KINDS: [ElementKind; 6] = [
    ElementKind::Object,
    ElementKind::BackgroundScene,
    ElementKind::ColorTone,
    ElementKind::Action,
    ElementKind::FacialExpression,
    ElementKind::Attribute,
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_vectors(seed: u64, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = rng(seed);
    (0..n).map(|_| random_vector(&mut rng, dim)).collect()
}

/// `n` points scattered tightly around `centers` random directions.
pub fn clustered_vectors(seed: u64, n: usize, dim: usize, centers: usize) -> Vec<Vec<f64>> {
    let mut rng = rng(seed);
    let cs: Vec<Vec<f64>> = (0..centers.max(1)).map(|_| random_vector(&mut rng, dim)).collect();
    (0..n)
        .map(|_| {
            let c = cs.choose(&mut rng).expect("at least one center");
            c.iter().map(|v| v + rng.random_range(-0.05..0.05)).collect()
        })
        .collect()
}

/// A factor tree of `n` nodes spread over all emotions and element kinds.
pub fn random_tree(seed: u64, n: usize, dim: usize) -> EmotionFactorTree {
    let mut rng = rng(seed);
    let nodes = (0..n)
        .map(|i| FactorNode {
            id: format!("n{i:06}"),
            emotion: Emotion::ALL[i % Emotion::ALL.len()],
            kind: *KINDS.choose(&mut rng).expect("kinds"),
            description: format!("factor {i}"),
            embedding: random_vector(&mut rng, dim),
            provenance: Provenance {
                cluster_id: i as u32,
                cluster_size: 5,
            },
        })
        .collect();
    EmotionFactorTree::new(nodes, dim, ClusterParams::default()).expect("generated tree is valid")
}

/// A strictly positive probability vector of length `n`.
pub fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}
