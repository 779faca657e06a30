use std::sync::Arc;

use emoflow_core::backends::{BackendClient, BackendProfile, MockBackend, MockScript};
use emoflow_core::knowledge::{build_tree, load_tree, retrieve, save_tree, ClusterParams, ExemplarItem, PerceptualHash};
use emoflow_core::Emotion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn exemplars(seed: u64) -> Vec<ExemplarItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    for emotion in [Emotion::Awe, Emotion::Fear, Emotion::Contentment] {
        for c in 0..3 {
            let center: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let size = 3 + 2 * c;
            for i in 0..size {
                items.push(ExemplarItem {
                    id: format!("{emotion}-{c}-{i}"),
                    emotion,
                    embedding: center.iter().map(|v| v + rng.random_range(-0.05..0.05)).collect(),
                    perceptual_hash: Some(PerceptualHash(rng.random())),
                    relevance_score: None,
                });
            }
        }
    }
    items
}

fn describer() -> BackendClient {
    BackendClient::with_mock(BackendProfile::default(), Arc::new(MockBackend::new(MockScript::with_seed(3))))
}

#[test]
fn built_tree_survives_save_and_load() {
    let tree = build_tree(&exemplars(1), &ClusterParams::default(), &describer()).unwrap();
    assert!(!tree.nodes().is_empty());
    assert!(tree.nodes().iter().all(|n| n.provenance.cluster_size >= 5));

    let dir = tempfile::tempdir().unwrap();
    save_tree(&tree, dir.path()).unwrap();
    let loaded = load_tree(dir.path()).unwrap();
    assert_eq!(loaded, tree);

    let query = tree.nodes()[0].embedding.clone();
    let emotion = tree.nodes()[0].emotion;
    let a: Vec<&str> = retrieve(&tree, &query, emotion, 5, 2).unwrap().iter().map(|n| n.id.as_str()).collect();
    let b: Vec<&str> = retrieve(&loaded, &query, emotion, 5, 2).unwrap().iter().map(|n| n.id.as_str()).collect();
    assert_eq!(a, b);
    assert_eq!(a[0], tree.nodes()[0].id);
}

#[test]
fn redundant_clusters_are_dropped() {
    let mut items = exemplars(2);
    for item in &mut items {
        item.perceptual_hash = Some(PerceptualHash(0xdead_beef));
    }
    let tree = build_tree(&items, &ClusterParams::default(), &describer()).unwrap();
    assert!(tree.nodes().is_empty());
}

#[test]
fn rebuilding_is_deterministic() {
    let a = build_tree(&exemplars(4), &ClusterParams::default(), &describer()).unwrap();
    let b = build_tree(&exemplars(4), &ClusterParams::default(), &describer()).unwrap();
    assert_eq!(a, b);
}
