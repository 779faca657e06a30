//! Acceptance suite. Each criterion runs against an independent oracle or a
//! golden artifact and prints one PASS/FAIL line. Exits non-zero if any
//! criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use emoflow_core::artifact::ImageStore;
use emoflow_core::backends::*;
use emoflow_core::knowledge::{
    agglomerate, build_tree, l2_distance, retrieve, ClusterParams, ElementKind, EmotionFactorTree,
    ExemplarItem, FactorNode, Provenance,
};
use emoflow_core::metrics::{clip_i, emo_s, kl_divergence, sem_d};
use emoflow_core::orchestrator::{
    resume, run_job, BranchStatus, JobRecord, OrchestratorError, Phase, RunOptions,
};
use emoflow_core::planning::{analyze, generate_plans, EditPlan, ElementRef, PlanningOptions};
use emoflow_core::{Emotion, EmotionDistribution, EmotionLabel};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const KINDS: [ElementKind; 6] = [
    ElementKind::Object,
    ElementKind::BackgroundScene,
    ElementKind::ColorTone,
    ElementKind::Action,
    ElementKind::FacialExpression,
    ElementKind::Attribute,
];

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn naive_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn naive_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

// ---------------------------------------------------------------- retrieval

fn retrieval_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let dim = 8;
    let nodes: Vec<FactorNode> = (0..1000)
        .map(|i| {
            let emotion = *Emotion::ALL.choose(&mut rng).unwrap();
            FactorNode {
                id: format!("n{i:04}"),
                emotion,
                kind: *KINDS.choose(&mut rng).unwrap(),
                description: format!("factor {i}"),
                embedding: random_vec(&mut rng, dim),
                provenance: Provenance {
                    cluster_id: i,
                    cluster_size: 5,
                },
            }
        })
        .collect();
    let tree = EmotionFactorTree::new(nodes.clone(), dim, ClusterParams::default())
        .map_err(|e| e.to_string())?;

    let (k, cap) = (5, 2);
    let start = Instant::now();
    for q in 0..200 {
        let query = random_vec(&mut rng, dim);
        let target = Emotion::ALL[q % Emotion::ALL.len()];
        let got: Vec<String> = retrieve(&tree, &query, target, k, cap)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|n| n.id.clone())
            .collect();

        let mut all: Vec<(f64, &FactorNode)> = nodes
            .iter()
            .filter(|n| n.emotion == target)
            .map(|n| (naive_l2(&n.embedding, &query), n))
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.id.cmp(&b.1.id)));
        let mut counts: HashMap<ElementKind, usize> = HashMap::new();
        let mut expected = Vec::new();
        for (_, n) in all {
            let c = counts.entry(n.kind).or_default();
            if *c < cap && expected.len() < k {
                *c += 1;
                expected.push(n.id.clone());
            }
        }
        ensure!(got == expected, "query {q}: got {got:?}, oracle {expected:?}");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("200 queries over 1000 nodes match exactly in {:.3}s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------- l2 metric

fn l2_metric_axioms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let d = |a: &[f64], b: &[f64]| l2_distance(a, b).map_err(|e| e.to_string());
    for t in 0..10_000 {
        let dim = rng.random_range(1..=16);
        let (a, b, c) = (random_vec(&mut rng, dim), random_vec(&mut rng, dim), random_vec(&mut rng, dim));
        let (ab, ba, bc, ac) = (d(&a, &b)?, d(&b, &a)?, d(&b, &c)?, d(&a, &c)?);
        ensure!(ab >= 0.0 && bc >= 0.0 && ac >= 0.0, "triple {t}: negative distance");
        ensure!((ab - ba).abs() <= 1e-9, "triple {t}: asymmetric {ab} vs {ba}");
        ensure!(ac <= ab + bc + 1e-9, "triple {t}: triangle violated {ac} > {ab} + {bc}");
    }
    for dim in 1..=16 {
        let x = random_vec(&mut rng, dim);
        ensure!(d(&x, &x)? == 0.0, "d(x, x) != 0 in {dim} dims");
        if dim >= 2 {
            let mut e1 = vec![0.0; dim];
            let mut e2 = vec![0.0; dim];
            e1[0] = 1.0;
            e2[1] = 1.0;
            let v = d(&e1, &e2)?;
            ensure!((v - 2f64.sqrt()).abs() <= 1e-12, "d(e1, e2) = {v}");
        }
    }
    Ok("10000 random triples satisfy the metric axioms; analytic cases exact".into())
}

// ---------------------------------------------------------------- clustering

/// Direct average linkage: at each step, the pair of clusters with the
/// highest mean pairwise cosine similarity merges into the one holding the
/// smaller index. Recomputed from scratch every step.
fn naive_average_linkage(x: &[Vec<f64>], threshold: f64) -> (Vec<(usize, usize, f64)>, Vec<Vec<usize>>) {
    let n = x.len();
    let sim: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| naive_cos(&x[i], &x[j])).collect()).collect();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut merges = Vec::new();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut total = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        total += sim[i][j];
                    }
                }
                let avg = total / (clusters[a].len() * clusters[b].len()) as f64;
                if best.is_none_or(|(s, _, _)| avg > s + 1e-12) {
                    best = Some((avg, a, b));
                }
            }
        }
        let Some((s, a, b)) = best else { break };
        if s < threshold {
            break;
        }
        let absorbed = clusters.remove(b);
        merges.push((clusters[a][0], absorbed[0], s));
        clusters[a].extend(absorbed);
        clusters[a].sort_unstable();
    }
    (merges, clusters)
}

fn clustered_instance(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let centers: Vec<Vec<f64>> = (0..rng.random_range(2..=8)).map(|_| random_vec(rng, dim)).collect();
    (0..n)
        .map(|_| {
            let c = centers.choose(rng).unwrap();
            let spread = if rng.random_bool(0.2) { 0.6 } else { 0.08 };
            c.iter().map(|v| v + rng.random_range(-spread..spread)).collect()
        })
        .collect()
}

fn clustering_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let threshold = 0.89;
    let mut merges_checked = 0;
    for inst in 0..50 {
        let n = rng.random_range(2..=50);
        let x = clustered_instance(&mut rng, n, 8);
        let (merges, clusters) = agglomerate(&x, threshold).map_err(|e| e.to_string())?;
        let (oracle_merges, oracle_clusters) = naive_average_linkage(&x, threshold);
        ensure!(
            merges.len() == oracle_merges.len(),
            "instance {inst}: {} merges, oracle {}",
            merges.len(),
            oracle_merges.len()
        );
        for (step, (m, o)) in merges.iter().zip(&oracle_merges).enumerate() {
            ensure!(
                (m.keep, m.absorbed) == (o.0, o.1) && (m.similarity - o.2).abs() <= 1e-9,
                "instance {inst} step {step}: ({}, {}, {}) vs oracle {o:?}",
                m.keep,
                m.absorbed,
                m.similarity
            );
        }
        merges_checked += merges.len();
        ensure!(clusters == oracle_clusters, "instance {inst}: partitions differ");
    }

    // size filter through the full build with the mock describer
    let client = BackendClient::with_mock(BackendProfile::default(), Arc::new(MockBackend::new(MockScript::with_seed(1))));
    let params = ClusterParams::default();
    let mut filtered = 0;
    for inst in 0..20 {
        let mut items = Vec::new();
        let mut expected = BTreeSet::new();
        for emotion in [Emotion::Awe, Emotion::Sadness] {
            let n = rng.random_range(5..=40);
            let x = clustered_instance(&mut rng, n, 8);
            let (_, oracle_clusters) = naive_average_linkage(&x, params.merge_threshold);
            for c in &oracle_clusters {
                if c.len() >= params.min_cluster_size {
                    expected.insert(format!("{emotion}-{:05}", c[0]));
                } else {
                    filtered += 1;
                }
            }
            items.extend(x.into_iter().enumerate().map(|(i, embedding)| ExemplarItem {
                id: format!("{emotion}-item-{i}"),
                emotion,
                embedding,
                perceptual_hash: None,
                relevance_score: None,
            }));
        }
        let tree = build_tree(&items, &params, &client).map_err(|e| e.to_string())?;
        let got: BTreeSet<String> = tree.nodes().iter().map(|n| n.id.clone()).collect();
        ensure!(got == expected, "build {inst}: nodes {got:?}, oracle {expected:?}");
        ensure!(
            tree.nodes().iter().all(|n| n.provenance.cluster_size >= params.min_cluster_size),
            "build {inst}: undersized cluster kept"
        );
    }
    Ok(format!(
        "50 instances, {merges_checked} merges match the naive oracle; size filter dropped exactly {filtered} small clusters"
    ))
}

// ---------------------------------------------------------------- metrics

fn random_distribution(rng: &mut ChaCha8Rng) -> [f64; 8] {
    let mut p = [0.0; 8];
    for v in p.iter_mut() {
        *v = if rng.random_bool(0.15) { 0.0 } else { rng.random_range(0.0..1.0) };
    }
    p[rng.random_range(0..8)] += 0.01;
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

fn naive_kl(p: &[f64], q: &[f64], eps: f64) -> f64 {
    let sp: f64 = p.iter().map(|v| v + eps).sum();
    let sq: f64 = q.iter().map(|v| v + eps).sum();
    let mut total = 0.0;
    for i in 0..p.len() {
        let a = (p[i] + eps) / sp;
        let b = (q[i] + eps) / sq;
        total += a * (a.ln() - b.ln());
    }
    total.max(0.0)
}

fn metric_kernels() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let eps = 1e-6;
    let err = |e: emoflow_core::metrics::MetricsError| e.to_string();
    for t in 0..1000 {
        let (p, q) = (random_distribution(&mut rng), random_distribution(&mut rng));
        let got = kl_divergence(&p, &q, eps).map_err(err)?;
        let want = naive_kl(&p, &q, eps);
        ensure!((got - want).abs() <= 1e-9, "kl case {t}: {got} vs {want}");
        ensure!(kl_divergence(&p, &p, eps).map_err(err)? == 0.0, "kl(p, p) != 0 in case {t}");

        let src = EmotionDistribution::new(p).map_err(|e| e.to_string())?;
        let edit = EmotionDistribution::new(q).map_err(|e| e.to_string())?;
        let target = *Emotion::ALL.choose(&mut rng).unwrap();
        let i = Emotion::ALL.iter().position(|e| *e == target).unwrap();
        ensure!((emo_s(&src, &edit, target) - (q[i] - p[i])).abs() <= 1e-9, "emo_s case {t}");
        ensure!(emo_s(&src, &src, target) == 0.0, "emo_s identity case {t}");

        let dim = rng.random_range(2..=32);
        let (a, b) = (random_vec(&mut rng, dim), random_vec(&mut rng, dim));
        ensure!((clip_i(&a, &b).map_err(err)? - naive_cos(&a, &b)).abs() <= 1e-9, "clip_i case {t}");
        ensure!(clip_i(&a, &a).map_err(err)? == 1.0, "clip_i identity case {t}");

        let set: Vec<Vec<f64>> = (0..rng.random_range(2..=6)).map(|_| random_vec(&mut rng, dim)).collect();
        let mut total = 0.0;
        let mut pairs = 0.0;
        for x in 0..set.len() {
            for y in x + 1..set.len() {
                total += 1.0 - naive_cos(&set[x], &set[y]);
                pairs += 1.0;
            }
        }
        ensure!((sem_d(&set).map_err(err)? - total / pairs).abs() <= 1e-9, "sem_d case {t}");
        ensure!(sem_d(&[a.clone(), a.clone(), a]).map_err(err)? == 0.0, "sem_d identity case {t}");
    }
    Ok("KL, Emo-S, CLIP-I and Sem-D agree with brute force on 1000 inputs; identities exact".into())
}

// ---------------------------------------------------------------- planning

fn oracle_signature(plan: &EditPlan) -> Vec<String> {
    let mut sig: Vec<String> = plan
        .instructions
        .iter()
        .map(|ins| {
            let element = match &ins.element {
                ElementRef::Factor { node_id, .. } => format!("node:{node_id}"),
                ElementRef::FreeText { description, .. } => format!("text:{description}"),
            };
            format!("{element}|{}", ins.method)
        })
        .collect();
    sig.sort();
    sig
}

fn plan_distinctness() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = ImageStore::new(dir.path());
    let image = ingest_source(&store);
    let targets = [
        EmotionLabel::from(Emotion::Awe),
        EmotionLabel::from(Emotion::Fear),
        EmotionLabel::from(Emotion::Sadness),
        EmotionLabel::parse("nostalgia").map_err(|e| e.to_string())?,
    ];
    let (k, n_max) = (5, 4);
    for seed in 0..100u64 {
        let h = Harness::new(MockScript::with_seed(seed));
        let cues = analyze(&image, &store, &h.client, &h.client).map_err(|e| e.to_string())?;
        let target = &targets[seed as usize % targets.len()];
        let pool: Vec<FactorNode> = match target.in_domain() {
            Some(e) if h.tree.nodes_for(e).next().is_some() => retrieve(&h.tree, &cues.cue_embedding, e, 5, 2)
                .map_err(|e| e.to_string())?
                .into_iter()
                .cloned()
                .collect(),
            _ => Vec::new(),
        };
        let set = generate_plans(&cues, target, &pool, &h.client, &PlanningOptions { k, n_max, seed })
            .map_err(|e| format!("seed {seed}: {e}"))?;
        ensure!(set.plans.len() == k, "seed {seed}: {} plans", set.plans.len());
        let sigs: Vec<Vec<String>> = set.plans.iter().map(oracle_signature).collect();
        for a in 0..k {
            ensure!(
                (1..=n_max).contains(&set.plans[a].instructions.len()),
                "seed {seed}: plan {} has {} instructions",
                a + 1,
                set.plans[a].instructions.len()
            );
            for b in a + 1..k {
                ensure!(sigs[a] != sigs[b], "seed {seed}: plans {} and {} coincide", a + 1, b + 1);
            }
        }
        ensure!(set.duplicate().is_none(), "seed {seed}: duplicate() disagrees with oracle");
    }
    Ok("100 seeded runs with K=5 produce pairwise-distinct plans".into())
}

// ---------------------------------------------------------------- bounds

fn retry_termination_bounds() -> Outcome {
    let mut worst = 0.0f64;
    for r in [0u32, 1, 2] {
        for m in [0u32, 1, 3] {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let source = write_source(dir.path());
            let script = MockScript::with_seed(u64::from(r * 10 + m)).rule(MockRule::respond(
                Route::Validate,
                json!({}),
                json!({"verdict": "failed", "reason": "requested change not visible"}),
            ));
            let h = Harness::new(script);
            let mut spec = scenario_spec(&source);
            spec.retry_budget = r;
            spec.max_opt_iters = m;
            let record = run_job(&spec, h.engine(), &dir.path().join("run"), options(3))
                .map_err(|e| format!("R={r} M={m}: {e}"))?;
            ensure!(record.phase == Phase::Complete, "R={r} M={m}: did not complete");
            let bound = spec.n_max * (1 + r as usize) * (1 + m as usize);
            for b in &record.branches {
                let calls = h.edit_calls(b.branch);
                ensure!(calls <= bound, "R={r} M={m} branch {}: {calls} edit calls > {bound}", b.branch);
                ensure!(calls == b.edit_calls, "R={r} M={m} branch {}: record says {}, log {calls}", b.branch, b.edit_calls);
                ensure!(b.status == BranchStatus::Rejected, "R={r} M={m} branch {} not rejected", b.branch);
                ensure!(
                    b.history.len() == m as usize + 1,
                    "R={r} M={m} branch {}: {} history entries",
                    b.branch,
                    b.history.len()
                );
                worst = worst.max(calls as f64 / bound as f64);
            }
        }
    }
    Ok(format!("9 (R, M) settings terminate within the edit-call bound (peak {:.0}% of bound)", worst * 100.0))
}

// ---------------------------------------------------------------- end to end

fn scenario(parallelism: usize, script: MockScript) -> Result<(tempfile::TempDir, JobRecord, String), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let source = write_source(dir.path());
    let h = Harness::new(script);
    let run_dir = dir.path().join("run");
    let record = run_job(&scenario_spec(&source), h.engine(), &run_dir, options(parallelism)).map_err(|e| e.to_string())?;
    let audit = fs::read_to_string(run_dir.join("audit.log")).map_err(|e| e.to_string())?;
    Ok((dir, record, audit))
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let (_dir, record, audit) = scenario(4, scenario_script())?;
    let elapsed = start.elapsed();
    ensure!(record.phase == Phase::Complete, "phase {:?}", record.phase);
    ensure!(record.outputs.len() == 3, "{} outputs", record.outputs.len());
    let golden = fs::read_to_string(golden_path("scenario_audit.log")).map_err(|e| e.to_string())?;
    ensure!(audit == golden, "audit log differs from the golden log");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("K=3 job yields 3 outputs and the golden audit log in {:.3}s", elapsed.as_secs_f64()))
}

fn reproducibility() -> Outcome {
    let (_a, ra, audit_a) = scenario(1, scenario_script())?;
    let (_b, rb, audit_b) = scenario(4, scenario_script())?;
    ensure!(audit_a == audit_b, "audit logs differ between parallelism 1 and 4");
    ensure!(ra.branches == rb.branches && ra.outputs == rb.outputs, "records differ");

    let perturbed_script = scenario_script().rule(MockRule::respond(
        Route::Critique,
        json!({"mode": "assess", "trace": {"branch": 2, "iteration": 1}}),
        json!({
            "distribution": {"amusement": 0.1, "anger": 0.1, "awe": 0.1, "contentment": 0.4,
                             "disgust": 0.1, "excitement": 0.1, "fear": 0.05, "sadness": 0.05},
            "rationale": ["still calm"],
            "source_similarity": 0.9
        }),
    ));
    let (_c, rc, _) = scenario(4, perturbed_script)?;
    ensure!(rc.branch(1) == ra.branch(1) && rc.branch(3) == ra.branch(3), "perturbing branch 2 changed another branch");
    ensure!(rc.branch(2) != ra.branch(2), "perturbation had no effect on branch 2");
    Ok("parallelism 1 and 4 give identical logs; a branch-2 perturbation stays in branch 2".into())
}

fn persistence() -> Outcome {
    let (_full_dir, full, full_audit) = scenario(4, scenario_script())?;
    for halt in [Phase::Started, Phase::Planned, Phase::PreCreated] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let source = write_source(dir.path());
        let run_dir = dir.path().join("run");
        let h = Harness::new(scenario_script());
        let opts = RunOptions { halt_after: Some(halt), ..options(2) };
        run_job(&scenario_spec(&source), h.engine(), &run_dir, opts).map_err(|e| e.to_string())?;
        let h2 = Harness::new(scenario_script());
        let resumed = resume(&run_dir, h2.engine(), options(4)).map_err(|e| e.to_string())?;
        ensure!(
            resumed.branches == full.branches && resumed.outputs == full.outputs,
            "resume after {halt:?} diverged"
        );
        let audit = fs::read_to_string(run_dir.join("audit.log")).map_err(|e| e.to_string())?;
        ensure!(audit == full_audit, "audit log after resume from {halt:?} differs");
    }

    let (dir, _, _) = scenario(2, scenario_script())?;
    let run_dir = dir.path().join("run");
    let trace = run_dir.join("branches/1/step_0/trace.json");
    let text = fs::read_to_string(&trace).map_err(|e| e.to_string())?;
    fs::write(&trace, text.replacen("\"ok\"", "\"failed\"", 1)).map_err(|e| e.to_string())?;
    let h = Harness::new(scenario_script());
    match resume(&run_dir, h.engine(), options(1)) {
        Err(OrchestratorError::Corrupt { path, .. }) if path == "branches/1/step_0/trace.json" => {}
        other => return Err(format!("corrupted trace not detected: {other:?}")),
    }
    Ok("resume after every phase reproduces the record; a tampered trace is rejected".into())
}

// ---------------------------------------------------------------- protocol

fn protocol_conformance() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = ImageStore::new(dir.path());
    let image = ingest_source(&store);

    let mock = Arc::new(MockBackend::new(MockScript::with_seed(9)));
    let client = BackendClient::with_mock(BackendProfile::default(), mock.clone());
    let mut covered = BTreeMap::new();
    for (route, result) in call_every_route(&client, &store, &image) {
        result.map_err(|e| format!("{route}: {e}"))?;
        *covered.entry(route.path()).or_insert(0) += 1;
    }
    ensure!(covered.len() == Route::ALL.len(), "covered {} of {} routes", covered.len(), Route::ALL.len());
    for req in mock.requests() {
        ensure!(req.body["version"] == json!(PROTOCOL_VERSION), "{} request lacks the protocol version", req.route);
    }

    let server = MockServer::start(MockScript::with_seed(9), 0).map_err(|e| e.to_string())?;
    let http = BackendClient::connect(
        BackendProfile { name: "http".into(), base_url: server.url(), retries: 0, ..BackendProfile::default() },
        MockScript::default(),
    )
    .map_err(|e| e.to_string())?;
    for (route, result) in call_every_route(&http, &store, &image) {
        result.map_err(|e| format!("http {route}: {e}"))?;
    }

    for retries in 0..=3u32 {
        let script = MockScript::default().rule(MockRule::fail(Route::Edit, None, 503, "unavailable"));
        let mock = Arc::new(MockBackend::new(script));
        let client = BackendClient::with_mock(BackendProfile { retries, ..BackendProfile::default() }, mock.clone());
        let err = client
            .edit(&EditRequest {
                tool: "magicbrush".into(),
                image: ImageRef::from_artifact(&store, &image),
                directive: "add a boat".into(),
                mask: None,
                reference: None,
                trace: TraceContext::default(),
            })
            .err();
        match err {
            Some(BackendError::Unavailable { route: Route::Edit, attempts, .. }) if attempts == retries + 1 => {}
            other => return Err(format!("retries={retries}: expected unavailable, got {other:?}")),
        }
        let sent = mock.requests().len() as u32;
        ensure!(sent == retries + 1, "retries={retries}: {sent} attempts sent");
    }
    Ok(format!("{} routes validate in-process and over HTTP; /edit faults surface after retries+1 attempts", Route::ALL.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("retrieval matches exhaustive oracle", retrieval_oracle),
        ("l2 distance is a metric", l2_metric_axioms),
        ("average-linkage clustering and size filter", clustering_oracle),
        ("metric kernels match brute force", metric_kernels),
        ("plans are pairwise distinct", plan_distinctness),
        ("retry and termination bounds", retry_termination_bounds),
        ("end-to-end scenario", end_to_end),
        ("reproducibility and branch isolation", reproducibility),
        ("persistence and integrity", persistence),
        ("protocol conformance", protocol_conformance),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>().map(String::as_str).or(p.downcast_ref::<&str>().copied()))));
        match outcome {
            Ok(detail) => println!("PASS  {:>2}  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {:>2}  {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
