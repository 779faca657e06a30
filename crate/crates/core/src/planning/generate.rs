use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    compatible_methods, EditPlan, EditingMethod, ElementRef, Instruction, PlanSet, PlanningError,
    SemanticCues,
};
use crate::artifact::{ImageArtifact, ImageStore};
use crate::backends::{
    AnalysisBackend, AnalyzeRequest, ElementSuggestion, EmbedRequest, EmbeddingBackend, ImageRef,
    PairRef, PlannerBackend, ProposeMode, ProposeRequest,
};
use crate::emotion::EmotionLabel;
use crate::knowledge::FactorNode;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_N_MAX: usize = 4;

/// Extracts semantic cues from the source image and embeds the scene summary.
pub fn analyze(
    image: &ImageArtifact,
    store: &ImageStore,
    vlm: &dyn AnalysisBackend,
    embedder: &dyn EmbeddingBackend,
) -> Result<SemanticCues, PlanningError> {
    // fail on an unreadable or altered source before spending a backend call
    store.verify(image)?;
    let reply = vlm.analyze(&AnalyzeRequest {
        image: ImageRef::from_artifact(store, image),
    })?;
    let embedding = embedder.embed(&EmbedRequest::text(reply.scene_summary.clone()))?;
    Ok(SemanticCues {
        scene_summary: reply.scene_summary,
        entities: reply.entities,
        source_emotion: reply.source_emotion,
        source_confidence: reply.source_confidence,
        cue_embedding: embedding.vector,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanningOptions {
    pub k: usize,
    pub n_max: usize,
    pub seed: u64,
}

impl Default for PlanningOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            n_max: DEFAULT_N_MAX,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Candidate {
    element: ElementRef,
    method: EditingMethod,
    region_hint: Option<String>,
}

impl Candidate {
    fn key(&self) -> (String, EditingMethod) {
        (self.element.key(), self.method)
    }
}

fn mentions(description: &str, entity: &str) -> bool {
    let d = description.to_lowercase();
    let e = entity.trim().to_lowercase();
    !e.is_empty() && d.contains(&e)
}

fn region_for(description: &str, method: EditingMethod, entities: &[&str]) -> Option<String> {
    if !method.uses_region() {
        return None;
    }
    entities
        .iter()
        .find(|e| mentions(description, e))
        .or(entities.first())
        .map(|e| e.to_string())
}

/// Pool nodes ranked by retrieval position, moved up one place when the
/// description mentions a scene entity, then expanded into (node, method)
/// pairs round-robin by method so the first pairs cover distinct nodes.
fn pool_candidates(pool: &[FactorNode], entities: &[&str]) -> Vec<Candidate> {
    let mut ranked: Vec<(usize, bool, &FactorNode)> = pool
        .iter()
        .enumerate()
        .map(|(rank, n)| {
            let boosted = entities.iter().any(|e| mentions(&n.description, e));
            (rank, boosted, n)
        })
        .collect();
    ranked.sort_by_key(|&(rank, boosted, _)| (rank - usize::from(boosted && rank > 0), !boosted, rank));

    let rounds = ranked
        .iter()
        .map(|(_, _, n)| compatible_methods(n.kind).len())
        .max()
        .unwrap_or(0);
    let mut out = Vec::new();
    for round in 0..rounds {
        for (_, _, node) in &ranked {
            if let Some(&method) = compatible_methods(node.kind).get(round) {
                out.push(Candidate {
                    element: ElementRef::factor(node),
                    method,
                    region_hint: region_for(&node.description, method, entities),
                });
            }
        }
    }
    out
}

fn suggestion_candidate(s: ElementSuggestion, entities: &[&str]) -> Option<Candidate> {
    if !compatible_methods(s.kind).contains(&s.method) {
        log::warn!(
            "dropping proposer suggestion {:?}: {} cannot edit a {}",
            s.element,
            s.method,
            s.kind
        );
        return None;
    }
    let region_hint = if s.method.uses_region() {
        s.region_hint.or_else(|| region_for(&s.element, s.method, entities))
    } else {
        None
    };
    Some(Candidate {
        element: ElementRef::free_text(s.element.trim(), s.kind),
        method: s.method,
        region_hint,
    })
}

struct Proposer<'a> {
    backend: &'a dyn PlannerBackend,
    target: &'a EmotionLabel,
    cues: &'a SemanticCues,
    entities: Vec<&'a str>,
}

impl Proposer<'_> {
    fn suggest(
        &self,
        exclude: &[(String, EditingMethod)],
        count: usize,
    ) -> Result<Vec<Candidate>, PlanningError> {
        let reply = self.backend.propose(&ProposeRequest {
            mode: ProposeMode::Suggest,
            target_emotion: self.target.clone(),
            scene_summary: self.cues.scene_summary.clone(),
            entities: self.entities.iter().map(|e| e.to_string()).collect(),
            exclude: exclude
                .iter()
                .map(|(element, method)| PairRef {
                    element: element.strip_prefix("text:").unwrap_or(element).to_string(),
                    method: *method,
                })
                .collect(),
            count: count as u32,
        })?;
        let mut seen: HashSet<_> = exclude.iter().cloned().collect();
        Ok(reply
            .suggestions
            .into_iter()
            .filter_map(|s| suggestion_candidate(s, &self.entities))
            .filter(|c| seen.insert(c.key()))
            .collect())
    }
}

fn build_plan(plan_id: u32, chosen: &[Candidate], target: &EmotionLabel) -> Result<EditPlan, PlanningError> {
    let instructions = chosen
        .iter()
        .enumerate()
        .map(|(i, c)| Instruction::new(i as u32 + 1, c.element.clone(), c.method, c.region_hint.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let anchor = &instructions[0];
    let rationale = format!(
        "evoke {target} by anchoring on {:?} ({}) with {} supporting edit(s)",
        anchor.element.description(),
        anchor.method,
        instructions.len() - 1
    );
    Ok(EditPlan {
        plan_id,
        instructions,
        rationale,
    })
}

/// Builds K pairwise-distinct plans.
///
/// In-domain targets draw elements from `pool` (already retrieved for the
/// target) and fall back to the proposer when it is empty; out-of-domain
/// targets source every element from the proposer. Plan k is anchored on
/// the k-th candidate pair and filled with seeded companions. A plan that
/// collides with an accepted one gets a fresh proposer pair, with at most
/// 3·K such requests overall.
pub fn generate_plans(
    cues: &SemanticCues,
    target: &EmotionLabel,
    pool: &[FactorNode],
    proposer: &dyn PlannerBackend,
    opts: &PlanningOptions,
) -> Result<PlanSet, PlanningError> {
    if opts.k == 0 || opts.n_max == 0 {
        return Err(PlanningError::InvalidInput("k and n_max must be at least 1".into()));
    }
    if let Some(e) = target.in_domain() {
        if let Some(stray) = pool.iter().find(|n| n.emotion != e) {
            return Err(PlanningError::InvalidInput(format!(
                "pool node {} belongs to {}, not {e}",
                stray.id, stray.emotion
            )));
        }
    }
    let entities = cues.ranked_entities();
    let proposer = Proposer {
        backend: proposer,
        target,
        cues,
        entities: entities.clone(),
    };

    let mut candidates = if target.is_in_domain() && !pool.is_empty() {
        pool_candidates(pool, &entities)
    } else {
        proposer.suggest(&[], opts.k * opts.n_max)?
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut accepted: Vec<EditPlan> = Vec::with_capacity(opts.k);
    let mut signatures: Vec<Vec<(String, EditingMethod)>> = Vec::new();
    let mut budget = 3 * opts.k;

    for plan_id in 1..=opts.k as u32 {
        let size = rng.random_range(opts.n_max.min(2)..=opts.n_max);
        let mut chosen: Vec<Candidate> = Vec::with_capacity(size);
        if !candidates.is_empty() {
            let anchor = (plan_id as usize - 1) % candidates.len();
            chosen.push(candidates[anchor].clone());
            let mut others: Vec<usize> = (0..candidates.len()).filter(|&i| i != anchor).collect();
            others.shuffle(&mut rng);
            for i in others {
                if chosen.len() == size {
                    break;
                }
                let key = candidates[i].element.key();
                if chosen.iter().all(|c| c.element.key() != key) {
                    chosen.push(candidates[i].clone());
                }
            }
        }

        loop {
            if !chosen.is_empty() {
                let plan = build_plan(plan_id, &chosen, target)?;
                let sig = plan.signature();
                if !signatures.contains(&sig) {
                    signatures.push(sig);
                    accepted.push(plan);
                    break;
                }
            }
            if budget == 0 {
                return Err(PlanningError::PlanningFailed(format!(
                    "could not make plan {plan_id} distinct within {} proposer requests",
                    3 * opts.k
                )));
            }
            budget -= 1;
            let mut exclude: Vec<_> = candidates.iter().map(Candidate::key).collect();
            exclude.extend(chosen.iter().map(Candidate::key));
            let fresh = proposer.suggest(&exclude, 1)?;
            if let Some(c) = fresh.into_iter().next() {
                candidates.push(c.clone());
                if chosen.len() < size {
                    chosen.push(c);
                } else {
                    *chosen.last_mut().expect("size is at least 1") = c;
                }
            }
        }
    }
    let set = PlanSet {
        plans: accepted,
        target_emotion: target.clone(),
    };
    for p in &set.plans {
        p.validate(opts.n_max)?;
    }
    Ok(set)
}
