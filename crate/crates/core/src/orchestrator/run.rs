use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Value};

use super::rundir::{
    Agent, PendingEvent, RunDir, JOB_FILE, RECORD_FILE, SETTINGS_FILE,
};
use super::{
    BranchState, BranchStatus, Engine, HistoryEntry, JobFailure, JobRecord, JobSpec,
    OrchestratorError, OutputRecord, Phase, RunOptions, Timing,
};
use crate::artifact::{ImageArtifact, ImageStore};
use crate::backends::TraceContext;
use crate::critic::{assess, diagnose, EmotionAssessment};
use crate::editing::{execute_instructions, ActionTrace, ExecutionContext, StageStatus};
use crate::knowledge::{retrieve, FactorNode};
use crate::planning::{analyze, generate_plans, EditPlan, Instruction, PlanningOptions};

type BranchResult = Result<(BranchState, Vec<PendingEvent>), OrchestratorError>;

struct Job<'a> {
    engine: Engine<'a>,
    run: RunDir,
    store: ImageStore,
    record: JobRecord,
    parallelism: usize,
    halt_after: Option<Phase>,
}

/// Starts a new job in `run_dir`, which must be empty or absent.
pub fn run_job(
    spec: &JobSpec,
    engine: Engine<'_>,
    run_dir: &Path,
    opts: RunOptions,
) -> Result<JobRecord, OrchestratorError> {
    spec.validate()?;
    opts.settings
        .validate()
        .map_err(|e| OrchestratorError::InvalidJob(e.to_string()))?;
    let occupied = std::fs::read_dir(run_dir)
        .map(|mut d| d.next().is_some())
        .unwrap_or(false);
    if occupied {
        return Err(OrchestratorError::RunExists(run_dir.to_path_buf()));
    }
    std::fs::create_dir_all(run_dir).map_err(|source| OrchestratorError::Io {
        path: run_dir.to_path_buf(),
        source,
    })?;
    let run = RunDir::new(run_dir);
    let store = ImageStore::new(run_dir);
    let source = store.import(Path::new(&spec.source_image))?;

    let mut stored_spec = spec.clone();
    stored_spec.source_image = source.uri.clone();
    run.write_json(JOB_FILE, &stored_spec)?;
    run.write_json(SETTINGS_FILE, &opts.settings)?;
    run.append_events(&[PendingEvent::job(
        Agent::Orchestrator,
        "job_started",
        json!({
            "source": source.content_hash,
            "target": spec.target_emotion,
            "k": spec.k,
            "n_max": spec.n_max,
            "retry_budget": spec.retry_budget,
            "max_opt_iters": spec.max_opt_iters,
            "seed": spec.seed,
        }),
    )])?;

    let record = JobRecord {
        spec: stored_spec,
        source,
        settings: opts.settings,
        phase: Phase::Started,
        cues: None,
        retrieved: Vec::new(),
        proposer_fallback: false,
        branches: Vec::new(),
        outputs: Vec::new(),
        failure: None,
        timing: Timing::default(),
    };
    run.write_json(RECORD_FILE, &record)?;
    run.commit()?;

    Job {
        engine,
        run,
        store,
        record,
        parallelism: opts.parallelism,
        halt_after: opts.halt_after,
    }
    .drive()
}

/// Continues an interrupted or failed job from its last committed phase.
/// The directory is verified first; events appended after the last commit
/// are discarded. Only `parallelism` and `halt_after` are taken from `opts`.
pub fn resume(
    run_dir: &Path,
    engine: Engine<'_>,
    opts: RunOptions,
) -> Result<JobRecord, OrchestratorError> {
    let run = RunDir::new(run_dir);
    run.verify(true)?;
    let mut record: JobRecord = run.read_json(RECORD_FILE)?;
    if record.phase == Phase::Complete {
        return Ok(record);
    }
    if let Some(f) = record.failure.take() {
        log::info!("resuming after failure in {}: {}", f.phase, f.message);
    }
    Job {
        engine,
        store: ImageStore::new(run_dir),
        run,
        record,
        parallelism: opts.parallelism,
        halt_after: opts.halt_after,
    }
    .drive()
}

fn short(image: &ImageArtifact) -> &str {
    image.short_hash()
}

fn assessment_payload(iteration: u32, a: &EmotionAssessment) -> Value {
    let (target_p, argmax) = match a.target.in_domain() {
        Some(e) => (json!(a.distribution.get(e)), json!(a.distribution.argmax())),
        None => (Value::Null, Value::Null),
    };
    json!({
        "iteration": iteration,
        "verdict": a.verdict,
        "target_probability": target_p,
        "argmax": argmax,
        "source_similarity": a.source_similarity,
    })
}

fn trace_events(branch: u32, iteration: u32, traces: &[ActionTrace]) -> Vec<PendingEvent> {
    traces
        .iter()
        .map(|t| {
            let tools: Vec<&str> = t
                .attempts
                .iter()
                .filter(|r| r.stage == crate::editing::Stage::Edit)
                .map(|r| r.tool.as_str())
                .collect();
            PendingEvent::branch(
                branch,
                Agent::Editing,
                "instruction_executed",
                json!({
                    "iteration": iteration,
                    "instruction": t.instruction_index,
                    "status": t.final_status,
                    "edit_calls": t.edit_calls(),
                    "retries": t.retries(),
                    "tools": tools,
                    "output": t.output_hash.as_deref().map(|h| &h[..12.min(h.len())]),
                    "failure": if t.final_status == StageStatus::Failed { t.failure_reason() } else { None },
                }),
            )
        })
        .collect()
}

impl Job<'_> {
    fn drive(mut self) -> Result<JobRecord, OrchestratorError> {
        loop {
            if self.record.phase == Phase::Complete || self.halt_after == Some(self.record.phase) {
                return Ok(self.record);
            }
            let next = match self.record.phase {
                Phase::Started => Phase::Planned,
                Phase::Planned => Phase::PreCreated,
                Phase::PreCreated | Phase::Complete => Phase::Complete,
            };
            let started = Instant::now();
            let outcome = match next {
                Phase::Planned => self.plan(),
                Phase::PreCreated => self.precreate(),
                _ => self.optimize(),
            };
            match outcome {
                Ok(events) => {
                    self.record.phase = next;
                    self.record
                        .timing
                        .phases_ms
                        .insert(next.as_str().into(), started.elapsed().as_millis() as u64);
                    self.commit(&events)?;
                }
                Err(err) => {
                    self.fail(next, &err);
                    return Err(err);
                }
            }
        }
    }

    /// Appends the phase's events, then writes the record, then the manifest.
    fn commit(&self, events: &[PendingEvent]) -> Result<(), OrchestratorError> {
        self.run.append_events(events)?;
        self.run.write_json(RECORD_FILE, &self.record)?;
        self.run.commit()
    }

    /// Persists the failure against the last committed state. Errors while
    /// doing so are logged; the original error is what the caller sees.
    fn fail(&mut self, phase: Phase, err: &OrchestratorError) {
        let committed: Result<JobRecord, _> = self.run.read_json(RECORD_FILE);
        let mut record = committed.unwrap_or_else(|_| self.record.clone());
        record.failure = Some(JobFailure {
            phase: phase.as_str().into(),
            message: err.to_string(),
        });
        let event = PendingEvent::job(
            Agent::Orchestrator,
            "job_failed",
            json!({"phase": phase.as_str(), "error": err.to_string()}),
        );
        self.record = record;
        if let Err(e) = self.commit(&[event]) {
            log::error!("could not persist failure: {e}");
        }
    }

    fn in_parallel<F>(&self, branches: Vec<BranchState>, f: F) -> Vec<BranchResult>
    where
        F: Fn(BranchState) -> BranchResult + Sync + Send,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.parallelism.max(1))
            .build()
            .expect("thread pool");
        pool.install(|| branches.into_par_iter().map(&f).collect())
    }

    /// Runs `f` over the branches with `status`, keeping the others as they
    /// are. Events are returned grouped by branch, in branch order.
    fn per_branch<F>(&mut self, status: BranchStatus, f: F) -> Result<Vec<PendingEvent>, OrchestratorError>
    where
        F: Fn(&Job<'_>, BranchState) -> BranchResult + Sync + Send,
    {
        let all = std::mem::take(&mut self.record.branches);
        let (work, idle): (Vec<_>, Vec<_>) = all.iter().cloned().partition(|b| b.status == status);
        let results = {
            let job: &Job<'_> = self;
            job.in_parallel(work, |b| f(job, b))
        };
        let mut done = Vec::new();
        let mut events = Vec::new();
        let mut first_err = None;
        for r in results {
            match r {
                Ok((b, ev)) => {
                    done.push(b);
                    events.extend(ev);
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        if let Some(e) = first_err {
            self.record.branches = all;
            return Err(e);
        }
        let mut merged: Vec<BranchState> = done.into_iter().chain(idle).collect();
        merged.sort_by_key(|b| b.branch);
        self.record.branches = merged;
        Ok(events)
    }

    fn trace(&self, branch: u32, iteration: u32) -> TraceContext {
        TraceContext::branch(branch).with_iteration(iteration)
    }

    fn plan(&mut self) -> Result<Vec<PendingEvent>, OrchestratorError> {
        let b = self.engine.backends;
        let spec = &self.record.spec;
        let cues = analyze(&self.record.source, &self.store, b, b)?;
        let mut events = vec![PendingEvent::job(
            Agent::Planning,
            "analyzed",
            json!({
                "scene": cues.scene_summary,
                "entities": cues.ranked_entities(),
                "source_emotion": cues.source_emotion,
            }),
        )];

        let target = spec.target_emotion.clone();
        let settings = self.record.settings;
        let pool: Vec<FactorNode> = match target.in_domain() {
            Some(e) if self.engine.tree.nodes_for(e).next().is_some() => retrieve(
                self.engine.tree,
                &cues.cue_embedding,
                e,
                settings.top_k,
                settings.per_kind_cap,
            )?
            .into_iter()
            .cloned()
            .collect(),
            _ => Vec::new(),
        };
        let retrieved: Vec<String> = pool.iter().map(|n| n.id.clone()).collect();
        if pool.is_empty() {
            let reason = if target.is_in_domain() {
                "no factors for target"
            } else {
                "target outside the knowledge base"
            };
            events.push(PendingEvent::job(
                Agent::Planning,
                "proposer_fallback",
                json!({ "reason": reason }),
            ));
        } else {
            events.push(PendingEvent::job(
                Agent::Planning,
                "retrieved",
                json!({ "nodes": retrieved }),
            ));
        }

        let plans = generate_plans(
            &cues,
            &target,
            &pool,
            b,
            &PlanningOptions {
                k: spec.k,
                n_max: spec.n_max,
                seed: spec.seed,
            },
        )?;
        let mut branches = Vec::with_capacity(plans.plans.len());
        for plan in plans.plans {
            let k = plan.plan_id;
            self.run.write_json(&format!("plans/plan_{k}.json"), &plan)?;
            events.push(PendingEvent::branch(
                k,
                Agent::Planning,
                "plan_created",
                json!({
                    "plan_id": k,
                    "instructions": plan.instructions.iter().map(|i| i.text.as_str()).collect::<Vec<_>>(),
                }),
            ));
            branches.push(BranchState {
                branch: k,
                plan,
                current_image: self.record.source.clone(),
                iteration: 0,
                status: BranchStatus::PreCreation,
                history: Vec::new(),
                edit_calls: 0,
                rejection: None,
            });
        }
        self.record.cues = Some(cues);
        self.record.proposer_fallback = pool.is_empty();
        self.record.retrieved = retrieved;
        self.record.branches = branches;
        Ok(events)
    }

    fn exec_ctx(&self, trace: TraceContext) -> ExecutionContext<'_> {
        ExecutionContext {
            registry: self.engine.registry,
            backends: self.engine.backends,
            store: &self.store,
            retry_budget: self.record.spec.retry_budget,
            trace,
        }
    }

    /// Executes `instructions` on the branch's current image and assesses
    /// the result, persisting the step. Returns the new history entry.
    fn step(
        &self,
        b: &BranchState,
        iteration: u32,
        instructions: &[Instruction],
        events: &mut Vec<PendingEvent>,
    ) -> Result<HistoryEntry, OrchestratorError> {
        let k = b.branch;
        let tc = self.trace(k, iteration);
        let outcome = execute_instructions(instructions, &b.current_image, &self.exec_ctx(tc))?;
        let dir = format!("branches/{k}/step_{iteration}");
        self.run
            .write_bytes(&format!("{dir}/before"), &self.store.read(&b.current_image)?)?;
        self.run
            .write_bytes(&format!("{dir}/after"), &self.store.read(&outcome.image)?)?;
        self.run.write_json(&format!("{dir}/trace.json"), &outcome.traces)?;
        events.extend(trace_events(k, iteration, &outcome.traces));

        let assessment = assess(
            &outcome.image,
            Some(&self.record.source),
            &self.record.spec.target_emotion,
            self.engine.backends,
            &self.store,
            self.record.settings.pass_threshold,
            tc,
        )?;
        self.run
            .write_json(&format!("branches/{k}/assessment_{iteration}.json"), &assessment)?;
        let mut payload = assessment_payload(iteration, &assessment);
        payload["image"] = json!(short(&outcome.image));
        events.push(PendingEvent::branch(k, Agent::Critic, "assessed", payload));
        Ok(HistoryEntry {
            iteration,
            image: outcome.image,
            traces: outcome.traces,
            assessment,
            diagnosis: None,
        })
    }

    /// A branch is accepted once its image passes assessment and actually
    /// differs from the source; an untouched source is not a result.
    fn apply_step(&self, b: &mut BranchState, entry: HistoryEntry) {
        b.edit_calls += entry.traces.iter().map(ActionTrace::edit_calls).sum::<usize>();
        b.current_image = entry.image.clone();
        let changed = entry.image.content_hash != self.record.source.content_hash;
        b.status = if entry.assessment.passed() && changed {
            BranchStatus::Accepted
        } else {
            BranchStatus::Optimizing
        };
        b.history.push(entry);
    }

    fn status_event(b: &BranchState) -> PendingEvent {
        let mut payload = json!({"status": b.status.as_str(), "iteration": b.iteration});
        if let Some(r) = &b.rejection {
            payload["reason"] = json!(r);
        }
        PendingEvent::branch(b.branch, Agent::Orchestrator, "branch_status", payload)
    }

    fn precreate(&mut self) -> Result<Vec<PendingEvent>, OrchestratorError> {
        self.per_branch(BranchStatus::PreCreation, |job, mut b| {
            let mut events = Vec::new();
            let plan = b.plan.instructions.clone();
            let entry = job.step(&b, 0, &plan, &mut events)?;
            job.apply_step(&mut b, entry);
            events.push(Self::status_event(&b));
            Ok((b, events))
        })
    }

    fn optimize_branch(&self, mut b: BranchState) -> BranchResult {
        let k = b.branch;
        let n_max = self.record.spec.n_max;
        let mut events = Vec::new();
        while b.status == BranchStatus::Optimizing {
            if b.iteration >= self.record.spec.max_opt_iters {
                b.status = BranchStatus::Rejected;
                b.rejection = Some(format!(
                    "target emotion not reached after {} optimization pass(es)",
                    b.iteration
                ));
                events.push(Self::status_event(&b));
                break;
            }
            let i = b.iteration + 1;
            let traces: Vec<ActionTrace> =
                b.history.iter().flat_map(|h| h.traces.iter().cloned()).collect();
            let diagnosis = diagnose(
                &b.plan.instructions,
                &b.current_image,
                &self.record.spec.target_emotion,
                &traces,
                self.engine.backends,
                &self.store,
                self.trace(k, i),
            )?;
            self.run
                .write_json(&format!("branches/{k}/diagnosis_{i}.json"), &diagnosis)?;

            let mut redo: Vec<u32> = Vec::new();
            for item in &diagnosis.items {
                let pos = b
                    .plan
                    .instructions
                    .iter()
                    .position(|ins| ins.index == item.instruction_index)
                    .expect("diagnosis covers plan instructions");
                if let Some(rev) = &item.revised {
                    b.plan.instructions[pos] = rev.clone();
                    redo.push(item.instruction_index);
                } else if !item.executed {
                    redo.push(item.instruction_index);
                }
            }
            let mut escalated = None;
            if let Some(extra) = &diagnosis.escalation {
                let mut extra = extra.clone();
                if b.plan.instructions.len() < n_max {
                    extra.index = b.plan.instructions.len() as u32 + 1;
                    b.plan.instructions.push(extra.clone());
                } else {
                    extra.index = b.plan.instructions.len() as u32;
                    *b.plan.instructions.last_mut().expect("plans are non-empty") = extra.clone();
                }
                redo.push(extra.index);
                escalated = Some(extra);
            }
            events.push(PendingEvent::branch(
                k,
                Agent::Critic,
                "diagnosed",
                json!({
                    "iteration": i,
                    "items": diagnosis.items.iter().map(|d| json!({
                        "instruction": d.instruction_index,
                        "effective": d.effective,
                        "executed": d.executed,
                        "revised": d.revised.as_ref().map(|r| r.text.as_str()),
                    })).collect::<Vec<_>>(),
                    "escalation": escalated.as_ref().map(|e| json!({"index": e.index, "text": e.text})),
                }),
            ));
            b.history
                .last_mut()
                .expect("optimizing branches have a pre-creation step")
                .diagnosis = Some(diagnosis);

            let subset: Vec<Instruction> = b
                .plan
                .instructions
                .iter()
                .filter(|ins| redo.contains(&ins.index))
                .cloned()
                .collect();
            let entry = self.step(&b, i, &subset, &mut events)?;
            b.iteration = i;
            self.apply_step(&mut b, entry);
            events.push(Self::status_event(&b));
        }
        Ok((b, events))
    }

    fn optimize(&mut self) -> Result<Vec<PendingEvent>, OrchestratorError> {
        let mut events = self.per_branch(BranchStatus::Optimizing, |job, b| job.optimize_branch(b))?;
        for b in &self.record.branches {
            self.run
                .write_json(&format!("plans/plan_{}.json", b.branch), &b.plan as &EditPlan)?;
        }

        // accepted outputs must be pairwise distinct
        let mut seen: HashMap<String, u32> = HashMap::new();
        let mut outputs = Vec::new();
        for b in &mut self.record.branches {
            if b.status != BranchStatus::Accepted {
                continue;
            }
            if let Some(first) = seen.get(&b.current_image.content_hash) {
                b.status = BranchStatus::Rejected;
                b.rejection = Some(format!("output identical to branch {first}"));
                events.push(Self::status_event(b));
                continue;
            }
            seen.insert(b.current_image.content_hash.clone(), b.branch);
            let ext = b.current_image.uri.rsplit('.').next().unwrap_or("img");
            self.run.write_bytes(
                &format!("outputs/branch_{}.{ext}", b.branch),
                &self.store.read(&b.current_image)?,
            )?;
            let similarity = b.history.last().and_then(|h| h.assessment.source_similarity);
            outputs.push(OutputRecord {
                branch: b.branch,
                image: b.current_image.clone(),
                source_similarity: similarity,
                preserved: similarity.map(|s| s >= self.record.settings.preservation_floor),
            });
        }
        let accepted: Vec<u32> = outputs.iter().map(|o| o.branch).collect();
        let rejected: Vec<u32> = self
            .record
            .branches
            .iter()
            .filter(|b| b.status == BranchStatus::Rejected)
            .map(|b| b.branch)
            .collect();
        events.push(PendingEvent::job(
            Agent::Orchestrator,
            "job_finished",
            json!({"accepted": accepted, "rejected": rejected}),
        ));
        self.record.outputs = outputs;
        Ok(events)
    }
}
