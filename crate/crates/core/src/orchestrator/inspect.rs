use std::fmt::Write as _;
use std::path::Path;

use super::rundir::{RunDir, RECORD_FILE};
use super::{BranchState, JobRecord, OrchestratorError};
use crate::critic::EmotionAssessment;
use crate::editing::ActionTrace;

/// Renders a run directory as a readable report: plans, per-step execution
/// traces with every stage attempt, assessments and diagnoses. Never
/// modifies the directory; integrity problems are returned as errors.
pub fn inspect(run_dir: &Path) -> Result<String, OrchestratorError> {
    let run = RunDir::new(run_dir);
    run.verify(false)?;
    let record: JobRecord = run.read_json(RECORD_FILE)?;
    Ok(render(&record))
}

fn assessment_line(a: &EmotionAssessment) -> String {
    let verdict = if a.passed() { "pass" } else { "fail" };
    let mut line = match a.target.in_domain() {
        Some(e) => format!(
            "{verdict}  p({e})={:.3}  argmax={}",
            a.distribution.get(e),
            a.distribution.argmax()
        ),
        None => format!("{verdict}  (out-of-domain target {})", a.target),
    };
    if let Some(s) = a.source_similarity {
        let _ = write!(line, "  source_similarity={s:.3}");
    }
    line
}

fn render_traces(out: &mut String, traces: &[ActionTrace]) {
    for t in traces {
        let _ = writeln!(
            out,
            "      instruction {} [{}] \"{}\"",
            t.instruction_index,
            t.final_status.as_str(),
            t.directive
        );
        for r in &t.attempts {
            let _ = writeln!(
                out,
                "        attempt {}  {:<4} {:<16} {:<6} {}",
                r.attempt,
                r.stage.as_str(),
                r.tool,
                r.status.as_str(),
                r.detail
            );
        }
    }
}

fn render_branch(out: &mut String, b: &BranchState) {
    let _ = writeln!(
        out,
        "branch {}: {} after {} optimization pass(es), {} edit call(s)",
        b.branch,
        b.status.as_str(),
        b.iteration,
        b.edit_calls
    );
    if let Some(r) = &b.rejection {
        let _ = writeln!(out, "  reason: {r}");
    }
    let _ = writeln!(out, "  plan:");
    for ins in &b.plan.instructions {
        let _ = writeln!(out, "    {}. {} ({})", ins.index, ins.text, ins.method);
    }
    for h in &b.history {
        let _ = writeln!(out, "  step {} -> {}", h.iteration, h.image.short_hash());
        render_traces(out, &h.traces);
        let _ = writeln!(out, "    assessment: {}", assessment_line(&h.assessment));
        for r in &h.assessment.rationale {
            let _ = writeln!(out, "      - {r}");
        }
        if let Some(d) = &h.diagnosis {
            let _ = writeln!(out, "    diagnosis:");
            for item in &d.items {
                let state = match (item.effective, item.executed) {
                    (true, true) => "ok".to_string(),
                    (true, false) => format!(
                        "not executed: {}",
                        item.error_note.as_deref().unwrap_or("unknown")
                    ),
                    (false, _) => format!(
                        "ineffective, revised to \"{}\"",
                        item.revised.as_ref().map(|r| r.text.as_str()).unwrap_or("")
                    ),
                };
                let _ = writeln!(out, "      instruction {}: {state}", item.instruction_index);
            }
            if let Some(e) = &d.escalation {
                let _ = writeln!(out, "      escalation: \"{}\"", e.text);
            }
        }
    }
}

pub(super) fn render(record: &JobRecord) -> String {
    let spec = &record.spec;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "job: target={} k={} n_max={} retry_budget={} max_opt_iters={} seed={} profile={}",
        spec.target_emotion,
        spec.k,
        spec.n_max,
        spec.retry_budget,
        spec.max_opt_iters,
        spec.seed,
        spec.backend_profile
    );
    let _ = writeln!(out, "source: {}", record.source.uri);
    let _ = writeln!(out, "phase: {}", record.phase.as_str());
    if let Some(f) = &record.failure {
        let _ = writeln!(out, "failure during {}: {}", f.phase, f.message);
    }
    if let Some(c) = &record.cues {
        let _ = writeln!(out, "scene: {}", c.scene_summary);
        let _ = writeln!(out, "entities: {}", c.ranked_entities().join(", "));
    }
    if record.proposer_fallback {
        let _ = writeln!(out, "factors: proposed by the planner backend");
    } else if !record.retrieved.is_empty() {
        let _ = writeln!(out, "factors: {}", record.retrieved.join(", "));
    }
    for b in &record.branches {
        let _ = writeln!(out);
        render_branch(&mut out, b);
    }
    if record.phase == super::Phase::Complete {
        let _ = writeln!(out);
        let _ = writeln!(out, "outputs:");
        for o in &record.outputs {
            let preserved = match o.preserved {
                Some(true) => "  structure preserved",
                Some(false) => "  below preservation floor",
                None => "",
            };
            let _ = writeln!(out, "  branch {}: {}{preserved}", o.branch, o.image.uri);
        }
    }
    out
}
