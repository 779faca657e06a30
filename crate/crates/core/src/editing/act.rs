use crate::artifact::{ImageArtifact, ImageStore};
use crate::backends::{
    BackendError, DetectRequest, DetectionBackend, EditBackend, EditRequest, ImageRef,
    ModelBackends, ProposeMode, ReviseRequest, Route, SegmentRequest, SegmentationBackend,
    TraceContext, ValidateRequest, ValidationBackend, VerdictKind,
};
use crate::planning::{EditPlan, Instruction};

use super::{
    ActionTrace, EditingError, SpatialPrior, Stage, StageRecord, StageStatus, ToolDescriptor,
    ToolRegistry,
};
use super::PriorSource;

pub const DEFAULT_RETRY_BUDGET: u32 = 2;

fn region_target(instruction: &Instruction) -> String {
    instruction
        .region_hint
        .clone()
        .unwrap_or_else(|| instruction.element.description().to_string())
}

/// Localizes the instruction's region when the tool needs a mask. An empty
/// detection is not an error: it yields a `none` prior, the fallback signal.
pub fn act_pre(
    instruction: &Instruction,
    image: &ImageArtifact,
    tool: &ToolDescriptor,
    detector: &dyn DetectionBackend,
    segmenter: &dyn SegmentationBackend,
    store: &ImageStore,
    trace: TraceContext,
) -> Result<SpatialPrior, BackendError> {
    let target = region_target(instruction);
    if !tool.modality.needs_mask() {
        return Ok(SpatialPrior::none(image.width, image.height, target));
    }
    let image_ref = ImageRef::from_artifact(store, image);
    let boxes = detector
        .detect(&DetectRequest {
            image: image_ref.clone(),
            phrase: target.clone(),
            trace,
        })?
        .boxes;
    // highest score, first on ties
    let Some(best) = boxes
        .iter()
        .copied()
        .reduce(|a, b| if b.score > a.score { b } else { a })
    else {
        return Ok(SpatialPrior::none(image.width, image.height, target));
    };
    let mask = segmenter
        .segment(&SegmentRequest {
            image: image_ref,
            bbox: best,
            trace,
        })?
        .mask;
    if (mask.width, mask.height) != (image.width, image.height) {
        return Err(BackendError::Malformed {
            route: Route::Segment,
            detail: format!(
                "mask is {}x{} but the image is {}x{}",
                mask.width, mask.height, image.width, image.height
            ),
        });
    }
    if mask.is_empty() {
        return Ok(SpatialPrior::none(image.width, image.height, target));
    }
    Ok(SpatialPrior {
        mask,
        source: PriorSource::Segmentation,
        target_entity: target,
    })
}

/// Runs the transformation and stores the candidate image.
#[allow(clippy::too_many_arguments)]
pub fn act_edit(
    instruction: &Instruction,
    image: &ImageArtifact,
    prior: &SpatialPrior,
    tool: &ToolDescriptor,
    editor: &dyn EditBackend,
    store: &ImageStore,
    trace: TraceContext,
) -> Result<ImageArtifact, EditingError> {
    if !tool.supports(instruction.method) {
        return Err(EditingError::UnsupportedMethod {
            tool: tool.name.clone(),
            method: instruction.method,
        });
    }
    let mask = if tool.modality.needs_mask() {
        if prior.is_none() {
            return Err(EditingError::MissingMask {
                tool: tool.name.clone(),
            });
        }
        Some(prior.mask.clone())
    } else {
        None
    };
    let reply = editor.edit(&EditRequest {
        tool: tool.name.clone(),
        image: ImageRef::from_artifact(store, image),
        directive: instruction.text.clone(),
        mask,
        reference: None,
        trace,
    })?;
    let after = (reply.image.width, reply.image.height);
    if after != (image.width, image.height) {
        return Err(EditingError::ResolutionChanged {
            before: (image.width, image.height),
            after,
        });
    }
    Ok(reply.image.adopt(store)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValVerdict {
    Ok,
    Failed(String),
}

/// Asks the self-critic whether `after` carries out the instruction.
pub fn act_val(
    instruction: &Instruction,
    before: &ImageArtifact,
    after: &ImageArtifact,
    tool: &ToolDescriptor,
    validator: &dyn ValidationBackend,
    store: &ImageStore,
    trace: TraceContext,
) -> Result<ValVerdict, BackendError> {
    let reply = validator.validate(&ValidateRequest {
        before: ImageRef::from_artifact(store, before),
        after: ImageRef::from_artifact(store, after),
        directive: instruction.text.clone(),
        tool: tool.name.clone(),
        trace,
    })?;
    Ok(match reply.verdict {
        VerdictKind::Ok => ValVerdict::Ok,
        VerdictKind::Failed => ValVerdict::Failed(reply.reason.unwrap_or_default()),
    })
}

pub struct ExecutionContext<'a> {
    pub registry: &'a ToolRegistry,
    pub backends: &'a dyn ModelBackends,
    pub store: &'a ImageStore,
    pub retry_budget: u32,
    /// Branch and iteration; instruction and attempt are filled in per call.
    pub trace: TraceContext,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionOutcome {
    pub image: ImageArtifact,
    pub traces: Vec<ActionTrace>,
}

impl ExecutionOutcome {
    pub fn edit_calls(&self) -> usize {
        self.traces.iter().map(ActionTrace::edit_calls).sum()
    }
}

struct Recorder {
    records: Vec<StageRecord>,
}

impl Recorder {
    fn push(&mut self, attempt: u32, stage: Stage, tool: &str, status: StageStatus, detail: impl Into<String>) {
        self.records.push(StageRecord {
            attempt,
            stage,
            tool: tool.to_string(),
            status,
            detail: detail.into(),
        });
    }
}

fn soft<T>(result: Result<T, BackendError>) -> Result<Result<T, String>, EditingError> {
    match result {
        Ok(v) => Ok(Ok(v)),
        Err(e) if e.is_unavailable() => Err(e.into()),
        Err(e) => Ok(Err(e.to_string())),
    }
}

/// Executes one instruction with at most `retry_budget` retries. The first
/// retry switches tools when another one supports the method; later retries
/// (or the first, when there is no alternative) ask the planner for revised
/// directive text. A mask tool whose detection comes back empty is swapped
/// for a text-guided tool without consuming a retry.
fn execute_one(
    instruction: &Instruction,
    image: &ImageArtifact,
    ctx: &ExecutionContext<'_>,
) -> Result<(ActionTrace, Option<ImageArtifact>), EditingError> {
    let idx = instruction.index;
    let order = ctx
        .registry
        .candidates(instruction.method, instruction.region_hint.is_some());
    let mut rec = Recorder { records: Vec::new() };
    if order.is_empty() {
        rec.push(0, Stage::Pre, "-", StageStatus::Failed, format!("no tool supports {}", instruction.method));
        return Ok((
            ActionTrace {
                instruction_index: idx,
                directive: instruction.text.clone(),
                attempts: rec.records,
                final_status: StageStatus::Failed,
                output_hash: None,
            },
            None,
        ));
    }

    let b = ctx.backends;
    let mut current = instruction.clone();
    let mut pos = 0usize;
    let mut tried = vec![false; order.len()];
    let mut detection_failed = false;
    let mut attempt = 0u32;
    let mut output = None;

    loop {
        let tool = order[pos];
        tried[pos] = true;
        let tc = ctx.trace.with_instruction(idx).with_attempt(attempt);
        let mut failure: Option<String> = None;

        let prior = match soft(act_pre(&current, image, tool, b, b, ctx.store, tc))? {
            Ok(p) => Some(p),
            Err(e) => {
                rec.push(attempt, Stage::Pre, &tool.name, StageStatus::Failed, e.clone());
                failure = Some(e);
                None
            }
        };
        if let Some(prior) = prior {
            if tool.modality.needs_mask() && prior.is_none() {
                detection_failed = true;
                let fallback = order.iter().position(|t| !t.modality.needs_mask());
                let mut detail = format!("no region found for {:?}", prior.target_entity);
                if let Some(f) = fallback {
                    detail.push_str(&format!("; rerouting to {}", order[f].name));
                    rec.push(attempt, Stage::Pre, &tool.name, StageStatus::Failed, detail);
                    pos = f;
                    continue;
                }
                rec.push(attempt, Stage::Pre, &tool.name, StageStatus::Failed, detail.clone());
                failure = Some(detail);
            } else {
                let detail = if tool.modality.needs_mask() {
                    format!("mask of {} px around {:?}", prior.mask.area(), prior.target_entity)
                } else {
                    "no spatial prior needed".to_string()
                };
                rec.push(attempt, Stage::Pre, &tool.name, StageStatus::Ok, detail);

                match act_edit(&current, image, &prior, tool, b, ctx.store, tc) {
                    Ok(after) => {
                        rec.push(attempt, Stage::Edit, &tool.name, StageStatus::Ok, format!("produced {}", after.short_hash()));
                        match soft(act_val(&current, image, &after, tool, b, ctx.store, tc))? {
                            Ok(ValVerdict::Ok) => {
                                rec.push(attempt, Stage::Val, &tool.name, StageStatus::Ok, "consistent with directive");
                                output = Some(after);
                                break;
                            }
                            Ok(ValVerdict::Failed(reason)) | Err(reason) => {
                                rec.push(attempt, Stage::Val, &tool.name, StageStatus::Failed, reason.clone());
                                failure = Some(reason);
                            }
                        }
                    }
                    Err(EditingError::Backend(e)) if !e.is_unavailable() => {
                        rec.push(attempt, Stage::Edit, &tool.name, StageStatus::Failed, e.to_string());
                        failure = Some(e.to_string());
                    }
                    Err(e @ EditingError::ResolutionChanged { .. }) => {
                        rec.push(attempt, Stage::Edit, &tool.name, StageStatus::Failed, e.to_string());
                        failure = Some(e.to_string());
                    }
                    Err(e) => return Err(e),
                }
            }
        }

        if attempt >= ctx.retry_budget {
            break;
        }
        attempt += 1;
        let reason = failure.unwrap_or_default();
        if attempt == 1 {
            let next = (0..order.len()).find(|&i| {
                !tried[i] && !(detection_failed && order[i].modality.needs_mask())
            });
            if let Some(next) = next {
                pos = next;
                continue;
            }
        }
        let revised = soft(b.revise(&ReviseRequest {
            mode: ProposeMode::Revise,
            instruction: current.text.clone(),
            method: current.method,
            failure_reason: reason,
            trace: ctx.trace.with_instruction(idx).with_attempt(attempt),
        }))?;
        match revised {
            Ok(r) => current.text = r.revised_text,
            Err(e) => log::warn!("instruction {idx}: revision request failed: {e}"),
        }
    }

    let final_status = if output.is_some() {
        StageStatus::Ok
    } else {
        StageStatus::Failed
    };
    Ok((
        ActionTrace {
            instruction_index: idx,
            directive: current.text,
            attempts: rec.records,
            final_status,
            output_hash: output.as_ref().map(|o| o.content_hash.clone()),
        },
        output,
    ))
}

/// Executes instructions in order. A failed instruction leaves the image
/// as it was and execution moves on; only an unreachable backend or a
/// broken artifact store aborts.
pub fn execute_instructions(
    instructions: &[Instruction],
    image: &ImageArtifact,
    ctx: &ExecutionContext<'_>,
) -> Result<ExecutionOutcome, EditingError> {
    let mut current = image.clone();
    let mut traces = Vec::with_capacity(instructions.len());
    for ins in instructions {
        let (trace, out) = execute_one(ins, &current, ctx)?;
        if let Some(out) = out {
            current = out;
        }
        traces.push(trace);
    }
    Ok(ExecutionOutcome {
        image: current,
        traces,
    })
}

pub fn execute_plan(
    plan: &EditPlan,
    image: &ImageArtifact,
    ctx: &ExecutionContext<'_>,
) -> Result<ExecutionOutcome, EditingError> {
    execute_instructions(&plan.instructions, image, ctx)
}
