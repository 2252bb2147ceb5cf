//! Deterministic replay of a compiled skill.
//!
//! The clock is sampled once per replay, so every step of one run sees the
//! same `{{current_time}}`. Step results are cleaned exactly as during
//! extraction before they are bound to `{{step_N_result}}`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::skill::{clean_result, format_date, LoopSkill, TimeFormat};
use crate::template::{self, Piece, Placeholder};
use crate::tools::{error_result, is_error_result, SandboxError, Tool, ToolArgs, ToolExecutor};
use crate::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayContext {
    pub now: Timestamp,
    pub results: BTreeMap<u32, String>,
    pub prev_content: Option<String>,
    pub time_format: TimeFormat,
}

impl ReplayContext {
    pub fn new(now: Timestamp, time_format: TimeFormat) -> Self {
        Self {
            now,
            results: BTreeMap::new(),
            prev_content: None,
            time_format,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResolveError {
    #[error("unresolved variable {{{{step_{0}_result}}}}")]
    MissingStep(u32),
    #[error("unresolved variable {{{{prev_content}}}}")]
    MissingPrevContent,
}

pub fn resolve_template(text: &str, ctx: &ReplayContext) -> Result<String, ResolveError> {
    let mut out = String::with_capacity(text.len());
    for piece in template::pieces(text) {
        match piece {
            Piece::Literal(literal) => out.push_str(literal),
            Piece::Slot(Placeholder::CurrentTime) => out.push_str(&ctx.time_format.format(ctx.now)),
            Piece::Slot(Placeholder::CurrentDate) => out.push_str(&format_date(ctx.now.date())),
            Piece::Slot(Placeholder::StepResult(n)) => {
                out.push_str(ctx.results.get(&n).ok_or(ResolveError::MissingStep(n))?)
            }
            Piece::Slot(Placeholder::PrevContent) => {
                out.push_str(ctx.prev_content.as_deref().ok_or(ResolveError::MissingPrevContent)?)
            }
        }
    }
    Ok(out)
}

fn resolve_args(args: &ToolArgs, ctx: &ReplayContext) -> Result<ToolArgs, ResolveError> {
    args.iter()
        .map(|(k, v)| Ok((k.clone(), resolve_template(v, ctx)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub original_step: u32,
    pub tool: Tool,
    pub args: ToolArgs,
    pub result: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReplayOutcome {
    Success {
        trace: Vec<TraceEntry>,
    },
    /// Execution stopped at `original_step`; `completed` holds the steps that
    /// ran before it. Their side effects are not rolled back.
    StepFailure {
        original_step: u32,
        result: String,
        completed: Vec<TraceEntry>,
    },
}

impl ReplayOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, ReplayOutcome::Success { .. })
    }

    pub fn trace(&self) -> &[TraceEntry] {
        match self {
            ReplayOutcome::Success { trace } => trace,
            ReplayOutcome::StepFailure { completed, .. } => completed,
        }
    }
}

/// Runs every step of `skill` in order through `tools`. Stops at the first
/// in-band error or unresolved variable.
pub fn replay(
    skill: &LoopSkill,
    tools: &dyn ToolExecutor,
    clock: &dyn Clock,
    workdir: &Path,
) -> Result<ReplayOutcome, SandboxError> {
    let mut ctx = ReplayContext::new(clock.now(), skill.time_format);
    let mut trace = Vec::with_capacity(skill.steps.len());
    for step in &skill.steps {
        let args = match resolve_args(&step.args, &ctx) {
            Ok(args) => args,
            Err(e) => {
                return Ok(ReplayOutcome::StepFailure {
                    original_step: step.original_step,
                    result: error_result(e),
                    completed: trace,
                })
            }
        };
        let result = tools.execute(step.tool, &args, workdir)?;
        if is_error_result(&result) {
            return Ok(ReplayOutcome::StepFailure {
                original_step: step.original_step,
                result,
                completed: trace,
            });
        }
        ctx.results
            .insert(step.original_step, clean_result(&result).to_string());
        if step.tool == Tool::ReadFile {
            ctx.prev_content = Some(result.clone());
        }
        trace.push(TraceEntry {
            original_step: step.original_step,
            tool: step.tool,
            args,
            result,
        });
    }
    Ok(ReplayOutcome::Success { trace })
}
