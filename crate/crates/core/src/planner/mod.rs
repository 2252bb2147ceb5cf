//! The planner drives tool calls during a first execution.
//!
//! [`ScriptedPlanner`] replays a fixed invocation list per task description
//! and can inject faults. The `live` module speaks to a hosted
//! chat-completions endpoint.

pub mod live;

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::LoopTask;
use crate::tools::{Recorder, SandboxError, Tool, ToolArgs, ToolChain, ToolExecutor};

pub const DEFAULT_FIRST_EXEC_DEADLINE: Duration = Duration::from_secs(300);

const HANG_POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invocation {
    pub tool: Tool,
    pub args: ToolArgs,
}

impl Invocation {
    pub fn new(tool: Tool, args: ToolArgs) -> Self {
        Self { tool, args }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fault {
    #[default]
    None,
    RaiseException,
    Hang,
    InjectErrorResultAt {
        step: u32,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerScript {
    pub entries: BTreeMap<String, Vec<Invocation>>,
    #[serde(default)]
    pub fault: Fault,
}

impl PlannerScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_entry(mut self, description: impl Into<String>, plan: Vec<Invocation>) -> Self {
        self.entries.insert(description.into(), plan);
        self
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = fault;
        self
    }

    pub fn check(&self) -> Result<(), String> {
        for (description, plan) in &self.entries {
            for (i, inv) in plan.iter().enumerate() {
                if !inv.tool.args_match(&inv.args) {
                    return Err(format!(
                        "`{description}` step {}: {} expects arguments {:?}",
                        i + 1,
                        inv.tool,
                        inv.tool.arg_keys()
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, String> {
        let script: PlannerScript = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        script.check()?;
        Ok(script)
    }
}

/// Rewrites a call so the tool runtime answers with an in-band error.
fn force_error(inv: &mut Invocation) {
    let set = |args: &mut ToolArgs, key: &str, value: &str| {
        args.insert(key.to_string(), value.to_string());
    };
    match inv.tool {
        Tool::Bash => set(&mut inv.args, "command", "printf 'Error: injected failure\\n'; exit 1"),
        Tool::ReadFile => set(&mut inv.args, "path", ".injected-missing-file"),
        Tool::WriteFile => set(&mut inv.args, "path", ""),
        Tool::EditFile => set(&mut inv.args, "old_string", "\u{0}injected-unmatched\u{0}"),
    }
}

/// The invocation list for `description`, with an injected error applied.
pub fn scripted_plan(script: &PlannerScript, description: &str) -> Result<Vec<Invocation>, PlannerError> {
    let mut plan = script
        .entries
        .get(description)
        .cloned()
        .ok_or_else(|| PlannerError::PlanMissing(description.to_string()))?;
    if let Fault::InjectErrorResultAt { step } = script.fault {
        if let Some(inv) = (step as usize).checked_sub(1).and_then(|i| plan.get_mut(i)) {
            force_error(inv);
        }
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlannerError {
    #[error("no plan for task `{0}`")]
    PlanMissing(String),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("cancelled")]
    Cancelled,
    #[error("{0}")]
    Failed(String),
    #[error("transport: {0}")]
    Transport(String),
}

/// Tool access handed to a planner for one execution.
pub struct PlannerSession {
    recorder: Recorder,
    tools: Arc<dyn ToolExecutor>,
    workdir: PathBuf,
    cancel: Arc<AtomicBool>,
}

impl PlannerSession {
    pub fn new(recorder: Recorder, tools: Arc<dyn ToolExecutor>, workdir: impl Into<PathBuf>) -> Self {
        Self {
            recorder,
            tools,
            workdir: workdir.into(),
            cancel: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn call(&mut self, tool: Tool, args: ToolArgs) -> Result<String, PlannerError> {
        if self.is_cancelled() {
            return Err(PlannerError::Cancelled);
        }
        Ok(self.recorder.record(&*self.tools, tool, args, &self.workdir)?)
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancel.load(Ordering::SeqCst)
    }

    pub fn workdir(&self) -> &Path {
        &self.workdir
    }

    pub fn chain(&self) -> &ToolChain {
        self.recorder.chain()
    }

    pub fn into_recorder(self) -> Recorder {
        self.recorder
    }
}

pub trait Planner: Send + Sync {
    /// Carries out `task` by calling tools through `session`.
    fn plan(&self, task: &LoopTask, session: &mut PlannerSession) -> Result<(), PlannerError>;
}

impl<T: Planner + ?Sized> Planner for Arc<T> {
    fn plan(&self, task: &LoopTask, session: &mut PlannerSession) -> Result<(), PlannerError> {
        (**self).plan(task, session)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedPlanner {
    script: PlannerScript,
}

impl ScriptedPlanner {
    pub fn new(script: PlannerScript) -> Self {
        Self { script }
    }

    pub fn script(&self) -> &PlannerScript {
        &self.script
    }
}

impl Planner for ScriptedPlanner {
    fn plan(&self, task: &LoopTask, session: &mut PlannerSession) -> Result<(), PlannerError> {
        match self.script.fault {
            Fault::RaiseException => return Err(PlannerError::Failed("injected".into())),
            Fault::Hang => {
                while !session.is_cancelled() {
                    thread::sleep(HANG_POLL);
                }
                return Err(PlannerError::Cancelled);
            }
            Fault::None | Fault::InjectErrorResultAt { .. } => {}
        }
        for inv in scripted_plan(&self.script, &task.description)? {
            session.call(inv.tool, inv.args)?;
        }
        Ok(())
    }
}

/// Counts how often the wrapped planner is invoked.
pub struct CountingPlanner<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P: Planner> CountingPlanner<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<P: Planner> Planner for CountingPlanner<P> {
    fn plan(&self, task: &LoopTask, session: &mut PlannerSession) -> Result<(), PlannerError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.plan(task, session)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FirstExecOutcome {
    /// Every intercepted call, including ones whose result is an error.
    Recorded(ToolChain),
    Timeout,
    Exception(String),
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "planner panicked".to_string())
}

/// Runs `planner` on a background thread and waits at most `deadline`.
///
/// On expiry the session is cancelled and the worker is left to wind down
/// on its own; its partial chain is discarded.
pub fn run_planner(
    planner: Arc<dyn Planner>,
    task: &LoopTask,
    tools: Arc<dyn ToolExecutor>,
    workdir: &Path,
    recorder: Recorder,
    deadline: Duration,
) -> FirstExecOutcome {
    let mut session = PlannerSession::new(recorder, tools, workdir);
    let cancel = Arc::clone(&session.cancel);
    let task = task.clone();
    let (tx, rx) = mpsc::channel();
    let spawned = thread::Builder::new()
        .name(format!("planner-{}", task.id))
        .spawn(move || {
            let result = panic::catch_unwind(AssertUnwindSafe(|| planner.plan(&task, &mut session)));
            let _ = tx.send((result, session.into_recorder()));
        });
    if let Err(e) = spawned {
        return FirstExecOutcome::Exception(format!("cannot start planner worker: {e}"));
    }
    match rx.recv_timeout(deadline) {
        Ok((Ok(Ok(())), recorder)) => FirstExecOutcome::Recorded(recorder.into_chain()),
        Ok((Ok(Err(e)), _)) => FirstExecOutcome::Exception(e.to_string()),
        Ok((Err(payload), _)) => FirstExecOutcome::Exception(panic_message(&*payload)),
        Err(mpsc::RecvTimeoutError::Timeout) => {
            cancel.store(true, Ordering::SeqCst);
            FirstExecOutcome::Timeout
        }
        Err(mpsc::RecvTimeoutError::Disconnected) => {
            FirstExecOutcome::Exception("planner worker exited without a result".into())
        }
    }
}

/// Records the first execution of a pending task.
pub fn run_first_execution(
    task: &LoopTask,
    planner: Arc<dyn Planner>,
    tools: Arc<dyn ToolExecutor>,
    workdir: &Path,
    recorder: Recorder,
    deadline: Duration,
) -> FirstExecOutcome {
    if !task.first_exec_pending {
        return FirstExecOutcome::Exception(format!("task `{}` has no pending first execution", task.id));
    }
    run_planner(planner, task, tools, workdir, recorder, deadline)
}
