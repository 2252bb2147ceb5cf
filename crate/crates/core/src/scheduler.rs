//! Heartbeat scheduler: trigger predicates, the per-tick decision, and the
//! degradation paths that keep every task schedulable.
//!
//! First executions and planner fallbacks run on background workers under a
//! deadline. Replays run inline on the ticking thread, one task at a time.

use std::collections::BTreeSet;
use std::fmt;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use chrono::Timelike;
use log::Level;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, FixedClock};
use crate::planner::{self, FirstExecOutcome, Planner, DEFAULT_FIRST_EXEC_DEADLINE};
use crate::registry::{ActiveHours, LoopTask, Trigger};
use crate::replay::{self, ReplayOutcome};
use crate::skill::{self, CompileOptions, Failure, LoopSkill, SkillError, Validator};
use crate::store::{Store, StoreError};
use crate::tools::{Recorder, ToolExecutor};
use crate::Timestamp;

pub const DEFAULT_POLL_INTERVAL: Duration = Duration::from_secs(60);
/// Minutes either side of a schedule time in which it may fire.
pub const SCHEDULE_TOLERANCE_MINUTES: u16 = 5;

pub fn minutes_of_day(at: Timestamp) -> u16 {
    (at.hour() * 60 + at.minute()) as u16
}

/// True when the task never ran or at least one interval has elapsed.
pub fn is_due_interval(task: &LoopTask, now: Timestamp) -> bool {
    let Trigger::Interval(spec) = task.trigger else {
        return false;
    };
    match task.last_run {
        None => true,
        Some(last) => (now - last).num_minutes() >= i64::from(spec.minutes),
    }
}

fn in_schedule_window(at_minute: u16, now: Timestamp) -> bool {
    minutes_of_day(now).abs_diff(at_minute) <= SCHEDULE_TOLERANCE_MINUTES
}

pub fn is_due_schedule(task: &LoopTask, now: Timestamp) -> bool {
    let Trigger::Schedule(spec) = task.trigger else {
        return false;
    };
    in_schedule_window(spec.at_minute, now) && task.last_schedule_fire_date != Some(now.date())
}

/// Half-open `[start, end)` window, wrapping past midnight when
/// `start > end`.
pub fn in_active_hours(hours: Option<ActiveHours>, now: Timestamp) -> bool {
    let Some(hours) = hours else {
        return true;
    };
    let m = minutes_of_day(now);
    if hours.wraps_midnight() {
        m >= hours.start_minute || m < hours.end_minute
    } else {
        hours.start_minute <= m && m < hours.end_minute
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SkipReason {
    NotDue,
    OutsideActiveHours,
    AlreadyRanToday,
    PendingInFlight,
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    StartFirstExec,
    Replay,
    PlannerFallback,
    Skip(SkipReason),
}

impl Action {
    pub fn is_executable(self) -> bool {
        !matches!(self, Action::Skip(_))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::StartFirstExec => f.write_str("start_first_exec"),
            Action::Replay => f.write_str("replay"),
            Action::PlannerFallback => f.write_str("planner_fallback"),
            Action::Skip(_) => f.write_str("skip"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickDecision {
    pub task_id: String,
    pub action: Action,
}

impl TickDecision {
    /// `ts level task_id action reason`
    pub fn log_line(&self, now: Timestamp) -> String {
        let reason = match self.action {
            Action::Skip(reason) => format!("{reason:?}"),
            Action::StartFirstExec => "FirstExecPending".into(),
            Action::Replay => "SkillLoaded".into(),
            Action::PlannerFallback => "NoSkill".into(),
        };
        log_line(now, Level::Info, &self.task_id, &self.action.to_string(), &reason)
    }
}

fn log_line(now: Timestamp, level: Level, task_id: &str, action: &str, reason: &str) -> String {
    format!("{} {level} {task_id} {action} {reason}", now.format("%Y-%m-%dT%H:%M:%S"))
}

/// Decides what one tick does with `task`. `skill_loads` reports whether a
/// skill reference resolves to a loadable skill.
pub fn decide(
    task: &LoopTask,
    now: Timestamp,
    in_flight: &BTreeSet<String>,
    skill_loads: impl FnOnce(&str) -> bool,
) -> TickDecision {
    let action = decide_action(task, now, in_flight, skill_loads);
    TickDecision {
        task_id: task.id.clone(),
        action,
    }
}

fn decide_action(
    task: &LoopTask,
    now: Timestamp,
    in_flight: &BTreeSet<String>,
    skill_loads: impl FnOnce(&str) -> bool,
) -> Action {
    if !task.enabled {
        return Action::Skip(SkipReason::Disabled);
    }
    if !in_active_hours(task.active_hours, now) {
        return Action::Skip(SkipReason::OutsideActiveHours);
    }
    if in_flight.contains(&task.id) {
        return Action::Skip(SkipReason::PendingInFlight);
    }
    let due = match task.trigger {
        Trigger::Interval(_) => is_due_interval(task, now),
        Trigger::Schedule(spec) => {
            if !in_schedule_window(spec.at_minute, now) {
                return Action::Skip(SkipReason::NotDue);
            }
            if task.last_schedule_fire_date == Some(now.date()) {
                return Action::Skip(SkipReason::AlreadyRanToday);
            }
            true
        }
    };
    if !due {
        return Action::Skip(SkipReason::NotDue);
    }
    if task.first_exec_pending {
        return Action::StartFirstExec;
    }
    match &task.skill_ref {
        Some(skill_ref) if skill_loads(skill_ref) => Action::Replay,
        _ => Action::PlannerFallback,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    EmptyChain,
    ContainsEditFile,
    ErrorKeyword,
    NoWriteFile,
    FirstExecTimeout,
    FirstExecException,
    ReplayStepFailure,
    UserRemove,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::EmptyChain,
        Scenario::ContainsEditFile,
        Scenario::ErrorKeyword,
        Scenario::NoWriteFile,
        Scenario::FirstExecTimeout,
        Scenario::FirstExecException,
        Scenario::ReplayStepFailure,
        Scenario::UserRemove,
    ];

    pub fn action(self) -> &'static str {
        match self {
            Scenario::EmptyChain
            | Scenario::ContainsEditFile
            | Scenario::ErrorKeyword
            | Scenario::NoWriteFile => "No skill; LLM fallback",
            Scenario::FirstExecTimeout | Scenario::FirstExecException => "Clear pending; LLM fallback",
            Scenario::ReplayStepFailure => "Log error; retry next tick",
            Scenario::UserRemove => "Delete task + skill dir",
        }
    }

    /// The recorded chain failed the replay-safety check.
    pub fn is_validation(self) -> bool {
        matches!(
            self,
            Scenario::EmptyChain | Scenario::ContainsEditFile | Scenario::ErrorKeyword | Scenario::NoWriteFile
        )
    }

    pub fn from_failure(failure: Failure) -> Self {
        match failure {
            Failure::EmptyChain => Scenario::EmptyChain,
            Failure::ContainsEditFile => Scenario::ContainsEditFile,
            Failure::ErrorKeywordInResult(_) => Scenario::ErrorKeyword,
            Failure::NoWriteFile => Scenario::NoWriteFile,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegradationEvent {
    pub task_id: String,
    pub scenario: Scenario,
    pub action_taken: String,
    pub detail: String,
}

impl DegradationEvent {
    fn new(task_id: &str, scenario: Scenario, detail: impl Into<String>) -> Self {
        Self {
            task_id: task_id.to_string(),
            scenario,
            action_taken: scenario.action().to_string(),
            detail: detail.into(),
        }
    }

    pub fn log_line(&self, now: Timestamp) -> String {
        let action: String = self
            .action_taken
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
            .collect::<String>()
            .split('_')
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join("_");
        log_line(now, Level::Warn, &self.task_id, &action, &self.scenario.to_string())
    }
}

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error("task `{0}` already has an execution in flight")]
    InFlight(String),
    #[error("task `{0}` has no skill attached")]
    NoSkill(String),
    #[error("cannot prepare working directory {path}: {source}")]
    Workdir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct SchedulerConfig {
    pub first_exec_deadline: Duration,
    /// Each task runs in `work_root/<task id>`.
    pub work_root: PathBuf,
    pub validator: Validator,
    pub compile: CompileOptions,
}

impl SchedulerConfig {
    pub fn new(work_root: impl Into<PathBuf>) -> Self {
        Self {
            first_exec_deadline: DEFAULT_FIRST_EXEC_DEADLINE,
            work_root: work_root.into(),
            validator: Validator::default(),
            compile: CompileOptions::default(),
        }
    }

    pub fn with_deadline(mut self, deadline: Duration) -> Self {
        self.first_exec_deadline = deadline;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TickReport {
    pub decisions: Vec<TickDecision>,
    /// Events raised during the tick, plus those from background workers
    /// that finished since the previous drain.
    pub events: Vec<DegradationEvent>,
    /// Outcome of each replay run inline, by task id.
    pub replays: Vec<(String, ReplayOutcome)>,
    /// Store failures that were logged and skipped.
    pub errors: Vec<String>,
}

#[derive(Clone)]
pub struct Scheduler {
    inner: Arc<Inner>,
}

struct Inner {
    store: Arc<Store>,
    planner: Arc<dyn Planner>,
    tools: Arc<dyn ToolExecutor>,
    config: SchedulerConfig,
    in_flight: Mutex<BTreeSet<String>>,
    events: Mutex<Vec<DegradationEvent>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Removes the task from the in-flight set when dropped.
struct FlightGuard<'a> {
    inner: &'a Inner,
    task_id: String,
}

impl Drop for FlightGuard<'_> {
    fn drop(&mut self) {
        lock(&self.inner.in_flight).remove(&self.task_id);
    }
}

impl Inner {
    fn claim(&self, task_id: &str) -> Option<FlightGuard<'_>> {
        lock(&self.in_flight).insert(task_id.to_string()).then(|| FlightGuard {
            inner: self,
            task_id: task_id.to_string(),
        })
    }

    fn emit(&self, now: Timestamp, event: DegradationEvent) {
        log::warn!("{}", event.log_line(now));
        lock(&self.events).push(event);
    }

    fn store_error(&self, now: Timestamp, task_id: &str, what: &str, error: &dyn fmt::Display) {
        log::error!(
            "{}",
            log_line(now, Level::Error, task_id, what, &error.to_string().replace(char::is_whitespace, "_"))
        );
    }

    fn workdir(&self, task_id: &str) -> Result<PathBuf, SchedulerError> {
        let path = self.config.work_root.join(task_id);
        std::fs::create_dir_all(&path).map_err(|source| SchedulerError::Workdir {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }

    /// Runs a recording and applies its outcome to the store. Blocks for at
    /// most the configured deadline.
    fn first_execution(&self, task: &LoopTask, now: Timestamp) -> Result<Option<DegradationEvent>, SchedulerError> {
        let workdir = self.workdir(&task.id)?;
        let outcome = planner::run_first_execution(
            task,
            Arc::clone(&self.planner),
            Arc::clone(&self.tools),
            &workdir,
            Recorder::new(),
            self.config.first_exec_deadline,
        );
        let event = match outcome {
            FirstExecOutcome::Recorded(chain) => {
                let report = self.config.validator.validate(&chain);
                if let Some(&failure) = report.failures.first() {
                    self.store.set_pending(&task.id, false)?;
                    self.store.mark_run(&task.id, now)?;
                    Some(DegradationEvent::new(&task.id, Scenario::from_failure(failure), report.to_string()))
                } else {
                    let ctx = skill::collect_info(&chain);
                    match skill::build_steps_with(&self.config.compile, &task.id, &chain, &ctx, now) {
                        Ok(compiled) => {
                            let skill_ref = skill::save_skill(&self.store, &compiled)?;
                            self.store.attach_skill(&task.id, &skill_ref)?;
                            log::info!("{}", log_line(now, Level::Info, &task.id, "skill_compiled", &skill_ref));
                        }
                        Err(e) => {
                            self.store_error(now, &task.id, "compile_failed", &e);
                            self.store.set_pending(&task.id, false)?;
                        }
                    }
                    self.store.mark_run(&task.id, now)?;
                    None
                }
            }
            FirstExecOutcome::Timeout => {
                self.store.set_pending(&task.id, false)?;
                Some(DegradationEvent::new(
                    &task.id,
                    Scenario::FirstExecTimeout,
                    format!("no result within {:?}", self.config.first_exec_deadline),
                ))
            }
            FirstExecOutcome::Exception(message) => {
                self.store.set_pending(&task.id, false)?;
                Some(DegradationEvent::new(&task.id, Scenario::FirstExecException, message))
            }
        };
        if let Some(event) = &event {
            self.emit(now, event.clone());
        }
        Ok(event)
    }

    /// A planner run that is not recorded. The run counts as the task's
    /// execution whatever its outcome, so a failing planner is retried on
    /// the next due tick rather than every tick.
    fn planner_fallback(&self, task: &LoopTask, now: Timestamp) -> Result<FirstExecOutcome, SchedulerError> {
        let workdir = self.workdir(&task.id)?;
        let outcome = planner::run_planner(
            Arc::clone(&self.planner),
            task,
            Arc::clone(&self.tools),
            &workdir,
            Recorder::disabled(),
            self.config.first_exec_deadline,
        );
        let reason = match &outcome {
            FirstExecOutcome::Recorded(_) => "completed".to_string(),
            FirstExecOutcome::Timeout => "timeout".to_string(),
            FirstExecOutcome::Exception(message) => format!("exception:{}", message.replace(char::is_whitespace, "_")),
        };
        log::info!("{}", log_line(now, Level::Info, &task.id, "planner_fallback_done", &reason));
        self.store.mark_run(&task.id, now)?;
        Ok(outcome)
    }

    fn replay(&self, task: &LoopTask, skill: &LoopSkill, now: Timestamp) -> Result<ReplayOutcome, SchedulerError> {
        let workdir = self.workdir(&task.id)?;
        let outcome = match replay::replay(skill, &*self.tools, &FixedClock(now), &workdir) {
            Ok(outcome) => outcome,
            Err(sandbox) => ReplayOutcome::StepFailure {
                original_step: 0,
                result: format!("Error: {sandbox}"),
                completed: Vec::new(),
            },
        };
        match &outcome {
            ReplayOutcome::Success { .. } => self.store.mark_run(&task.id, now)?,
            ReplayOutcome::StepFailure {
                original_step, result, ..
            } => {
                // Interval tasks stay due; schedule tasks keep same-day dedup.
                self.store.mark_schedule_fired(&task.id, now.date())?;
                self.emit(
                    now,
                    DegradationEvent::new(
                        &task.id,
                        Scenario::ReplayStepFailure,
                        format!("step {original_step}: {result}"),
                    ),
                );
            }
        }
        Ok(outcome)
    }
}

impl Scheduler {
    pub fn new(
        store: Arc<Store>,
        planner: Arc<dyn Planner>,
        tools: Arc<dyn ToolExecutor>,
        config: SchedulerConfig,
    ) -> Self {
        Self {
            inner: Arc::new(Inner {
                store,
                planner,
                tools,
                config,
                in_flight: Mutex::new(BTreeSet::new()),
                events: Mutex::new(Vec::new()),
                workers: Mutex::new(Vec::new()),
            }),
        }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.inner.store
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.inner.config
    }

    pub fn in_flight(&self) -> BTreeSet<String> {
        lock(&self.inner.in_flight).clone()
    }

    /// Events raised since the last drain.
    pub fn drain_events(&self) -> Vec<DegradationEvent> {
        std::mem::take(&mut *lock(&self.inner.events))
    }

    /// Blocks until every background worker started so far has finished.
    pub fn wait_idle(&self) {
        loop {
            let workers = std::mem::take(&mut *lock(&self.inner.workers));
            if workers.is_empty() {
                return;
            }
            for worker in workers {
                let _ = worker.join();
            }
        }
    }

    /// One pass over every task, in id order.
    pub fn tick(&self, now: Timestamp) -> TickReport {
        let mut report = TickReport::default();
        let config = match self.inner.store.load_config() {
            Ok(config) => config,
            Err(e) => {
                self.inner.store_error(now, "-", "load_config", &e);
                report.errors.push(e.to_string());
                report.events = self.drain_events();
                return report;
            }
        };
        for task in config.tasks.values() {
            let in_flight = self.in_flight();
            let mut loaded = None;
            let decision = decide(task, now, &in_flight, |skill_ref| {
                match skill::load_skill(&self.inner.store, skill_ref) {
                    Ok(skill) => {
                        loaded = Some(skill);
                        true
                    }
                    Err(e) => {
                        self.inner.store_error(now, &task.id, "skill_unloadable", &e);
                        false
                    }
                }
            });
            log::info!("{}", decision.log_line(now));
            let result = match decision.action {
                Action::StartFirstExec => self.spawn(task.clone(), now, true),
                Action::PlannerFallback => self.spawn(task.clone(), now, false),
                Action::Replay => match (loaded.take(), self.inner.claim(&task.id)) {
                    (Some(skill), Some(_guard)) => self
                        .inner
                        .replay(task, &skill, now)
                        .map(|outcome| report.replays.push((task.id.clone(), outcome))),
                    _ => Ok(()),
                },
                Action::Skip(_) => Ok(()),
            };
            if let Err(e) = result {
                self.inner.store_error(now, &task.id, "action_failed", &e);
                report.errors.push(format!("{}: {e}", task.id));
            }
            report.decisions.push(decision);
        }
        report.events = self.drain_events();
        report
    }

    fn spawn(&self, task: LoopTask, now: Timestamp, first: bool) -> Result<(), SchedulerError> {
        if !lock(&self.inner.in_flight).insert(task.id.clone()) {
            return Err(SchedulerError::InFlight(task.id));
        }
        let inner = Arc::clone(&self.inner);
        let task_id = task.id.clone();
        let handle = thread::Builder::new()
            .name(format!("exec-{}", task.id))
            .spawn(move || {
                let _guard = FlightGuard {
                    inner: &inner,
                    task_id: task.id.clone(),
                };
                let result = panic::catch_unwind(AssertUnwindSafe(|| {
                    if first {
                        inner.first_execution(&task, now).map(drop)
                    } else {
                        inner.planner_fallback(&task, now).map(drop)
                    }
                }));
                match result {
                    Ok(Ok(())) => {}
                    Ok(Err(e)) => inner.store_error(now, &task.id, "worker_failed", &e),
                    Err(_) => inner.store_error(now, &task.id, "worker_panicked", &"panic"),
                }
            });
        match handle {
            Ok(handle) => {
                lock(&self.inner.workers).push(handle);
                Ok(())
            }
            Err(source) => {
                lock(&self.inner.in_flight).remove(&task_id);
                Err(SchedulerError::Workdir {
                    path: self.inner.config.work_root.clone(),
                    source,
                })
            }
        }
    }

    /// Recovery after a restart: a task still marked pending was cut off
    /// mid-recording. It stays pending so it records again; any partial
    /// skill directory is removed. Returns the affected ids.
    pub fn startup_sweep(&self) -> Result<Vec<String>, SchedulerError> {
        let store = &self.inner.store;
        let config = store.load_config()?;
        let mut swept = Vec::new();
        for task in config.tasks.values().filter(|t| t.first_exec_pending) {
            let dir = store.skill_dir(&task.id);
            if dir.exists() {
                std::fs::remove_dir_all(&dir).map_err(|source| StoreError::Io {
                    path: dir.clone(),
                    source,
                })?;
            }
            swept.push(task.id.clone());
        }
        Ok(swept)
    }

    /// Deletes the task and its skill directory.
    pub fn remove_task(&self, id: &str, now: Timestamp) -> Result<Option<DegradationEvent>, SchedulerError> {
        if !self.inner.store.remove_task(id)? {
            return Ok(None);
        }
        let event = DegradationEvent::new(id, Scenario::UserRemove, "removed by user");
        self.inner.emit(now, event.clone());
        Ok(Some(event))
    }

    /// Discards any attached skill and records the task again, now.
    pub fn force_first_execution(&self, id: &str, now: Timestamp) -> Result<Option<DegradationEvent>, SchedulerError> {
        let _guard = self
            .inner
            .claim(id)
            .ok_or_else(|| SchedulerError::InFlight(id.to_string()))?;
        self.inner.store.set_pending(id, true)?;
        let task = self.inner.store.get_task(id)?;
        self.inner.first_execution(&task, now)
    }

    /// Replays the attached skill now, regardless of the trigger.
    pub fn force_replay(&self, id: &str, now: Timestamp) -> Result<ReplayOutcome, SchedulerError> {
        let _guard = self
            .inner
            .claim(id)
            .ok_or_else(|| SchedulerError::InFlight(id.to_string()))?;
        let task = self.inner.store.get_task(id)?;
        let skill_ref = task
            .skill_ref
            .as_deref()
            .ok_or_else(|| SchedulerError::NoSkill(id.to_string()))?;
        let skill = skill::load_skill(&self.inner.store, skill_ref)?;
        self.inner.replay(&task, &skill, now)
    }

    /// Puts a task back into recording mode; the next due tick records it.
    pub fn recompile(&self, id: &str) -> Result<(), SchedulerError> {
        if lock(&self.inner.in_flight).contains(id) {
            return Err(SchedulerError::InFlight(id.to_string()));
        }
        let store = &self.inner.store;
        store.set_pending(id, true)?;
        let dir = store.skill_dir(id);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|source| StoreError::Io { path: dir, source })?;
        }
        Ok(())
    }
}

/// Cross-thread stop signal for the poll loop.
#[derive(Debug, Default)]
pub struct Shutdown {
    stopped: Mutex<bool>,
    cv: Condvar,
}

impl Shutdown {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn signal(&self) {
        *lock(&self.stopped) = true;
        self.cv.notify_all();
    }

    pub fn is_signalled(&self) -> bool {
        *lock(&self.stopped)
    }

    /// Waits up to `timeout`; true once signalled.
    pub fn wait_timeout(&self, timeout: Duration) -> bool {
        let guard = lock(&self.stopped);
        let (guard, _) = self
            .cv
            .wait_timeout_while(guard, timeout, |stopped| !*stopped)
            .unwrap_or_else(|e| e.into_inner());
        *guard
    }
}

/// Calls `tick` every `poll_interval` until `shutdown` is signalled. A
/// panicking tick is logged and the loop carries on. Returns the number of
/// ticks started.
pub fn run_poll_loop(poll_interval: Duration, shutdown: &Shutdown, mut tick: impl FnMut()) -> usize {
    let mut ticks = 0;
    while !shutdown.is_signalled() {
        ticks += 1;
        if panic::catch_unwind(AssertUnwindSafe(&mut tick)).is_err() {
            log::error!("tick {ticks} panicked; continuing");
        }
        if shutdown.wait_timeout(poll_interval) {
            break;
        }
    }
    ticks
}

/// Runs the scheduler until `shutdown`. Workers still running at shutdown
/// are abandoned; their tasks stay pending and are swept on next start.
pub fn run_daemon(scheduler: &Scheduler, clock: &dyn Clock, poll_interval: Duration, shutdown: &Shutdown) -> usize {
    match scheduler.startup_sweep() {
        Ok(swept) if !swept.is_empty() => log::info!("re-recording interrupted tasks: {}", swept.join(", ")),
        Ok(_) => {}
        Err(e) => log::error!("startup sweep failed: {e}"),
    }
    run_poll_loop(poll_interval, shutdown, || {
        scheduler.tick(clock.now());
    })
}
