//! Fixtures, random chain generators and independent oracles shared by the
//! integration tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use chrono::{NaiveDate, NaiveDateTime};
use loopskill_core::planner::{Invocation, PlannerScript};
use loopskill_core::tools::{args, MemoryTools};
use loopskill_core::{TimeFormat, Tool, ToolChain};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;

pub const WEATHER: &str = "query-weather";
pub const WEATHER_LOG: &str = "weather.log";

pub fn ts(text: &str) -> NaiveDateTime {
    NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S").unwrap()
}

pub fn weather_plan() -> Vec<Invocation> {
    vec![
        Invocation::new(Tool::Bash, args([("command", "date +%Y-%m-%dT%H:%M:%S")])),
        Invocation::new(Tool::Bash, args([("command", "weather Beijing")])),
        Invocation::new(
            Tool::WriteFile,
            args([
                ("path", WEATHER_LOG),
                ("content", "2025-06-01T08:30:00 Beijing, sunny, 25C\n"),
            ]),
        ),
    ]
}

pub fn weather_script() -> PlannerScript {
    PlannerScript::new().with_entry(WEATHER, weather_plan())
}

/// Stub tools answering the weather plan as it ran at 2025-06-01T08:30:00.
pub fn weather_tools(report: &str) -> Arc<MemoryTools> {
    Arc::new(
        MemoryTools::new()
            .with_command("date +%Y-%m-%dT%H:%M:%S", "2025-06-01T08:30:00\n")
            .with_command("weather Beijing", format!("{report}\n")),
    )
}

pub fn weather_chain() -> ToolChain {
    let mut chain = ToolChain::new();
    chain.push(
        Tool::Bash,
        args([("command", "date +%Y-%m-%dT%H:%M:%S")]),
        "2025-06-01T08:30:00\n".into(),
    );
    chain.push(
        Tool::Bash,
        args([("command", "weather Beijing")]),
        "Beijing, sunny, 25C\n".into(),
    );
    chain.push(
        Tool::WriteFile,
        args([
            ("path", WEATHER_LOG),
            ("content", "2025-06-01T08:30:00 Beijing, sunny, 25C\n"),
        ]),
        "ok: wrote 40 bytes to weather.log".into(),
    );
    chain
}

pub fn short_deadline() -> Duration {
    Duration::from_millis(150)
}

// ---------------------------------------------------------------------------
// Oracle: placeholder expansion written against the documented token grammar
// with a regex, independent of the library's scanner.

pub struct Bindings<'a> {
    pub now: NaiveDateTime,
    pub time_format: TimeFormat,
    pub results: &'a BTreeMap<u32, String>,
    pub prev_content: Option<&'a str>,
}

fn oracle_time(now: NaiveDateTime, format: TimeFormat) -> String {
    let pattern = match format {
        TimeFormat::IsoSecondsT => "%Y-%m-%dT%H:%M:%S",
        TimeFormat::IsoSecondsSpace => "%Y-%m-%d %H:%M:%S",
        TimeFormat::IsoMinutesT => "%Y-%m-%dT%H:%M",
        TimeFormat::IsoMinutesSpace => "%Y-%m-%d %H:%M",
    };
    now.format(pattern).to_string()
}

pub fn oracle_expand(template: &str, b: &Bindings<'_>) -> Option<String> {
    let token = Regex::new(r"\{\{(current_time|current_date|prev_content|step_([1-9][0-9]*)_result)\}\}").unwrap();
    let mut out = String::new();
    let mut last = 0;
    for caps in token.captures_iter(template) {
        let whole = caps.get(0).unwrap();
        out.push_str(&template[last..whole.start()]);
        let value = match &caps[1] {
            "current_time" => oracle_time(b.now, b.time_format),
            "current_date" => b.now.format("%Y-%m-%d").to_string(),
            "prev_content" => b.prev_content?.to_string(),
            _ => b.results.get(&caps[2].parse::<u32>().ok()?)?.clone(),
        };
        out.push_str(&value);
        last = whole.end();
    }
    out.push_str(&template[last..]);
    Some(out)
}

// ---------------------------------------------------------------------------
// Random small recordings.

const WORDS: [&str; 14] = [
    "sunny", "rain", "beijing", "cpu", "load", "disk", "ok", "mem", "free", "queue", "depth", "north",
    "wind", "steady",
];
const SEPARATORS: [&str; 4] = [" ", " | ", "\n", ", "];

pub struct RandomRecording {
    pub chain: ToolChain,
    pub now: NaiveDateTime,
    pub format: TimeFormat,
}

fn phrase(rng: &mut StdRng) -> String {
    let n = rng.gen_range(1..=4);
    let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    words.join(if rng.gen_bool(0.3) { ", " } else { " " })
}

fn padded(rng: &mut StdRng, core: &str) -> String {
    let pads = ["", " ", "\n", "  ", "\t"];
    format!("{}{core}{}", pads.choose(rng).unwrap(), pads.choose(rng).unwrap())
}

/// A chain of a `date` call, one to four probes, an optional read of the
/// output file, and one write composed from those values, the recording
/// time and filler.
pub fn random_recording(rng: &mut StdRng) -> RandomRecording {
    let base = NaiveDate::from_ymd_opt(2025, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let now = base + chrono::Duration::seconds(rng.gen_range(0..365 * 86_400));
    let format = *[
        TimeFormat::IsoSecondsT,
        TimeFormat::IsoSecondsSpace,
        TimeFormat::IsoMinutesT,
        TimeFormat::IsoMinutesSpace,
    ]
    .choose(rng)
    .unwrap();

    let mut chain = ToolChain::new();
    chain.push(
        Tool::Bash,
        args([("command", "date")]),
        format!("{}\n", oracle_time(now, format)),
    );
    let mut values: Vec<String> = Vec::new();
    for i in 0..rng.gen_range(1..=4) {
        let value = if !values.is_empty() && rng.gen_bool(0.4) {
            // Nest an earlier value inside a longer one.
            format!("{} {}", values.choose(rng).unwrap(), phrase(rng))
        } else {
            phrase(rng)
        };
        chain.push(Tool::Bash, args([("command", format!("probe {i}"))]), padded(rng, &value));
        values.push(value);
    }
    let out_path = if rng.gen_bool(0.5) { "log.txt" } else { "out.txt" };
    let mut snippet = None;
    if rng.gen_bool(0.5) {
        let lines = rng.gen_range(0..3);
        let text: String = (0..lines)
            .map(|k| {
                let old = now - chrono::Duration::minutes(30 * (k + 1));
                format!("= {} =\n", oracle_time(old, format))
            })
            .collect();
        chain.push(Tool::ReadFile, args([("path", out_path)]), text.clone());
        snippet = Some(text);
    }

    let mut pieces: Vec<String> = Vec::new();
    for _ in 0..rng.gen_range(1..=6) {
        let piece = match rng.gen_range(0..5) {
            0 => values.choose(rng).unwrap().clone(),
            1 => oracle_time(now, format),
            2 => now.format("%Y-%m-%d").to_string(),
            3 => phrase(rng),
            _ => values.choose(rng).unwrap().clone(),
        };
        pieces.push(piece);
    }
    let mut content = String::new();
    if let Some(s) = snippet.as_ref().filter(|_| rng.gen_bool(0.7)) {
        content.push_str(s);
    }
    for (k, piece) in pieces.iter().enumerate() {
        if k > 0 {
            content.push_str(SEPARATORS.choose(rng).unwrap());
        }
        content.push_str(piece);
    }
    content.push('\n');
    let len = content.len();
    chain.push(
        Tool::WriteFile,
        args([("path", out_path), ("content", content.as_str())]),
        format!("ok: wrote {len} bytes to {out_path}"),
    );
    RandomRecording { chain, now, format }
}

/// Cleaned step results and the latest raw read before each step.
pub fn recorded_bindings(chain: &ToolChain) -> (BTreeMap<u32, String>, BTreeMap<u32, Option<String>>) {
    let mut results = BTreeMap::new();
    let mut prev = BTreeMap::new();
    let mut last_read: Option<String> = None;
    for call in &chain.calls {
        prev.insert(call.step, last_read.clone());
        results.insert(call.step, call.result.trim().to_string());
        if call.tool == Tool::ReadFile {
            last_read = Some(call.result.clone());
        }
    }
    (results, prev)
}

// ---------------------------------------------------------------------------
// Nested candidate sets for the non-fragmentation property.

pub struct NestedCase {
    pub chain: ToolChain,
    /// Step of each distinct value.
    pub steps: BTreeMap<String, u32>,
    /// Values in the order they appear in the write content.
    pub pieces: Vec<String>,
    pub separator: &'static str,
}

fn letters(rng: &mut StdRng, n: usize) -> String {
    (0..n).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

/// Values `v1 ⊂ v2 ⊂ ...` (each one wraps the previous with random letters)
/// plus unrelated values, written back in a random arrangement.
pub fn nested_case(rng: &mut StdRng) -> NestedCase {
    let mut values: Vec<String> = Vec::new();
    let n = rng.gen_range(6..=9);
    let mut inner = letters(rng, n);
    values.push(inner.clone());
    for _ in 0..rng.gen_range(1..=3) {
        let (before, after) = (rng.gen_range(0..=3), rng.gen_range(1..=3));
        inner = format!("{}{inner}{}", letters(rng, before), letters(rng, after));
        values.push(inner.clone());
    }
    for _ in 0..rng.gen_range(0..=2) {
        let n = rng.gen_range(6..=12);
        values.push(letters(rng, n));
    }
    values.sort();
    values.dedup();
    values.shuffle(rng);

    let mut chain = ToolChain::new();
    let mut steps = BTreeMap::new();
    for (i, v) in values.iter().enumerate() {
        let step = chain.push(Tool::Bash, args([("command", format!("probe {i}"))]), format!("{v}\n"));
        steps.insert(v.clone(), step);
    }
    let pieces: Vec<String> = (0..rng.gen_range(1..=8))
        .map(|_| values.choose(rng).unwrap().clone())
        .collect();
    let separator = *[" | ", "\n", " - "].choose(rng).unwrap();
    let content = pieces.join(separator);
    chain.push(
        Tool::WriteFile,
        args([("path", "out.txt"), ("content", content.as_str())]),
        "ok".into(),
    );
    NestedCase {
        chain,
        steps,
        pieces,
        separator,
    }
}

/// Each written value becomes exactly its own placeholder.
pub fn nested_expected(case: &NestedCase) -> String {
    case.pieces
        .iter()
        .map(|p| format!("{{{{step_{}_result}}}}", case.steps[p]))
        .collect::<Vec<_>>()
        .join(case.separator)
}

// ---------------------------------------------------------------------------
// Scheduler harness.

use loopskill_core::planner::{CountingPlanner, Fault, ScriptedPlanner};
use loopskill_core::registry::FixedSuffix;
use loopskill_core::replay::{ReplayOutcome, TraceEntry};
use loopskill_core::scheduler::{Action, DegradationEvent, Scenario, Scheduler, SchedulerConfig, TickReport};
use loopskill_core::{LoopTask, Store, StorePaths, Trigger};

pub struct Harness {
    pub dir: tempfile::TempDir,
    pub store: Arc<Store>,
    pub tools: Arc<MemoryTools>,
    pub planner: Arc<CountingPlanner<ScriptedPlanner>>,
    pub scheduler: Scheduler,
}

impl Harness {
    pub fn new(script: PlannerScript, tools: Arc<MemoryTools>, deadline: Duration) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(Store::open(StorePaths::under(dir.path().join("store"))).unwrap());
        let planner = Arc::new(CountingPlanner::new(ScriptedPlanner::new(script)));
        let config = SchedulerConfig::new(dir.path().join("work")).with_deadline(deadline);
        let scheduler = Scheduler::new(store.clone(), planner.clone(), tools.clone(), config);
        Self {
            dir,
            store,
            tools,
            planner,
            scheduler,
        }
    }

    pub fn weather() -> Self {
        Self::new(weather_script(), weather_tools("Beijing, sunny, 25C"), Duration::from_secs(10))
    }

    pub fn add_weather(&self, minutes: u32) -> LoopTask {
        self.store
            .add_task(WEATHER, Trigger::every(minutes).unwrap(), None, &mut FixedSuffix::new(["a3f2"]))
            .unwrap()
    }

    pub fn task(&self, id: &str) -> Option<LoopTask> {
        self.store.get_task(id).ok()
    }

    pub fn workdir(&self, id: &str) -> std::path::PathBuf {
        self.scheduler.config().work_root.join(id)
    }

    /// One tick, waiting for any background execution it started.
    pub fn tick(&self, now: NaiveDateTime) -> TickReport {
        let mut report = self.scheduler.tick(now);
        self.scheduler.wait_idle();
        report.events.extend(self.scheduler.drain_events());
        report
    }

    pub fn log(&self, id: &str) -> Option<String> {
        self.tools.file(&self.workdir(id), WEATHER_LOG)
    }
}

pub struct ScenarioOutcome {
    pub events: Vec<DegradationEvent>,
    /// Task state right after the degradation.
    pub task: Option<LoopTask>,
    pub skill_dir_exists: bool,
    pub workdir_log: Option<String>,
    /// Decision on the next due tick; `None` once the task is gone.
    pub next_action: Option<Action>,
    /// Whether that tick ran the task (its last run moved to the tick time).
    pub next_ran: bool,
    pub last_run_before_next: Option<NaiveDateTime>,
}

pub const T0: &str = "2025-06-01T08:30:00";

/// Drives one row of the degradation table with scripted faults.
pub fn run_scenario(scenario: Scenario) -> ScenarioOutcome {
    let date = || Invocation::new(Tool::Bash, args([("command", "date +%Y-%m-%dT%H:%M:%S")]));
    let weather = || Invocation::new(Tool::Bash, args([("command", "weather Beijing")]));
    let mut deadline = Duration::from_secs(10);
    let script = match scenario {
        Scenario::EmptyChain => PlannerScript::new().with_entry(WEATHER, vec![]),
        Scenario::ContainsEditFile => PlannerScript::new().with_entry(
            WEATHER,
            vec![
                date(),
                Invocation::new(Tool::WriteFile, args([("path", WEATHER_LOG), ("content", "pending line\n")])),
                Invocation::new(
                    Tool::EditFile,
                    args([("path", WEATHER_LOG), ("old_string", "pending"), ("new_string", "final")]),
                ),
            ],
        ),
        Scenario::ErrorKeyword => weather_script().with_fault(Fault::InjectErrorResultAt { step: 2 }),
        Scenario::NoWriteFile => PlannerScript::new().with_entry(WEATHER, vec![date(), weather()]),
        Scenario::FirstExecTimeout => {
            deadline = short_deadline();
            weather_script().with_fault(Fault::Hang)
        }
        Scenario::FirstExecException => weather_script().with_fault(Fault::RaiseException),
        Scenario::ReplayStepFailure | Scenario::UserRemove => weather_script(),
    };
    let h = Harness::new(script, weather_tools("Beijing, sunny, 25C"), deadline);
    let task = h.add_weather(30);
    let t0 = ts(T0);
    let mut events = h.tick(t0).events;
    let mut now = t0;
    match scenario {
        Scenario::ReplayStepFailure => {
            assert!(h.task(&task.id).unwrap().skill_ref.is_some(), "recording failed");
            h.tools.set_command("weather Beijing", "Error: connection refused");
            now = t0 + chrono::Duration::minutes(30);
            events.extend(h.tick(now).events);
        }
        Scenario::UserRemove => {
            assert!(h.store.skill_dir(&task.id).exists(), "recording failed");
            events.extend(h.scheduler.remove_task(&task.id, t0).unwrap());
        }
        _ => {}
    }
    let after = h.task(&task.id);
    let skill_dir_exists = h.store.skill_dir(&task.id).exists();
    let workdir_log = h.log(&task.id);
    let last_run_before_next = after.as_ref().and_then(|t| t.last_run);

    let next = now + chrono::Duration::minutes(30);
    let report = h.tick(next);
    let next_action = report.decisions.first().map(|d| d.action);
    let next_ran = h.task(&task.id).is_some_and(|t| t.last_run == Some(next));
    ScenarioOutcome {
        events,
        task: after,
        skill_dir_exists,
        workdir_log,
        next_action,
        next_ran,
        last_run_before_next,
    }
}

pub struct DeterminismRun {
    pub traces: Vec<Vec<TraceEntry>>,
    pub logs: Vec<String>,
    pub planner_calls_recording: usize,
    pub planner_calls_replaying: usize,
}

pub const APPEND_TASK: &str = "log-weather";
pub const SEED_LOG: &str = "2025-05-31T08:30:00 Beijing, clear, 20C\n";

/// The weather plan with a read of the log before appending to it. The
/// date call is dropped at compile time, leaving three replayed steps.
pub fn append_plan() -> Vec<Invocation> {
    vec![
        Invocation::new(Tool::Bash, args([("command", "date +%Y-%m-%dT%H:%M:%S")])),
        Invocation::new(Tool::ReadFile, args([("path", WEATHER_LOG)])),
        Invocation::new(Tool::Bash, args([("command", "weather Beijing")])),
        Invocation::new(
            Tool::WriteFile,
            args([
                ("path", WEATHER_LOG),
                ("content", &format!("{SEED_LOG}2025-06-01T08:30:00 Beijing, sunny, 25C\n")),
            ]),
        ),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    /// date, weather, write: compiles to two steps.
    Overwrite,
    /// date, read, weather, write: compiles to three steps.
    Append,
}

/// Records the task once, then replays it `runs` times through the
/// scheduler with the clock advancing 30 minutes per tick.
pub fn replay_determinism(runs: usize) -> DeterminismRun {
    replay_pipeline(Pipeline::Overwrite, runs)
}

pub fn replay_pipeline(pipeline: Pipeline, runs: usize) -> DeterminismRun {
    let (h, task) = match pipeline {
        Pipeline::Overwrite => {
            let h = Harness::weather();
            let task = h.add_weather(30);
            (h, task)
        }
        Pipeline::Append => {
            let script = PlannerScript::new().with_entry(APPEND_TASK, append_plan());
            let h = Harness::new(script, weather_tools("Beijing, sunny, 25C"), Duration::from_secs(10));
            let task = h
                .store
                .add_task(APPEND_TASK, Trigger::every(30).unwrap(), None, &mut FixedSuffix::new(["b7c1"]))
                .unwrap();
            h.tools.set_file(&h.workdir(&task.id), WEATHER_LOG, SEED_LOG);
            (h, task)
        }
    };
    let t0 = ts(T0);
    h.tick(t0);
    assert!(h.task(&task.id).unwrap().skill_ref.is_some(), "recording failed");
    let recording = h.planner.calls();
    let skies = ["sunny", "rainy", "cloudy", "windy", "foggy"];
    let mut traces = Vec::with_capacity(runs);
    let mut logs = Vec::with_capacity(runs);
    for i in 1..=runs {
        let report = format!("Beijing, {}, {}C", skies[i % skies.len()], 10 + i % 25);
        h.tools.set_command("weather Beijing", format!("{report}\n"));
        let now = t0 + chrono::Duration::minutes(30 * i as i64);
        let tick = h.tick(now);
        match tick.replays.as_slice() {
            [(id, ReplayOutcome::Success { trace })] if *id == task.id => traces.push(trace.clone()),
            other => panic!("run {i}: expected one successful replay, got {other:?}"),
        }
        logs.push(h.log(&task.id).unwrap_or_default());
    }
    DeterminismRun {
        traces,
        logs,
        planner_calls_recording: recording,
        planner_calls_replaying: h.planner.calls() - recording,
    }
}

/// `(step count, tool names, arg-key sets)` of a trace.
pub fn trace_shape(trace: &[TraceEntry]) -> (usize, Vec<Tool>, Vec<Vec<String>>) {
    (
        trace.len(),
        trace.iter().map(|e| e.tool).collect(),
        trace.iter().map(|e| e.args.keys().cloned().collect()).collect(),
    )
}

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use loopskill_core::store::{atomic_write_with, StoreObserver, WriteStage};
use loopskill_core::HeartbeatConfig;
use rand::SeedableRng;

/// Fails the test run if two writers are ever inside the critical section
/// together, and keeps every committed document.
#[derive(Default)]
pub struct ExclusionProbe {
    inside: AtomicBool,
    pub overlaps: AtomicUsize,
    pub sections: AtomicUsize,
    pub committed: Mutex<BTreeSet<Vec<u8>>>,
}

impl StoreObserver for ExclusionProbe {
    fn enter(&self) {
        if self.inside.swap(true, Ordering::SeqCst) {
            self.overlaps.fetch_add(1, Ordering::SeqCst);
        }
        self.sections.fetch_add(1, Ordering::SeqCst);
        // Widen the window a racing writer would need.
        std::thread::yield_now();
    }

    fn committed(&self, document: &[u8]) {
        self.committed.lock().unwrap().insert(document.to_vec());
    }

    fn exit(&self) {
        self.inside.store(false, Ordering::SeqCst);
    }
}

#[derive(Debug)]
pub struct StressReport {
    pub cycles: usize,
    pub counter_updates: usize,
    pub expected_last_run: NaiveDateTime,
    pub final_last_run: Option<NaiveDateTime>,
    pub expected_tasks: usize,
    pub final_tasks: usize,
    pub overlaps: usize,
    pub raw_reads: usize,
    pub torn_reads: Vec<String>,
    pub uncommitted_reads: usize,
    pub errors: Vec<String>,
}

impl StressReport {
    pub fn is_clean(&self) -> bool {
        self.final_last_run == Some(self.expected_last_run)
            && self.final_tasks == self.expected_tasks
            && self.overlaps == 0
            && self.torn_reads.is_empty()
            && self.uncommitted_reads == 0
            && self.errors.is_empty()
    }
}

/// `workers` threads share `cycles` store operations. Every counter update
/// advances one task's `last_run` by a minute, so a lost update shows up as
/// a short final value. Unlocked readers meanwhile read the file raw.
pub fn store_stress(workers: usize, cycles: usize, seed: u64) -> StressReport {
    let dir = tempfile::tempdir().unwrap();
    let probe = Arc::new(ExclusionProbe::default());
    let store = Arc::new(
        Store::open(StorePaths::under(dir.path()))
            .unwrap()
            .with_observer(probe.clone()),
    );
    let start = ts(T0);
    let counter = store
        .add_task("shared counter", Trigger::every(1).unwrap(), None, &mut FixedSuffix::new(["c000"]))
        .unwrap();
    store.mark_run(&counter.id, start).unwrap();

    let next = Arc::new(AtomicUsize::new(0));
    let updates = Arc::new(AtomicUsize::new(0));
    let net_added = Arc::new(AtomicUsize::new(0));
    let errors = Arc::new(Mutex::new(Vec::new()));
    let stop = Arc::new(AtomicBool::new(false));

    let readers: Vec<_> = (0..2)
        .map(|_| {
            let path = store.paths().config_path.clone();
            let stop = stop.clone();
            std::thread::spawn(move || {
                let mut seen = Vec::new();
                while !stop.load(Ordering::SeqCst) {
                    if let Ok(bytes) = std::fs::read(&path) {
                        seen.push(bytes);
                    }
                    std::thread::sleep(Duration::from_micros(200));
                }
                seen
            })
        })
        .collect();

    let handles: Vec<_> = (0..workers)
        .map(|w| {
            let store = store.clone();
            let next = next.clone();
            let updates = updates.clone();
            let net_added = net_added.clone();
            let errors = errors.clone();
            let id = counter.id.clone();
            std::thread::spawn(move || {
                let mut rng = StdRng::seed_from_u64(seed ^ (w as u64 + 1));
                let mut own = Vec::new();
                let mut suffix = 0u32;
                while next.fetch_add(1, Ordering::SeqCst) < cycles {
                    let roll = rng.gen_range(0..10);
                    let result = if roll < 6 {
                        store
                            .update_task(&id, |t| {
                                t.last_run = t.last_run.map(|r| r + chrono::Duration::minutes(1));
                            })
                            .map(|()| {
                                updates.fetch_add(1, Ordering::SeqCst);
                            })
                    } else if roll < 8 {
                        store.load_config().map(|_| ())
                    } else if roll == 8 || own.is_empty() {
                        suffix += 1;
                        let tag = format!("{w:x}{suffix:03x}");
                        store
                            .add_task(
                                &format!("worker task {w}"),
                                Trigger::every(5).unwrap(),
                                None,
                                &mut FixedSuffix::new([tag]),
                            )
                            .map(|t| {
                                own.push(t.id);
                                net_added.fetch_add(1, Ordering::SeqCst);
                            })
                    } else {
                        let victim = own.swap_remove(rng.gen_range(0..own.len()));
                        store.remove_task(&victim).map(|existed| {
                            assert!(existed);
                            net_added.fetch_sub(1, Ordering::SeqCst);
                        })
                    };
                    if let Err(e) = result {
                        errors.lock().unwrap().push(e.to_string());
                    }
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    stop.store(true, Ordering::SeqCst);
    let raw: Vec<Vec<u8>> = readers.into_iter().flat_map(|r| r.join().unwrap()).collect();

    let committed = probe.committed.lock().unwrap();
    let mut torn_reads = Vec::new();
    let mut uncommitted_reads = 0;
    for bytes in &raw {
        match HeartbeatConfig::from_json(bytes) {
            Err(e) => torn_reads.push(e),
            Ok(_) if !committed.contains(bytes) => uncommitted_reads += 1,
            Ok(_) => {}
        }
    }
    let final_config = store.load_config().unwrap();
    let counter_updates = updates.load(Ordering::SeqCst);
    let report = StressReport {
        cycles,
        counter_updates,
        expected_last_run: start + chrono::Duration::minutes(counter_updates as i64),
        final_last_run: final_config.tasks.get(&counter.id).and_then(|t| t.last_run),
        expected_tasks: 1 + net_added.load(Ordering::SeqCst),
        final_tasks: final_config.tasks.len(),
        overlaps: probe.overlaps.load(Ordering::SeqCst),
        raw_reads: raw.len(),
        torn_reads,
        uncommitted_reads,
        errors: errors.lock().unwrap().clone(),
    };
    report
}

/// What a reader finds after a write aborted before `stage`.
#[derive(Debug, PartialEq, Eq)]
pub enum CrashView {
    Old,
    New,
    Corrupt(String),
}

pub fn classify(store: &Store, old: &HeartbeatConfig, new: &HeartbeatConfig) -> CrashView {
    match store.load_config() {
        Ok(c) if &c == old => CrashView::Old,
        Ok(c) if &c == new => CrashView::New,
        Ok(c) => CrashView::Corrupt(format!("unexpected document {c:?}")),
        Err(e) => CrashView::Corrupt(e.to_string()),
    }
}

/// A store holding one task, plus the document a pending write would commit.
pub fn crash_fixture(root: &std::path::Path) -> (Store, HeartbeatConfig, HeartbeatConfig) {
    let store = Store::open(StorePaths::under(root)).unwrap();
    let task = store
        .add_task(WEATHER, Trigger::every(30).unwrap(), None, &mut FixedSuffix::new(["a3f2"]))
        .unwrap();
    let old = store.load_config().unwrap();
    let mut new = old.clone();
    new.tasks.get_mut(&task.id).unwrap().last_run = Some(ts(T0));
    new.tasks.get_mut(&task.id).unwrap().description = "x".repeat(4096);
    (store, old, new)
}

/// Aborts an in-process write before each stage in turn and reports what a
/// fresh reader sees.
pub fn crash_each_stage() -> Vec<(WriteStage, CrashView)> {
    WriteStage::ALL
        .iter()
        .map(|&stage| {
            let dir = tempfile::tempdir().unwrap();
            let (store, old, new) = crash_fixture(dir.path());
            let err = atomic_write_with(&store.paths().config_path, &new.to_json(), |s| {
                if s == stage {
                    Err(std::io::Error::other("injected crash"))
                } else {
                    Ok(())
                }
            });
            assert!(err.is_err());
            (stage, classify(&store, &old, &new))
        })
        .collect()
}
