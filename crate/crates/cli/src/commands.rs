use std::fmt;
use std::path::Path;
use std::sync::Arc;

use clap::CommandFactory;
use loopskill_core::clock::{Clock, SystemClock};
use loopskill_core::cost;
use loopskill_core::planner::{Planner, PlannerScript, ScriptedPlanner};
use loopskill_core::registry::{ActiveHours, RandomSuffix};
use loopskill_core::replay::ReplayOutcome;
use loopskill_core::scheduler::{run_daemon, Scheduler, SchedulerConfig, SchedulerError, Shutdown};
use loopskill_core::skill::{self, CompileError, SkillError};
use loopskill_core::store::StoreError;
use loopskill_core::tools::HostTools;
use loopskill_core::{LoopTask, Store, StorePaths, Timestamp, ToolChain, Trigger};

use crate::{Cli, Command, PlannerArgs};

/// Task id used when `compile` runs without `--task`.
const OFFLINE_TASK_ID: &str = "loop_chain_0000";

#[derive(Debug)]
pub enum CliError {
    NotFound(String),
    Parse(String),
    Validation(String),
    Execution(String),
    Other(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::NotFound(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Execution(_) => 4,
            CliError::Other(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::NotFound(m)
            | CliError::Parse(m)
            | CliError::Validation(m)
            | CliError::Execution(m)
            | CliError::Other(m) => f.write_str(m),
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) => CliError::NotFound(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<SkillError> for CliError {
    fn from(e: SkillError) -> Self {
        match e {
            SkillError::NotFound(_) => CliError::NotFound(e.to_string()),
            SkillError::Store(e) => e.into(),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<SchedulerError> for CliError {
    fn from(e: SchedulerError) -> Self {
        match e {
            SchedulerError::Store(e) => e.into(),
            SchedulerError::Skill(e) => e.into(),
            SchedulerError::NoSkill(_) => CliError::NotFound(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    let store = Arc::new(Store::open(StorePaths::under(&cli.store))?);
    if cli.reset_config {
        store.reset_config()?;
        log::warn!("config reset to empty at {}", store.paths().config_path.display());
    }
    let Some(command) = cli.command else {
        if cli.reset_config {
            return Ok(());
        }
        let _ = Cli::command().print_help();
        return Err(CliError::Parse("no command given".into()));
    };
    let clock = SystemClock;
    match command {
        Command::Add {
            trigger,
            description,
            active_hours,
        } => add(&store, &trigger, &description.join(" "), active_hours.as_deref()),
        Command::Remove { id } => {
            let scheduler = scheduler(&cli.store, store, &cli.planner)?;
            match scheduler.remove_task(&id, clock.now())? {
                Some(_) => {
                    println!("removed {id}");
                    Ok(())
                }
                None => Err(CliError::NotFound(format!("task `{id}` not found"))),
            }
        }
        Command::List => list(&store),
        Command::Status { id } => status(&store, &id),
        Command::Tick { now } => {
            let scheduler = scheduler(&cli.store, store, &cli.planner)?;
            tick(&scheduler, now.unwrap_or_else(|| clock.now()))
        }
        Command::Run { id, now } => {
            let scheduler = scheduler(&cli.store, store, &cli.planner)?;
            run_first(&scheduler, &id, now.unwrap_or_else(|| clock.now()))
        }
        Command::Replay { id, now } => {
            let scheduler = scheduler(&cli.store, store, &cli.planner)?;
            replay(&scheduler, &id, now.unwrap_or_else(|| clock.now()))
        }
        Command::Compile {
            chain_file,
            task,
            attach,
        } => compile(&store, &chain_file, task.as_deref(), attach, clock.now()),
        Command::Recompile { id } => {
            let scheduler = scheduler(&cli.store, store, &cli.planner)?;
            scheduler.recompile(&id)?;
            println!("{id} will be recorded again on its next due tick");
            Ok(())
        }
        Command::Cost {
            tsv,
            first_exec_tokens,
            llm_tokens,
            horizon_minutes,
        } => {
            let rows = cost::savings_table(first_exec_tokens, llm_tokens, horizon_minutes)
                .map_err(|e| CliError::Parse(e.to_string()))?;
            if tsv {
                print!("{}", cost::format_rows_tsv(&rows));
            } else {
                print!("{}", cost::format_table(&rows));
            }
            Ok(())
        }
        Command::Daemon { poll_interval } => {
            let scheduler = scheduler(&cli.store, store, &cli.planner)?;
            let shutdown = Arc::new(Shutdown::new());
            let handler = Arc::clone(&shutdown);
            ctrlc::set_handler(move || handler.signal()).map_err(|e| CliError::Other(e.to_string()))?;
            log::info!("polling every {}", humantime::format_duration(poll_interval));
            let ticks = run_daemon(&scheduler, &clock, poll_interval, &shutdown);
            scheduler.wait_idle();
            log::info!("stopped after {ticks} ticks");
            Ok(())
        }
    }
}

fn planner(args: &PlannerArgs) -> Result<Arc<dyn Planner>> {
    if args.live {
        return live_planner(args);
    }
    let script = match &args.planner_script {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| CliError::NotFound(format!("{}: {e}", path.display())))?;
            PlannerScript::from_json(&bytes).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?
        }
        // Without a script every first execution fails with a missing plan.
        None => PlannerScript::new(),
    };
    Ok(Arc::new(ScriptedPlanner::new(script)))
}

#[cfg(feature = "live")]
fn live_planner(args: &PlannerArgs) -> Result<Arc<dyn Planner>> {
    use loopskill_core::planner::live::{LiveConfig, LivePlanner, PROMPT_FILE};
    let config = LiveConfig::from_env(&args.endpoint, &args.model, Path::new(PROMPT_FILE))
        .map_err(|e| CliError::Other(e.to_string()))?;
    Ok(Arc::new(LivePlanner::new(config)))
}

#[cfg(not(feature = "live"))]
fn live_planner(_: &PlannerArgs) -> Result<Arc<dyn Planner>> {
    Err(CliError::Other("this build has no live planner; rebuild with `--features live`".into()))
}

fn scheduler(root: &Path, store: Arc<Store>, args: &PlannerArgs) -> Result<Scheduler> {
    let config = SchedulerConfig::new(root.join("work")).with_deadline(args.deadline);
    Ok(Scheduler::new(
        store,
        planner(args)?,
        Arc::new(HostTools::with_timeout(args.bash_timeout)),
        config,
    ))
}

fn add(store: &Store, trigger: &str, description: &str, active_hours: Option<&str>) -> Result<()> {
    let trigger = Trigger::parse(trigger).map_err(|e| CliError::Parse(e.to_string()))?;
    let hours = active_hours
        .map(ActiveHours::parse)
        .transpose()
        .map_err(|e| CliError::Parse(e.to_string()))?;
    let task = store
        .add_task(description, trigger, hours, &mut RandomSuffix::thread())
        .map_err(|e| match e {
            StoreError::Registry(e) => CliError::Parse(e.to_string()),
            e => e.into(),
        })?;
    println!("{}", task.id);
    Ok(())
}

fn skill_present(store: &Store, task: &LoopTask) -> bool {
    task.skill_ref
        .as_deref()
        .is_some_and(|r| skill::load_skill(store, r).is_ok())
}

fn list(store: &Store) -> Result<()> {
    let config = store.load_config()?;
    let header = ["ID", "TRIGGER", "STATE", "LAST RUN", "DESCRIPTION"];
    let rows: Vec<[String; 5]> = config
        .tasks
        .values()
        .map(|t| {
            let state = match (t.enabled, t.first_exec_pending, skill_present(store, t)) {
                (false, _, _) => "disabled",
                (true, true, _) => "pending",
                (true, false, true) => "skill",
                (true, false, false) => "fallback",
            };
            [
                t.id.clone(),
                t.trigger.to_string(),
                state.to_string(),
                t.last_run.map_or_else(|| "-".to_string(), |r| r.format("%Y-%m-%dT%H:%M:%S").to_string()),
                t.description.clone(),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let print_row = |cells: [&str; 5]| {
        let line: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        println!("{}", line.join("  ").trim_end());
    };
    print_row(header);
    for row in &rows {
        print_row([&row[0], &row[1], &row[2], &row[3], &row[4]]);
    }
    Ok(())
}

fn status(store: &Store, id: &str) -> Result<()> {
    let task = store.get_task(id)?;
    let mut doc = serde_json::to_value(&task).map_err(|e| CliError::Other(e.to_string()))?;
    doc["skill_present"] = skill_present(store, &task).into();
    println!("{}", serde_json::to_string_pretty(&doc).expect("json value serializes"));
    Ok(())
}

fn tick(scheduler: &Scheduler, now: Timestamp) -> Result<()> {
    let mut report = scheduler.tick(now);
    scheduler.wait_idle();
    report.events.extend(scheduler.drain_events());
    for decision in &report.decisions {
        println!("{}", decision.log_line(now));
    }
    for event in &report.events {
        println!("{}", event.log_line(now));
    }
    match report.errors.first() {
        Some(e) => Err(CliError::Other(e.clone())),
        None => Ok(()),
    }
}

fn run_first(scheduler: &Scheduler, id: &str, now: Timestamp) -> Result<()> {
    scheduler.store().get_task(id)?;
    let event = scheduler.force_first_execution(id, now)?;
    if let Some(event) = event {
        let message = format!("{}: {} ({})", event.scenario, event.detail, event.action_taken);
        return Err(match event.scenario.is_validation() {
            true => CliError::Validation(message),
            false => CliError::Execution(message),
        });
    }
    match scheduler.store().get_task(id)?.skill_ref {
        Some(skill_ref) => {
            println!("recorded {skill_ref}");
            Ok(())
        }
        None => Err(CliError::Validation(format!("{id}: the recording did not compile"))),
    }
}

fn replay(scheduler: &Scheduler, id: &str, now: Timestamp) -> Result<()> {
    match scheduler.force_replay(id, now)? {
        ReplayOutcome::Success { trace } => {
            for entry in &trace {
                println!("{}", serde_json::to_string(entry).expect("trace serializes"));
            }
            Ok(())
        }
        ReplayOutcome::StepFailure {
            original_step, result, ..
        } => Err(CliError::Execution(format!(
            "replay of {id} failed at step {original_step}: {}",
            result.trim_end()
        ))),
    }
}

fn compile(store: &Store, chain_file: &Path, task: Option<&str>, attach: bool, now: Timestamp) -> Result<()> {
    let bytes = std::fs::read(chain_file).map_err(|e| CliError::NotFound(format!("{}: {e}", chain_file.display())))?;
    let chain: ToolChain =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Parse(format!("{}: {e}", chain_file.display())))?;
    chain
        .check()
        .map_err(|e| CliError::Parse(format!("{}: {e}", chain_file.display())))?;
    let task_id = match task {
        Some(id) => store.get_task(id)?.id,
        None => OFFLINE_TASK_ID.to_string(),
    };
    let compiled = skill::compile_skill(&task_id, &chain, now).map_err(|e| match e {
        CompileError::Invalid(report) => CliError::Validation(report.to_string()),
        e => CliError::Validation(e.to_string()),
    })?;
    print!("{}", String::from_utf8_lossy(&compiled.to_json()));
    if attach {
        let skill_ref = skill::save_skill(store, &compiled)?;
        store.attach_skill(&task_id, &skill_ref)?;
        log::info!("attached {skill_ref} to {task_id}");
    }
    Ok(())
}
