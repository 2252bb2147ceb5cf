mod commands;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

/// Records periodic agent tasks once and replays them without a planner.
#[derive(Debug, Parser)]
#[command(name = "loopskill", version)]
pub struct Cli {
    /// Store directory holding heartbeat.json and skills/.
    #[arg(long, global = true, env = "LOOP_STORE_ROOT", default_value = ".loopskill")]
    pub store: PathBuf,

    /// Replace the config with an empty one before running the command.
    #[arg(long, global = true)]
    pub reset_config: bool,

    #[command(flatten)]
    pub planner: PlannerArgs,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Args)]
pub struct PlannerArgs {
    /// JSON planner script mapping task descriptions to tool calls.
    #[arg(long, global = true, env = "LOOP_PLANNER_SCRIPT")]
    pub planner_script: Option<PathBuf>,

    /// Use an OpenAI-compatible chat endpoint as the planner.
    #[arg(long, global = true, conflicts_with = "planner_script")]
    pub live: bool,

    #[arg(long, global = true, requires = "live", default_value = "https://api.openai.com/v1/chat/completions")]
    pub endpoint: String,

    #[arg(long, global = true, requires = "live", default_value = "gpt-4o")]
    pub model: String,

    /// Wall-clock limit for a first execution.
    #[arg(long, global = true, value_parser = humantime::parse_duration, default_value = "300s")]
    pub deadline: Duration,

    /// Timeout for each bash tool call.
    #[arg(long, global = true, value_parser = humantime::parse_duration, default_value = "60s")]
    pub bash_timeout: Duration,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a task from an interval (`30m`, `2h`, `1d`) or a daily `@HH:MM`.
    Add {
        trigger: String,
        #[arg(required = true, num_args = 1..)]
        description: Vec<String>,
        /// Only run between these times, e.g. `09:00-18:00`.
        #[arg(long)]
        active_hours: Option<String>,
    },
    /// Delete a task and its skill directory.
    Remove { id: String },
    /// List tasks.
    List,
    /// Print one task as JSON.
    Status { id: String },
    /// Run a single scheduler tick.
    Tick {
        #[arg(long, value_parser = parse_now)]
        now: Option<chrono::NaiveDateTime>,
    },
    /// Record a task now, replacing any attached skill.
    Run {
        id: String,
        #[arg(long, value_parser = parse_now)]
        now: Option<chrono::NaiveDateTime>,
    },
    /// Replay a task's skill now.
    Replay {
        id: String,
        #[arg(long, value_parser = parse_now)]
        now: Option<chrono::NaiveDateTime>,
    },
    /// Validate and compile a recorded chain file, printing the skill.
    Compile {
        chain_file: PathBuf,
        /// Task id the skill belongs to.
        #[arg(long)]
        task: Option<String>,
        /// Save the skill and attach it to `--task`.
        #[arg(long, requires = "task")]
        attach: bool,
    },
    /// Discard a task's skill so the next due tick records it again.
    Recompile { id: String },
    /// Print the monthly token cost table.
    Cost {
        /// Tab-separated rows instead of the aligned table.
        #[arg(long)]
        tsv: bool,
        #[arg(long, default_value_t = loopskill_core::cost::DEFAULT_FIRST_EXEC_TOKENS)]
        first_exec_tokens: u64,
        #[arg(long, default_value_t = loopskill_core::cost::DEFAULT_LLM_TOKENS)]
        llm_tokens: u64,
        #[arg(long, default_value_t = loopskill_core::cost::MONTH_MINUTES)]
        horizon_minutes: u64,
    },
    /// Tick on the wall clock until interrupted.
    Daemon {
        #[arg(long, value_parser = humantime::parse_duration, default_value = "60s")]
        poll_interval: Duration,
    },
}

fn parse_now(text: &str) -> Result<chrono::NaiveDateTime, String> {
    loopskill_core::clock::parse_timestamp(text).ok_or_else(|| format!("expected YYYY-MM-DDTHH:MM[:SS], got `{text}`"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| writeln!(buf, "{}", record.args()))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
