//! Fixtures shared by the benchmarks.

use loopskill_core::tools::{args, MemoryTools};
use loopskill_core::{Timestamp, Tool, ToolChain};

pub const LOG: &str = "weather.log";

pub fn at(text: &str) -> Timestamp {
    loopskill_core::clock::parse_timestamp(text).expect("valid timestamp")
}

/// date, read log, query, append: compiles to three steps.
pub fn weather_chain(history_lines: usize) -> ToolChain {
    let history: String = (0..history_lines)
        .map(|i| format!("2025-05-{:02}T08:30:00 Beijing, clear, {}C\n", 1 + i % 28, 10 + i % 20))
        .collect();
    let mut chain = ToolChain::new();
    chain.push(Tool::Bash, args([("command", "date +%Y-%m-%dT%H:%M:%S")]), "2025-06-01T08:30:00\n".into());
    chain.push(Tool::ReadFile, args([("path", LOG)]), history.clone());
    chain.push(Tool::Bash, args([("command", "weather Beijing")]), "Beijing, sunny, 25C\n".into());
    chain.push(
        Tool::WriteFile,
        args([
            ("path", LOG),
            ("content", format!("{history}2025-06-01T08:30:00 Beijing, sunny, 25C\n").as_str()),
        ]),
        "ok".into(),
    );
    chain
}

/// A chain whose write step reuses `outputs` earlier bash results.
pub fn wide_chain(outputs: usize) -> ToolChain {
    let mut chain = ToolChain::new();
    let mut content = String::new();
    for i in 0..outputs {
        let value = format!("metric-{i:04} value {}", i * 37);
        chain.push(Tool::Bash, args([("command", format!("probe {i}"))]), format!("{value}\n"));
        content.push_str(&value);
        content.push('\n');
    }
    chain.push(Tool::WriteFile, args([("path", "report.txt"), ("content", content.as_str())]), "ok".into());
    chain
}

/// Stub tools answering every bash step of `chain` with its recorded result.
pub fn stub_tools(chain: &ToolChain, workdir: &std::path::Path) -> MemoryTools {
    let tools = MemoryTools::new();
    for call in &chain.calls {
        match call.tool {
            Tool::Bash => tools.set_command(call.args["command"].clone(), call.result.clone()),
            Tool::ReadFile => tools.set_file(workdir, &call.args["path"], call.result.clone()),
            _ => {}
        }
    }
    tools
}
