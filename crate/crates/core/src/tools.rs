//! The tool vocabulary and transparent call recording.
//!
//! Tool failures are reported in-band as result strings starting with
//! `"Error: "`. Only a path that escapes the working directory is raised as a
//! [`SandboxError`].

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::{Component, Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ToolArgs = BTreeMap<String, String>;

pub const ERROR_PREFIX: &str = "Error: ";
pub const DEFAULT_BASH_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tool {
    Bash,
    ReadFile,
    WriteFile,
    EditFile,
}

impl Tool {
    pub const ALL: [Tool; 4] = [Tool::Bash, Tool::ReadFile, Tool::WriteFile, Tool::EditFile];

    pub fn name(self) -> &'static str {
        match self {
            Tool::Bash => "bash",
            Tool::ReadFile => "read_file",
            Tool::WriteFile => "write_file",
            Tool::EditFile => "edit_file",
        }
    }

    pub fn from_name(name: &str) -> Option<Tool> {
        Tool::ALL.into_iter().find(|t| t.name() == name)
    }

    /// Argument keys, sorted.
    pub fn arg_keys(self) -> &'static [&'static str] {
        match self {
            Tool::Bash => &["command"],
            Tool::ReadFile => &["path"],
            Tool::WriteFile => &["content", "path"],
            Tool::EditFile => &["new_string", "old_string", "path"],
        }
    }

    pub fn args_match(self, args: &ToolArgs) -> bool {
        args.keys().map(String::as_str).eq(self.arg_keys().iter().copied())
    }
}

impl fmt::Display for Tool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Builds a [`ToolArgs`] from key/value pairs.
pub fn args<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> ToolArgs {
    pairs
        .into_iter()
        .map(|(k, v)| (k.into(), v.into()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub step: u32,
    pub tool: Tool,
    pub args: ToolArgs,
    pub result: String,
}

/// Serializes as the bare list `[{step, tool, args, result}, ...]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToolChain {
    pub calls: Vec<ToolCall>,
}

impl ToolChain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    pub fn get(&self, step: u32) -> Option<&ToolCall> {
        step.checked_sub(1)
            .and_then(|i| self.calls.get(i as usize))
            .filter(|c| c.step == step)
    }

    /// Appends a call with the next step index.
    pub fn push(&mut self, tool: Tool, args: ToolArgs, result: String) -> u32 {
        let step = self.calls.len() as u32 + 1;
        self.calls.push(ToolCall {
            step,
            tool,
            args,
            result,
        });
        step
    }

    /// Checks step contiguity and per-tool argument schemas.
    pub fn check(&self) -> Result<(), String> {
        for (i, call) in self.calls.iter().enumerate() {
            if call.step as usize != i + 1 {
                return Err(format!("step {} found at position {}", call.step, i + 1));
            }
            if !call.tool.args_match(&call.args) {
                return Err(format!(
                    "step {}: {} expects args {:?}",
                    call.step,
                    call.tool,
                    call.tool.arg_keys()
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("path `{path}` escapes the working directory {workdir}")]
pub struct SandboxError {
    pub path: String,
    pub workdir: PathBuf,
}

pub trait ToolExecutor: Send + Sync {
    fn execute(&self, tool: Tool, args: &ToolArgs, workdir: &Path) -> Result<String, SandboxError>;
}

impl<T: ToolExecutor + ?Sized> ToolExecutor for std::sync::Arc<T> {
    fn execute(&self, tool: Tool, args: &ToolArgs, workdir: &Path) -> Result<String, SandboxError> {
        (**self).execute(tool, args, workdir)
    }
}

pub fn is_error_result(result: &str) -> bool {
    result.starts_with(ERROR_PREFIX)
}

pub(crate) fn error_result(message: impl fmt::Display) -> String {
    format!("{ERROR_PREFIX}{message}")
}

fn not_found(path: &str) -> String {
    error_result(format_args!("file not found: {path}"))
}

fn wrote(bytes: usize, path: &str) -> String {
    format!("ok: wrote {bytes} bytes to {path}")
}

fn schema_error(tool: Tool, args: &ToolArgs) -> String {
    error_result(format_args!(
        "invalid arguments for {tool}: expected {:?}, got {:?}",
        tool.arg_keys(),
        args.keys().collect::<Vec<_>>()
    ))
}

/// Resolves `path` against `workdir` lexically, rejecting anything that
/// leaves it. Existing ancestors are also checked after symlink resolution.
pub fn resolve_in_workdir(workdir: &Path, path: &str) -> Result<PathBuf, SandboxError> {
    let escape = || SandboxError {
        path: path.to_string(),
        workdir: workdir.to_path_buf(),
    };
    let base = normalize(workdir);
    let requested = Path::new(path);
    let relative = if requested.is_absolute() {
        let normalized = normalize(requested);
        normalized
            .strip_prefix(&base)
            .map(Path::to_path_buf)
            .map_err(|_| escape())?
    } else {
        requested.to_path_buf()
    };
    let mut resolved = base.clone();
    let mut depth = 0usize;
    for component in relative.components() {
        match component {
            Component::Normal(part) => {
                resolved.push(part);
                depth += 1;
            }
            Component::CurDir => {}
            Component::ParentDir => {
                if depth == 0 {
                    return Err(escape());
                }
                resolved.pop();
                depth -= 1;
            }
            Component::RootDir | Component::Prefix(_) => return Err(escape()),
        }
    }
    if let Ok(canonical_base) = base.canonicalize() {
        let mut probe = resolved.as_path();
        while !probe.exists() {
            match probe.parent() {
                Some(parent) => probe = parent,
                None => break,
            }
        }
        if let Ok(canonical) = probe.canonicalize() {
            if !canonical.starts_with(&canonical_base) {
                return Err(escape());
            }
        }
    }
    Ok(resolved)
}

fn normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for component in path.components() {
        match component {
            Component::ParentDir => {
                out.pop();
            }
            Component::CurDir => {}
            other => out.push(other),
        }
    }
    out
}

/// Executes tools against the host: `bash -c` subprocesses and the real
/// filesystem under the working directory.
#[derive(Debug, Clone)]
pub struct HostTools {
    pub bash_timeout: Duration,
}

impl Default for HostTools {
    fn default() -> Self {
        Self {
            bash_timeout: DEFAULT_BASH_TIMEOUT,
        }
    }
}

impl HostTools {
    pub fn with_timeout(bash_timeout: Duration) -> Self {
        Self { bash_timeout }
    }

    fn bash(&self, command: &str, workdir: &Path) -> String {
        let (mut reader, writer) = match std::io::pipe() {
            Ok(pipe) => pipe,
            Err(e) => return error_result(format_args!("pipe: {e}")),
        };
        let writer_err = match writer.try_clone() {
            Ok(w) => w,
            Err(e) => return error_result(format_args!("pipe: {e}")),
        };
        let mut cmd = Command::new("bash");
        cmd.arg("-c")
            .arg(command)
            .current_dir(workdir)
            .stdin(Stdio::null())
            .stdout(writer)
            .stderr(writer_err);
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }
        let mut child = match cmd.spawn() {
            Ok(child) => child,
            Err(e) => return error_result(format_args!("failed to spawn bash: {e}")),
        };
        // Release the parent's copies of the write end so EOF arrives.
        drop(cmd);

        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = reader.read_to_end(&mut buf);
            let _ = tx.send(buf);
        });

        let deadline = Instant::now() + self.bash_timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if Instant::now() >= deadline => break None,
                Ok(None) => std::thread::sleep(Duration::from_millis(2)),
                Err(e) => return error_result(format_args!("wait failed: {e}")),
            }
        };
        let Some(status) = status else {
            kill_tree(&mut child);
            return error_result("timeout");
        };
        let remaining = deadline.saturating_duration_since(Instant::now());
        let output = match rx.recv_timeout(remaining.max(Duration::from_millis(50))) {
            Ok(buf) => String::from_utf8_lossy(&buf).into_owned(),
            // A background grandchild still holds the pipe open.
            Err(_) => {
                kill_tree(&mut child);
                return error_result("timeout");
            }
        };
        if status.success() {
            output
        } else {
            match status.code() {
                Some(code) => error_result(format_args!("exit status {code}: {output}")),
                None => error_result(format_args!("terminated by signal: {output}")),
            }
        }
    }
}

fn kill_tree(child: &mut std::process::Child) {
    #[cfg(unix)]
    unsafe {
        // The child leads its own process group.
        libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
    }
    let _ = child.kill();
    let _ = child.wait();
}

impl ToolExecutor for HostTools {
    fn execute(&self, tool: Tool, args: &ToolArgs, workdir: &Path) -> Result<String, SandboxError> {
        if !tool.args_match(args) {
            return Ok(schema_error(tool, args));
        }
        let arg = |k: &str| args[k].as_str();
        Ok(match tool {
            Tool::Bash => self.bash(arg("command"), workdir),
            Tool::ReadFile => {
                let path = arg("path");
                let full = resolve_in_workdir(workdir, path)?;
                match std::fs::read(&full) {
                    Ok(bytes) => String::from_utf8_lossy(&bytes).into_owned(),
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => not_found(path),
                    Err(e) => error_result(format_args!("cannot read {path}: {e}")),
                }
            }
            Tool::WriteFile => {
                let path = arg("path");
                if path.trim().is_empty() {
                    return Ok(error_result("empty path"));
                }
                let full = resolve_in_workdir(workdir, path)?;
                let content = arg("content");
                let written = full
                    .parent()
                    .map_or(Ok(()), std::fs::create_dir_all)
                    .and_then(|_| std::fs::write(&full, content));
                match written {
                    Ok(()) => wrote(content.len(), path),
                    Err(e) => error_result(format_args!("cannot write {path}: {e}")),
                }
            }
            Tool::EditFile => {
                let path = arg("path");
                let full = resolve_in_workdir(workdir, path)?;
                let current = match std::fs::read_to_string(&full) {
                    Ok(text) => text,
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(not_found(path)),
                    Err(e) => return Ok(error_result(format_args!("cannot read {path}: {e}"))),
                };
                match edit(&current, arg("old_string"), arg("new_string"), path) {
                    Ok(updated) => match std::fs::write(&full, updated) {
                        Ok(()) => format!("ok: edited {path}"),
                        Err(e) => error_result(format_args!("cannot write {path}: {e}")),
                    },
                    Err(message) => message,
                }
            }
        })
    }
}

fn edit(current: &str, old: &str, new: &str, path: &str) -> Result<String, String> {
    if old.is_empty() || !current.contains(old) {
        return Err(error_result(format_args!("old_string not found in {path}")));
    }
    Ok(current.replacen(old, new, 1))
}

/// Tool executor backed by an in-memory file map and canned command output.
///
/// Uses the same result strings and sandbox rules as [`HostTools`]. Bash
/// commands without a canned response produce an in-band error.
#[derive(Default)]
pub struct MemoryTools {
    files: Mutex<BTreeMap<PathBuf, String>>,
    commands: Mutex<BTreeMap<String, String>>,
    calls: AtomicUsize,
}

impl MemoryTools {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_command(self, command: impl Into<String>, output: impl Into<String>) -> Self {
        self.set_command(command, output);
        self
    }

    pub fn set_command(&self, command: impl Into<String>, output: impl Into<String>) {
        self.commands.lock().insert(command.into(), output.into());
    }

    pub fn set_file(&self, workdir: &Path, path: &str, content: impl Into<String>) {
        let full = resolve_in_workdir(workdir, path).expect("path inside workdir");
        self.files.lock().insert(full, content.into());
    }

    pub fn file(&self, workdir: &Path, path: &str) -> Option<String> {
        let full = resolve_in_workdir(workdir, path).ok()?;
        self.files.lock().get(&full).cloned()
    }

    /// Number of tool invocations served.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ToolExecutor for MemoryTools {
    fn execute(&self, tool: Tool, args: &ToolArgs, workdir: &Path) -> Result<String, SandboxError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if !tool.args_match(args) {
            return Ok(schema_error(tool, args));
        }
        let arg = |k: &str| args[k].as_str();
        Ok(match tool {
            Tool::Bash => {
                let command = arg("command");
                match self.commands.lock().get(command.trim()) {
                    Some(output) => output.clone(),
                    None => error_result(format_args!("command not found: {command}")),
                }
            }
            Tool::ReadFile => {
                let path = arg("path");
                let full = resolve_in_workdir(workdir, path)?;
                match self.files.lock().get(&full) {
                    Some(content) => content.clone(),
                    None => not_found(path),
                }
            }
            Tool::WriteFile => {
                let path = arg("path");
                if path.trim().is_empty() {
                    return Ok(error_result("empty path"));
                }
                let full = resolve_in_workdir(workdir, path)?;
                let content = arg("content");
                self.files.lock().insert(full, content.to_string());
                wrote(content.len(), path)
            }
            Tool::EditFile => {
                let path = arg("path");
                let full = resolve_in_workdir(workdir, path)?;
                let mut files = self.files.lock();
                let Some(current) = files.get(&full) else {
                    return Ok(not_found(path));
                };
                match edit(current, arg("old_string"), arg("new_string"), path) {
                    Ok(updated) => {
                        files.insert(full, updated);
                        format!("ok: edited {path}")
                    }
                    Err(message) => message,
                }
            }
        })
    }
}

/// Intercepts tool calls and appends them to a chain.
#[derive(Debug, Clone)]
pub struct Recorder {
    chain: ToolChain,
    enabled: bool,
}

impl Default for Recorder {
    fn default() -> Self {
        Self::new()
    }
}

impl Recorder {
    pub fn new() -> Self {
        Self {
            chain: ToolChain::new(),
            enabled: true,
        }
    }

    /// A recorder that passes calls through without keeping them.
    pub fn disabled() -> Self {
        Self {
            chain: ToolChain::new(),
            enabled: false,
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn record(
        &mut self,
        tools: &dyn ToolExecutor,
        tool: Tool,
        args: ToolArgs,
        workdir: &Path,
    ) -> Result<String, SandboxError> {
        let result = tools.execute(tool, &args, workdir)?;
        if self.enabled {
            self.chain.push(tool, args, result.clone());
        }
        Ok(result)
    }

    pub fn chain(&self) -> &ToolChain {
        &self.chain
    }

    pub fn into_chain(self) -> ToolChain {
        self.chain
    }
}
