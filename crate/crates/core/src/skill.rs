//! Turning a recorded tool chain into a replayable skill.
//!
//! Compilation runs in three stages:
//!
//! 1. [`validate_chain`] rejects recordings that are unsafe to replay: empty
//!    chains, chains using `edit_file`, results carrying error keywords, and
//!    chains that never write.
//! 2. [`collect_info`] gathers cleaned step results, `read_file` snippets,
//!    the indices of `date` steps and the last path read.
//! 3. [`build_steps`] drops the `date` steps and rewrites each `write_file`
//!    step into a template. Earlier step results and the last read snippet
//!    are substituted longest value first, so a short value that occurs
//!    inside a longer one never splits it. Datetime literals left over are
//!    then replaced with `{{current_time}}` or `{{current_date}}`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;
use std::path::{Component, Path};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::store::{atomic_write, id_is_path_safe, Store, StoreError, SKILL_FILE};
use crate::template::{self, Placeholder};
use crate::tools::{Tool, ToolArgs, ToolChain};
use crate::Timestamp;

pub const DEFAULT_ERROR_KEYWORDS: [&str; 6] = [
    "error",
    "traceback",
    "exception",
    "not found",
    "permission denied",
    "timeout",
];

/// Step results shorter than this (in characters) are never templated.
pub const DEFAULT_MIN_MATCH_LEN: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Failure {
    EmptyChain,
    ContainsEditFile,
    ErrorKeywordInResult(u32),
    NoWriteFile,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::EmptyChain => f.write_str("EmptyChain"),
            Failure::ContainsEditFile => f.write_str("ContainsEditFile"),
            Failure::ErrorKeywordInResult(step) => write!(f, "ErrorKeywordInResult({step})"),
            Failure::NoWriteFile => f.write_str("NoWriteFile"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub failures: Vec<Failure>,
}

impl ValidationReport {
    fn from_failures(failures: Vec<Failure>) -> Self {
        Self {
            valid: failures.is_empty(),
            failures,
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.valid {
            return f.write_str("valid");
        }
        let codes: Vec<String> = self.failures.iter().map(ToString::to_string).collect();
        f.write_str(&codes.join(", "))
    }
}

/// Replay-safety check over a recorded chain.
#[derive(Debug, Clone)]
pub struct Validator {
    keywords: Vec<String>,
}

impl Default for Validator {
    fn default() -> Self {
        Self::with_keywords(DEFAULT_ERROR_KEYWORDS)
    }
}

impl Validator {
    /// Keywords match case-insensitively anywhere in a result.
    pub fn with_keywords<S: AsRef<str>>(keywords: impl IntoIterator<Item = S>) -> Self {
        Self {
            keywords: keywords
                .into_iter()
                .map(|k| k.as_ref().to_lowercase())
                .filter(|k| !k.is_empty())
                .collect(),
        }
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    /// Reports every violated rule, in the order: empty chain, `edit_file`
    /// present, error keywords (one entry per offending step), no write.
    pub fn validate(&self, chain: &ToolChain) -> ValidationReport {
        let mut failures = Vec::new();
        if chain.is_empty() {
            failures.push(Failure::EmptyChain);
        }
        if chain.calls.iter().any(|c| c.tool == Tool::EditFile) {
            failures.push(Failure::ContainsEditFile);
        }
        for call in &chain.calls {
            let lowered = call.result.to_lowercase();
            if self.keywords.iter().any(|k| lowered.contains(k.as_str())) {
                failures.push(Failure::ErrorKeywordInResult(call.step));
            }
        }
        if !chain.calls.iter().any(|c| c.tool == Tool::WriteFile) {
            failures.push(Failure::NoWriteFile);
        }
        ValidationReport::from_failures(failures)
    }
}

pub fn validate_chain(chain: &ToolChain) -> ValidationReport {
    Validator::default().validate(chain)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtractionContext {
    pub cleaned_results: BTreeMap<u32, String>,
    pub read_snippets: BTreeMap<u32, String>,
    pub date_step_indices: BTreeSet<u32>,
    pub last_read_path: Option<String>,
}

/// Boundary whitespace is stripped; interior whitespace is kept.
pub fn clean_result(result: &str) -> &str {
    result.trim()
}

/// `date` alone or `date` followed by whitespace and arguments.
pub fn is_date_command(command: &str) -> bool {
    command.split_whitespace().next() == Some("date")
}

pub fn collect_info(chain: &ToolChain) -> ExtractionContext {
    let mut ctx = ExtractionContext::default();
    for call in &chain.calls {
        ctx.cleaned_results
            .insert(call.step, clean_result(&call.result).to_string());
        match call.tool {
            Tool::ReadFile => {
                ctx.read_snippets.insert(call.step, call.result.clone());
                ctx.last_read_path = call.args.get("path").cloned();
            }
            Tool::Bash => {
                if call.args.get("command").is_some_and(|c| is_date_command(c)) {
                    ctx.date_step_indices.insert(call.step);
                }
            }
            Tool::WriteFile | Tool::EditFile => {}
        }
    }
    ctx
}

/// The shape a `{{current_time}}` value is rendered in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeFormat {
    #[default]
    #[serde(rename = "iso_seconds_T")]
    IsoSecondsT,
    IsoSecondsSpace,
    #[serde(rename = "iso_minutes_T")]
    IsoMinutesT,
    IsoMinutesSpace,
}

impl TimeFormat {
    pub fn pattern(self) -> &'static str {
        match self {
            TimeFormat::IsoSecondsT => "%Y-%m-%dT%H:%M:%S",
            TimeFormat::IsoSecondsSpace => "%Y-%m-%d %H:%M:%S",
            TimeFormat::IsoMinutesT => "%Y-%m-%dT%H:%M",
            TimeFormat::IsoMinutesSpace => "%Y-%m-%d %H:%M",
        }
    }

    pub fn format(self, at: Timestamp) -> String {
        at.format(self.pattern()).to_string()
    }
}

pub fn format_date(date: NaiveDate) -> String {
    date.format("%Y-%m-%d").to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatetimeVariant {
    Time(TimeFormat),
    DateOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatetimeMatch {
    pub start: usize,
    pub end: usize,
    pub variant: DatetimeVariant,
}

/// Finds non-overlapping datetime literals left to right, preferring
/// `YYYY-MM-DD[T ]HH:MM:SS`, then `YYYY-MM-DD[T ]HH:MM`, then `YYYY-MM-DD`
/// at each position. A literal must not touch another digit on either side.
pub fn match_datetime(text: &str) -> Vec<DatetimeMatch> {
    let b = text.as_bytes();
    let digits = |from: usize, n: usize| from + n <= b.len() && b[from..from + n].iter().all(u8::is_ascii_digit);
    let at = |i: usize, c: u8| b.get(i) == Some(&c);
    let free_after = |end: usize| !b.get(end).is_some_and(u8::is_ascii_digit);

    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let is_date = (i == 0 || !b[i - 1].is_ascii_digit())
            && digits(i, 4)
            && at(i + 4, b'-')
            && digits(i + 5, 2)
            && at(i + 7, b'-')
            && digits(i + 8, 2);
        if !is_date {
            i += 1;
            continue;
        }
        let sep = b.get(i + 10).copied();
        let has_clock = matches!(sep, Some(b'T' | b' '))
            && digits(i + 11, 2)
            && at(i + 13, b':')
            && digits(i + 14, 2);
        let with_t = sep == Some(b'T');
        let found = if has_clock && at(i + 16, b':') && digits(i + 17, 2) && free_after(i + 19) {
            let fmt = if with_t { TimeFormat::IsoSecondsT } else { TimeFormat::IsoSecondsSpace };
            Some((i + 19, DatetimeVariant::Time(fmt)))
        } else if has_clock && free_after(i + 16) {
            let fmt = if with_t { TimeFormat::IsoMinutesT } else { TimeFormat::IsoMinutesSpace };
            Some((i + 16, DatetimeVariant::Time(fmt)))
        } else if free_after(i + 10) {
            Some((i + 10, DatetimeVariant::DateOnly))
        } else {
            None
        };
        match found {
            Some((end, variant)) => {
                out.push(DatetimeMatch { start: i, end, variant });
                i = end;
            }
            None => i += 1,
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillStep {
    pub original_step: u32,
    pub tool: Tool,
    pub args: ToolArgs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopSkill {
    pub task_id: String,
    pub time_format: TimeFormat,
    pub created_at: Timestamp,
    pub source_chain_digest: String,
    pub steps: Vec<SkillStep>,
}

impl LoopSkill {
    pub fn check(&self) -> Result<(), String> {
        if self.steps.is_empty() {
            return Err("skill has no steps".into());
        }
        if !self.steps.iter().any(|s| s.tool == Tool::WriteFile) {
            return Err("skill has no write_file step".into());
        }
        let mut seen = BTreeSet::new();
        for step in &self.steps {
            if step.tool == Tool::EditFile {
                return Err(format!("step {} uses edit_file", step.original_step));
            }
            if !step.tool.args_match(&step.args) {
                return Err(format!("step {} has malformed args", step.original_step));
            }
            if seen.last().is_some_and(|last| *last >= step.original_step) {
                return Err(format!("step {} is out of order", step.original_step));
            }
            for value in step.args.values() {
                for slot in template::placeholders(value) {
                    if let Placeholder::StepResult(n) = slot {
                        if !seen.contains(&n) {
                            return Err(format!(
                                "step {} references step {n}, which does not run before it",
                                step.original_step
                            ));
                        }
                    }
                }
            }
            seen.insert(step.original_step);
        }
        Ok(())
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("skill serializes");
        out.push(b'\n');
        out
    }
}

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("chain failed validation: {0}")]
    Invalid(ValidationReport),
    #[error("write step {0} has empty content")]
    EmptyContent(u32),
    #[error("step {step} references step {reference}, which is not retained before it")]
    DanglingReference { step: u32, reference: u32 },
    #[error("step {0} already contains placeholder syntax and would not replay literally")]
    PlaceholderInRecording(u32),
    #[error("step {0} does not match its tool's argument schema")]
    MalformedStep(u32),
}

#[derive(Debug, Clone, Copy)]
pub struct CompileOptions {
    pub min_match_len: usize,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            min_match_len: DEFAULT_MIN_MATCH_LEN,
        }
    }
}

/// A value eligible for templating inside a write step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub slot: Placeholder,
    pub value: String,
}

/// Replacement candidates for the write step at `write_step`, already in
/// application order: longest value first, ties broken by lower step, with
/// `{{prev_content}}` after step results of the same length.
pub fn candidates_for(
    write_step: u32,
    ctx: &ExtractionContext,
    options: &CompileOptions,
) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = ctx
        .cleaned_results
        .range(..write_step)
        .filter(|(n, _)| !ctx.date_step_indices.contains(n))
        .filter(|(_, v)| v.chars().count() >= options.min_match_len.max(1))
        .map(|(n, v)| Candidate {
            slot: Placeholder::StepResult(*n),
            value: v.clone(),
        })
        .collect();
    if let Some((_, snippet)) = ctx.read_snippets.range(..write_step).next_back() {
        if !snippet.is_empty() {
            out.push(Candidate {
                slot: Placeholder::PrevContent,
                value: snippet.clone(),
            });
        }
    }
    out.sort_by(|a, b| {
        let rank = |c: &Candidate| match c.slot {
            Placeholder::StepResult(n) => (0u8, n),
            _ => (1, 0),
        };
        b.value
            .chars()
            .count()
            .cmp(&a.value.chars().count())
            .then_with(|| rank(a).cmp(&rank(b)))
    });
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(Placeholder),
}

/// Replaces every occurrence of `value` that lies wholly in literal text.
fn substitute(segments: Vec<Segment>, value: &str, slot: Placeholder) -> Vec<Segment> {
    let mut out = Vec::with_capacity(segments.len());
    for segment in segments {
        let Segment::Literal(text) = segment else {
            out.push(segment);
            continue;
        };
        let mut rest = text.as_str();
        while let Some(pos) = rest.find(value) {
            if pos > 0 {
                out.push(Segment::Literal(rest[..pos].to_string()));
            }
            out.push(Segment::Slot(slot));
            rest = &rest[pos + value.len()..];
        }
        if !rest.is_empty() {
            out.push(Segment::Literal(rest.to_string()));
        }
    }
    out
}

fn scrub_datetimes(segments: Vec<Segment>, time_format: &mut Option<TimeFormat>) -> Vec<Segment> {
    let mut out = Vec::with_capacity(segments.len());
    for segment in segments {
        let Segment::Literal(text) = segment else {
            out.push(segment);
            continue;
        };
        let mut cursor = 0;
        for m in match_datetime(&text) {
            if m.start > cursor {
                out.push(Segment::Literal(text[cursor..m.start].to_string()));
            }
            out.push(Segment::Slot(match m.variant {
                DatetimeVariant::Time(fmt) => {
                    time_format.get_or_insert(fmt);
                    Placeholder::CurrentTime
                }
                DatetimeVariant::DateOnly => Placeholder::CurrentDate,
            }));
            cursor = m.end;
        }
        if cursor < text.len() {
            out.push(Segment::Literal(text[cursor..].to_string()));
        }
    }
    out
}

fn render(segments: &[Segment]) -> String {
    let mut out = String::new();
    for segment in segments {
        match segment {
            Segment::Literal(text) => out.push_str(text),
            Segment::Slot(slot) => out.push_str(&slot.to_string()),
        }
    }
    out
}

/// Templates one write step's content using `candidates` in the given order.
pub fn template_content(content: &str, candidates: &[Candidate], time_format: &mut Option<TimeFormat>) -> String {
    let mut segments = vec![Segment::Literal(content.to_string())];
    for candidate in candidates {
        segments = substitute(segments, &candidate.value, candidate.slot);
    }
    render(&scrub_datetimes(segments, time_format))
}

pub fn chain_digest(chain: &ToolChain) -> String {
    let bytes = serde_json::to_vec(chain).expect("chain serializes");
    hex::encode(Sha256::digest(&bytes))
}

pub fn build_steps(
    task_id: &str,
    chain: &ToolChain,
    ctx: &ExtractionContext,
    created_at: Timestamp,
) -> Result<LoopSkill, CompileError> {
    build_steps_with(&CompileOptions::default(), task_id, chain, ctx, created_at)
}

pub fn build_steps_with(
    options: &CompileOptions,
    task_id: &str,
    chain: &ToolChain,
    ctx: &ExtractionContext,
    created_at: Timestamp,
) -> Result<LoopSkill, CompileError> {
    let mut time_format = None;
    let mut steps = Vec::new();
    for call in &chain.calls {
        if ctx.date_step_indices.contains(&call.step) {
            continue;
        }
        if !call.tool.args_match(&call.args) {
            return Err(CompileError::MalformedStep(call.step));
        }
        if call.args.values().any(|v| template::contains_placeholder(v)) {
            return Err(CompileError::PlaceholderInRecording(call.step));
        }
        let mut args = call.args.clone();
        if call.tool == Tool::WriteFile {
            let content = &call.args["content"];
            if content.is_empty() {
                return Err(CompileError::EmptyContent(call.step));
            }
            let candidates = candidates_for(call.step, ctx, options);
            let templated = template_content(content, &candidates, &mut time_format);
            let path = template_content(&call.args["path"], &[], &mut time_format);
            args.insert("content".into(), templated);
            args.insert("path".into(), path);
        }
        steps.push(SkillStep {
            original_step: call.step,
            tool: call.tool,
            args,
        });
    }

    let mut retained = BTreeSet::new();
    for step in &steps {
        for value in step.args.values() {
            for slot in template::placeholders(value) {
                if let Placeholder::StepResult(n) = slot {
                    if !retained.contains(&n) {
                        return Err(CompileError::DanglingReference {
                            step: step.original_step,
                            reference: n,
                        });
                    }
                }
            }
        }
        retained.insert(step.original_step);
    }

    Ok(LoopSkill {
        task_id: task_id.to_string(),
        time_format: time_format.unwrap_or_default(),
        created_at,
        source_chain_digest: chain_digest(chain),
        steps,
    })
}

/// Validates, collects and builds in one go.
pub fn compile_skill(
    task_id: &str,
    chain: &ToolChain,
    created_at: Timestamp,
) -> Result<LoopSkill, CompileError> {
    compile_skill_with(&Validator::default(), &CompileOptions::default(), task_id, chain, created_at)
}

pub fn compile_skill_with(
    validator: &Validator,
    options: &CompileOptions,
    task_id: &str,
    chain: &ToolChain,
    created_at: Timestamp,
) -> Result<LoopSkill, CompileError> {
    let report = validator.validate(chain);
    if !report.valid {
        return Err(CompileError::Invalid(report));
    }
    let ctx = collect_info(chain);
    build_steps_with(options, task_id, chain, &ctx, created_at)
}

#[derive(Debug, Error)]
pub enum SkillError {
    #[error("skill `{0}` not found")]
    NotFound(String),
    #[error("skill `{path}` is corrupt: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("invalid skill: {0}")]
    Invalid(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Writes `<skills_dir>/<task_id>/skill.json` and returns its reference,
/// relative to the skills directory.
pub fn save_skill(store: &Store, skill: &LoopSkill) -> Result<String, SkillError> {
    skill.check().map_err(SkillError::Invalid)?;
    if !id_is_path_safe(&skill.task_id) {
        return Err(SkillError::Invalid(format!("task id `{}` is not a path component", skill.task_id)));
    }
    let skill_ref = format!("{}/{SKILL_FILE}", skill.task_id);
    store.locked(|| {
        let dir = store.skill_dir(&skill.task_id);
        std::fs::create_dir_all(&dir).map_err(|source| StoreError::Io {
            path: dir.clone(),
            source,
        })?;
        let path = dir.join(SKILL_FILE);
        atomic_write(&path, &skill.to_json()).map_err(|source| StoreError::Io { path, source })?;
        Ok(skill_ref)
    })
}

/// Loads a skill by reference. The stored digest is not checked.
pub fn load_skill(store: &Store, skill_ref: &str) -> Result<LoopSkill, SkillError> {
    let relative = Path::new(skill_ref);
    if skill_ref.is_empty() || !relative.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(SkillError::NotFound(skill_ref.to_string()));
    }
    let path = store.paths().skills_dir.join(relative);
    let bytes = store.locked(|| std::fs::read(&path));
    let bytes = match bytes {
        Ok(bytes) => bytes,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(SkillError::NotFound(skill_ref.to_string()))
        }
        Err(source) => return Err(StoreError::Io { path, source }.into()),
    };
    let corrupt = |reason: String| SkillError::Corrupt {
        path: skill_ref.to_string(),
        reason,
    };
    let skill: LoopSkill = serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
    skill.check().map_err(corrupt)?;
    Ok(skill)
}
