//! Task definitions: interval parsing, time-of-day triggers, task ids.

use std::fmt;

use chrono::NaiveDate;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Timestamp;

pub const MINUTES_PER_DAY: u16 = 1440;

/// Characters of the description slug kept in a task id.
pub const SLUG_PREFIX_LEN: usize = 8;
pub const SUFFIX_LEN: usize = 4;
/// Suffix draws attempted before giving up on a colliding id.
pub const MAX_ID_ATTEMPTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("empty interval expression")]
    EmptyInterval,
    #[error("invalid interval quantity `{0}`")]
    InvalidQuantity(String),
    #[error("interval must be at least one minute, got `{0}`")]
    NonPositiveInterval(String),
    #[error("unknown interval unit `{unit}` in `{token}` (expected m, h or d)")]
    UnknownUnit { token: String, unit: String },
    #[error("invalid time of day `{0}` (expected HH:MM)")]
    InvalidTimeOfDay(String),
    #[error("invalid active hours `{0}`")]
    InvalidActiveHours(String),
    #[error("description `{0}` has no usable characters for an id")]
    InvalidDescription(String),
    #[error("suffix `{0}` is not {SUFFIX_LEN} characters of [a-z0-9]")]
    InvalidSuffix(String),
    #[error("could not find a free id for `{0}` after {MAX_ID_ATTEMPTS} attempts")]
    IdExhausted(String),
    #[error("task {id}: {reason}")]
    InvalidTask { id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntervalSpec {
    pub minutes: u32,
}

impl IntervalSpec {
    pub fn new(minutes: u32) -> Result<Self, RegistryError> {
        if minutes == 0 {
            return Err(RegistryError::NonPositiveInterval(minutes.to_string()));
        }
        Ok(Self { minutes })
    }
}

/// Parses `<int>[m|h|d]` into minutes. A bare integer is minutes.
pub fn parse_interval(text: &str) -> Result<IntervalSpec, RegistryError> {
    let token = text.trim();
    if token.is_empty() {
        return Err(RegistryError::EmptyInterval);
    }
    let split = token
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(token.len());
    let (digits, unit) = token.split_at(split);
    if digits.is_empty() {
        // Covers "-5m", "m", "abc".
        return Err(if token.starts_with('-') {
            RegistryError::NonPositiveInterval(token.to_string())
        } else {
            RegistryError::InvalidQuantity(token.to_string())
        });
    }
    let factor: u64 = match unit {
        "" | "m" => 1,
        "h" => 60,
        "d" => 60 * 24,
        other => {
            return Err(RegistryError::UnknownUnit {
                token: token.to_string(),
                unit: other.to_string(),
            })
        }
    };
    let quantity: u64 = digits
        .parse()
        .map_err(|_| RegistryError::InvalidQuantity(token.to_string()))?;
    if quantity == 0 {
        return Err(RegistryError::NonPositiveInterval(token.to_string()));
    }
    let minutes = quantity
        .checked_mul(factor)
        .and_then(|m| u32::try_from(m).ok())
        .ok_or_else(|| RegistryError::InvalidQuantity(token.to_string()))?;
    Ok(IntervalSpec { minutes })
}

/// Parses `HH:MM` into minutes since midnight.
pub fn parse_time_of_day(text: &str) -> Result<u16, RegistryError> {
    let bad = || RegistryError::InvalidTimeOfDay(text.to_string());
    let (h, m) = text.trim().split_once(':').ok_or_else(bad)?;
    if h.is_empty() || h.len() > 2 || m.len() != 2 {
        return Err(bad());
    }
    let h: u16 = h.parse().map_err(|_| bad())?;
    let m: u16 = m.parse().map_err(|_| bad())?;
    if h >= 24 || m >= 60 {
        return Err(bad());
    }
    Ok(h * 60 + m)
}

pub fn format_time_of_day(minute: u16) -> String {
    format!("{:02}:{:02}", minute / 60, minute % 60)
}

/// A daily window in minutes since midnight, half-open `[start, end)`.
/// `start > end` wraps past midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveHours {
    pub start_minute: u16,
    pub end_minute: u16,
}

impl ActiveHours {
    pub fn new(start_minute: u16, end_minute: u16) -> Result<Self, RegistryError> {
        let hours = Self {
            start_minute,
            end_minute,
        };
        hours.check()?;
        Ok(hours)
    }

    /// Parses `HH:MM-HH:MM`.
    pub fn parse(text: &str) -> Result<Self, RegistryError> {
        let (start, end) = text
            .trim()
            .split_once('-')
            .ok_or_else(|| RegistryError::InvalidActiveHours(text.to_string()))?;
        let start = parse_time_of_day(start)?;
        let end = parse_time_of_day(end)?;
        Self::new(start, end).map_err(|_| RegistryError::InvalidActiveHours(text.to_string()))
    }

    pub fn wraps_midnight(&self) -> bool {
        self.start_minute > self.end_minute
    }

    fn check(&self) -> Result<(), RegistryError> {
        if self.start_minute >= MINUTES_PER_DAY
            || self.end_minute >= MINUTES_PER_DAY
            || self.start_minute == self.end_minute
        {
            return Err(RegistryError::InvalidActiveHours(self.to_string()));
        }
        Ok(())
    }
}

impl fmt::Display for ActiveHours {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}-{}",
            format_time_of_day(self.start_minute),
            format_time_of_day(self.end_minute)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub at_minute: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Trigger {
    Interval(IntervalSpec),
    Schedule(ScheduleSpec),
}

impl Trigger {
    pub fn every(minutes: u32) -> Result<Self, RegistryError> {
        IntervalSpec::new(minutes).map(Trigger::Interval)
    }

    pub fn daily_at(at_minute: u16) -> Result<Self, RegistryError> {
        if at_minute >= MINUTES_PER_DAY {
            return Err(RegistryError::InvalidTimeOfDay(at_minute.to_string()));
        }
        Ok(Trigger::Schedule(ScheduleSpec { at_minute }))
    }

    /// `@HH:MM` is a daily schedule; anything else is an interval expression.
    pub fn parse(text: &str) -> Result<Self, RegistryError> {
        match text.trim().strip_prefix('@') {
            Some(time) => Trigger::daily_at(parse_time_of_day(time)?),
            None => parse_interval(text).map(Trigger::Interval),
        }
    }

    pub fn is_schedule(&self) -> bool {
        matches!(self, Trigger::Schedule(_))
    }
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trigger::Interval(spec) => write!(f, "every {}m", spec.minutes),
            Trigger::Schedule(spec) => write!(f, "@{}", format_time_of_day(spec.at_minute)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopTask {
    pub id: String,
    pub description: String,
    pub trigger: Trigger,
    pub active_hours: Option<ActiveHours>,
    pub first_exec_pending: bool,
    pub enabled: bool,
    pub last_run: Option<Timestamp>,
    pub last_schedule_fire_date: Option<NaiveDate>,
    /// Skill document location relative to the store's skills directory.
    pub skill_ref: Option<String>,
}

impl LoopTask {
    pub fn validate(&self) -> Result<(), RegistryError> {
        let invalid = |reason: &str| RegistryError::InvalidTask {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if !is_valid_task_id(&self.id) {
            return Err(invalid("malformed id"));
        }
        if self.first_exec_pending && self.skill_ref.is_some() {
            return Err(invalid("pending first execution but a skill is attached"));
        }
        if self.last_schedule_fire_date.is_some() && !self.trigger.is_schedule() {
            return Err(invalid("fire date recorded on an interval task"));
        }
        match self.trigger {
            Trigger::Interval(spec) if spec.minutes == 0 => return Err(invalid("zero interval")),
            Trigger::Schedule(spec) if spec.at_minute >= MINUTES_PER_DAY => {
                return Err(invalid("schedule time out of range"))
            }
            _ => {}
        }
        if let Some(hours) = self.active_hours {
            hours.check().map_err(|_| invalid("invalid active hours"))?;
        }
        Ok(())
    }
}

/// Lowercases, maps every non-alphanumeric run to a single `_`, and trims
/// underscores from both ends.
pub fn slugify(description: &str) -> String {
    let mut slug = String::with_capacity(description.len());
    for c in description.chars() {
        if c.is_ascii_alphanumeric() {
            slug.push(c.to_ascii_lowercase());
        } else if !slug.ends_with('_') {
            slug.push('_');
        }
    }
    slug.trim_matches('_').to_string()
}

/// Source of the 4-character id suffix.
pub trait SuffixSource {
    fn draw(&mut self) -> String;
}

/// Uniform draws from `[a-z0-9]`.
pub struct RandomSuffix<R: Rng>(pub R);

impl RandomSuffix<rand::rngs::ThreadRng> {
    pub fn thread() -> Self {
        RandomSuffix(rand::thread_rng())
    }
}

impl<R: Rng> SuffixSource for RandomSuffix<R> {
    fn draw(&mut self) -> String {
        const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
        (0..SUFFIX_LEN)
            .map(|_| ALPHABET[self.0.gen_range(0..ALPHABET.len())] as char)
            .collect()
    }
}

/// Replays a fixed list of suffixes, cycling when exhausted.
#[derive(Debug, Clone)]
pub struct FixedSuffix {
    suffixes: Vec<String>,
    next: usize,
}

impl FixedSuffix {
    pub fn new<I, S>(suffixes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let suffixes: Vec<String> = suffixes.into_iter().map(Into::into).collect();
        assert!(!suffixes.is_empty(), "FixedSuffix needs at least one suffix");
        Self { suffixes, next: 0 }
    }
}

impl SuffixSource for FixedSuffix {
    fn draw(&mut self) -> String {
        let s = self.suffixes[self.next % self.suffixes.len()].clone();
        self.next += 1;
        s
    }
}

fn is_suffix_char(c: char) -> bool {
    c.is_ascii_lowercase() || c.is_ascii_digit()
}

/// `loop_<slug prefix>_<suffix>`.
pub fn derive_task_id(
    description: &str,
    suffixes: &mut dyn SuffixSource,
) -> Result<String, RegistryError> {
    let slug = slugify(description);
    if slug.is_empty() {
        return Err(RegistryError::InvalidDescription(description.to_string()));
    }
    let prefix: String = slug.chars().take(SLUG_PREFIX_LEN).collect();
    let suffix = suffixes.draw();
    if suffix.chars().count() != SUFFIX_LEN || !suffix.chars().all(is_suffix_char) {
        return Err(RegistryError::InvalidSuffix(suffix));
    }
    Ok(format!("loop_{prefix}_{suffix}"))
}

/// Matches `^loop_[a-z0-9_]{1,8}_[a-z0-9]{4}$`.
pub fn is_valid_task_id(id: &str) -> bool {
    let Some(rest) = id.strip_prefix("loop_") else {
        return false;
    };
    if rest.len() < SUFFIX_LEN + 2 || !rest.is_ascii() {
        return false;
    }
    let (head, suffix) = rest.split_at(rest.len() - SUFFIX_LEN);
    let Some(prefix) = head.strip_suffix('_') else {
        return false;
    };
    (1..=SLUG_PREFIX_LEN).contains(&prefix.len())
        && prefix.chars().all(|c| is_suffix_char(c) || c == '_')
        && suffix.chars().all(is_suffix_char)
}

pub fn create_task(
    description: &str,
    trigger: Trigger,
    active_hours: Option<ActiveHours>,
    suffixes: &mut dyn SuffixSource,
) -> Result<LoopTask, RegistryError> {
    create_task_avoiding(description, trigger, active_hours, suffixes, |_| false)
}

/// Like [`create_task`], re-drawing the suffix while `taken` reports a
/// collision.
pub fn create_task_avoiding(
    description: &str,
    trigger: Trigger,
    active_hours: Option<ActiveHours>,
    suffixes: &mut dyn SuffixSource,
    taken: impl Fn(&str) -> bool,
) -> Result<LoopTask, RegistryError> {
    if let Some(hours) = active_hours {
        hours.check()?;
    }
    let probe = LoopTask {
        id: String::new(),
        description: description.trim().to_string(),
        trigger,
        active_hours,
        first_exec_pending: true,
        enabled: true,
        last_run: None,
        last_schedule_fire_date: None,
        skill_ref: None,
    };
    for _ in 0..MAX_ID_ATTEMPTS {
        let id = derive_task_id(description, suffixes)?;
        if !taken(&id) {
            let task = LoopTask { id, ..probe };
            task.validate()?;
            return Ok(task);
        }
    }
    Err(RegistryError::IdExhausted(description.to_string()))
}
