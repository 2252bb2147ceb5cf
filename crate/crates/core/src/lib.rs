//! Record a periodic agent task once, replay it forever.
//!
//! A task is registered with an interval or a time-of-day trigger. On its
//! first due tick a [`planner::Planner`] drives the task through the tool
//! vocabulary while a [`tools::Recorder`] captures every call. The recording
//! is validated and compiled into a [`skill::LoopSkill`]: a flat list of tool
//! steps whose arguments carry template placeholders. Every later tick replays
//! that skill against the live clock and live step results without consulting
//! the planner again.
//!
//! Module map:
//!
//! - [`registry`]: task definitions, interval parsing, task ids
//! - [`store`]: `heartbeat.json` and skill documents, crash-safe writes
//! - [`tools`]: the tool vocabulary and the call recorder
//! - [`planner`]: first execution under a deadline
//! - [`skill`]: chain validation and template extraction
//! - [`replay`]: template resolution and deterministic replay
//! - [`scheduler`]: trigger predicates, tick loop, degradation handling
//! - [`cost`]: token-cost and success-rate models

pub mod clock;
pub mod cost;
pub mod planner;
pub mod registry;
pub mod replay;
pub mod scheduler;
pub mod skill;
pub mod store;
pub mod template;
pub mod tools;

pub use clock::{Clock, FixedClock, ManualClock, SystemClock};
pub use registry::{ActiveHours, IntervalSpec, LoopTask, Trigger};
pub use skill::{LoopSkill, SkillStep, TimeFormat};
pub use store::{HeartbeatConfig, Store, StorePaths};
pub use tools::{Tool, ToolArgs, ToolCall, ToolChain, ToolExecutor};

/// Wall-clock timestamps are naive local time, second resolution.
pub type Timestamp = chrono::NaiveDateTime;
