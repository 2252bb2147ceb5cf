//! Chat-completions planner.
//!
//! Message building and reply parsing are plain JSON work and always
//! compiled; the HTTP transport needs the `live` feature.

use serde_json::{json, Value};

use super::PlannerError;
use crate::tools::{Tool, ToolArgs};

pub const API_KEY_ENV: &str = "LOOP_PLANNER_API_KEY";
pub const PROMPT_FILE: &str = "planner_prompt.txt";
pub const DEFAULT_SYSTEM_PROMPT: &str = include_str!("planner_prompt.txt");
pub const DEFAULT_MAX_TURNS: usize = 16;

const TOOLS: [Tool; 4] = [Tool::Bash, Tool::ReadFile, Tool::WriteFile, Tool::EditFile];

fn tool_description(tool: Tool) -> &'static str {
    match tool {
        Tool::Bash => "Run a shell command in the task working directory.",
        Tool::ReadFile => "Read a file relative to the working directory.",
        Tool::WriteFile => "Replace a file's content.",
        Tool::EditFile => "Replace one occurrence of old_string in a file.",
    }
}

/// Function definitions advertised to the model.
pub fn tool_definitions() -> Value {
    TOOLS
        .iter()
        .map(|&tool| {
            let properties: serde_json::Map<String, Value> = tool
                .arg_keys()
                .iter()
                .map(|k| (k.to_string(), json!({"type": "string"})))
                .collect();
            json!({
                "type": "function",
                "function": {
                    "name": tool.name(),
                    "description": tool_description(tool),
                    "parameters": {
                        "type": "object",
                        "properties": properties,
                        "required": tool.arg_keys(),
                    },
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub messages: Vec<Value>,
}

impl Conversation {
    pub fn new(system_prompt: &str, task_description: &str) -> Self {
        Self {
            messages: vec![
                json!({"role": "system", "content": system_prompt}),
                json!({"role": "user", "content": task_description}),
            ],
        }
    }

    pub fn request(&self, model: &str) -> Value {
        json!({
            "model": model,
            "messages": self.messages,
            "tools": tool_definitions(),
            "temperature": 0,
        })
    }

    pub fn push_assistant(&mut self, message: Value) {
        self.messages.push(message);
    }

    pub fn push_tool_result(&mut self, call_id: &str, result: &str) {
        self.messages
            .push(json!({"role": "tool", "tool_call_id": call_id, "content": result}));
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolRequest {
    pub id: String,
    pub tool: Tool,
    pub args: ToolArgs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    /// The assistant message, echoed back on the next turn.
    pub message: Value,
    pub calls: Vec<ToolRequest>,
}

fn malformed(what: impl std::fmt::Display) -> PlannerError {
    PlannerError::Transport(format!("malformed reply: {what}"))
}

pub fn parse_reply(body: &Value) -> Result<Reply, PlannerError> {
    let message = body
        .pointer("/choices/0/message")
        .ok_or_else(|| malformed("no choices[0].message"))?
        .clone();
    let mut calls = Vec::new();
    if let Some(list) = message.get("tool_calls").and_then(Value::as_array) {
        for call in list {
            let id = call.get("id").and_then(Value::as_str).unwrap_or_default();
            let name = call
                .pointer("/function/name")
                .and_then(Value::as_str)
                .ok_or_else(|| malformed("tool call without a name"))?;
            let tool = Tool::from_name(name).ok_or_else(|| malformed(format_args!("unknown tool `{name}`")))?;
            let raw = call
                .pointer("/function/arguments")
                .and_then(Value::as_str)
                .unwrap_or("{}");
            let parsed: serde_json::Map<String, Value> =
                serde_json::from_str(raw).map_err(|e| malformed(format_args!("{name} arguments: {e}")))?;
            let args = parsed
                .into_iter()
                .map(|(k, v)| match v {
                    Value::String(s) => (k, s),
                    other => (k, other.to_string()),
                })
                .collect();
            calls.push(ToolRequest {
                id: id.to_string(),
                tool,
                args,
            });
        }
    }
    Ok(Reply { message, calls })
}

#[cfg(feature = "live")]
pub use transport::{LiveConfig, LivePlanner};

#[cfg(feature = "live")]
mod transport {
    use std::path::Path;
    use std::time::Duration;

    use serde_json::Value;

    use super::*;
    use crate::planner::{Planner, PlannerSession};
    use crate::registry::LoopTask;

    #[derive(Debug, Clone)]
    pub struct LiveConfig {
        pub endpoint: String,
        pub model: String,
        pub api_key: String,
        pub system_prompt: String,
        pub max_turns: usize,
        pub request_timeout: Duration,
    }

    impl LiveConfig {
        /// Reads the key from the environment and the prompt from
        /// `prompt_path` when it exists.
        pub fn from_env(endpoint: &str, model: &str, prompt_path: &Path) -> Result<Self, PlannerError> {
            let api_key = std::env::var(API_KEY_ENV)
                .map_err(|_| PlannerError::Failed(format!("{API_KEY_ENV} is not set")))?;
            let system_prompt = std::fs::read_to_string(prompt_path).unwrap_or_else(|_| DEFAULT_SYSTEM_PROMPT.to_string());
            Ok(Self {
                endpoint: endpoint.to_string(),
                model: model.to_string(),
                api_key,
                system_prompt,
                max_turns: DEFAULT_MAX_TURNS,
                request_timeout: Duration::from_secs(120),
            })
        }
    }

    pub struct LivePlanner {
        config: LiveConfig,
        agent: ureq::Agent,
    }

    impl LivePlanner {
        pub fn new(config: LiveConfig) -> Self {
            let agent = ureq::Agent::config_builder()
                .timeout_global(Some(config.request_timeout))
                .build()
                .into();
            Self { config, agent }
        }

        fn send(&self, request: &Value) -> Result<Value, PlannerError> {
            let mut response = self
                .agent
                .post(&self.config.endpoint)
                .header("Authorization", &format!("Bearer {}", self.config.api_key))
                .send_json(request)
                .map_err(|e| PlannerError::Transport(e.to_string()))?;
            response
                .body_mut()
                .read_json()
                .map_err(|e| PlannerError::Transport(e.to_string()))
        }
    }

    impl Planner for LivePlanner {
        fn plan(&self, task: &LoopTask, session: &mut PlannerSession) -> Result<(), PlannerError> {
            let mut conversation = Conversation::new(&self.config.system_prompt, &task.description);
            for _ in 0..self.config.max_turns {
                if session.is_cancelled() {
                    return Err(PlannerError::Cancelled);
                }
                let reply = parse_reply(&self.send(&conversation.request(&self.config.model))?)?;
                conversation.push_assistant(reply.message);
                if reply.calls.is_empty() {
                    return Ok(());
                }
                for call in reply.calls {
                    let result = session.call(call.tool, call.args)?;
                    conversation.push_tool_result(&call.id, &result);
                }
            }
            Err(PlannerError::Failed(format!(
                "no final answer after {} turns",
                self.config.max_turns
            )))
        }
    }
}
