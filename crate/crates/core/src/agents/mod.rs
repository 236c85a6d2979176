//! The five generation and checking roles behind one request/reply interface.
//!
//! A role is served by an [`AgentBackend`]: the deterministic [`MockBackend`],
//! a chat-completion [`HttpBackend`], or a [`ReplayBackend`] reading a
//! transcript recorded by [`Recorder`]. [`AgentClient`] adds the token
//! budget, the in-flight cap and JSON extraction on top of any backend.

pub mod extract;
pub mod http;
pub mod mock;
pub mod prompts;
pub mod replay;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::scene::WorkspaceSpec;
use crate::schema::{task_from_value, ParseOptions};

pub use extract::extract_json;
pub use http::{HttpBackend, HttpConfig};
pub use mock::MockBackend;
pub use replay::{Recorder, ReplayBackend, TranscriptRecord};

pub const DEFAULT_TOKEN_BUDGET: usize = 16_000;
pub const DEFAULT_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    SeedGenerator,
    Verifier,
    Mutator,
    SceneGenerator,
    MetricGenerator,
}

impl AgentRole {
    pub const ALL: [AgentRole; 5] = [
        AgentRole::SeedGenerator,
        AgentRole::Verifier,
        AgentRole::Mutator,
        AgentRole::SceneGenerator,
        AgentRole::MetricGenerator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::SeedGenerator => "seed_generator",
            AgentRole::Verifier => "verifier",
            AgentRole::Mutator => "mutator",
            AgentRole::SceneGenerator => "scene_generator",
            AgentRole::MetricGenerator => "metric_generator",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    #[serde(rename = "role")]
    pub speaker: Speaker,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRequest {
    pub role: AgentRole,
    pub messages: Vec<Message>,
    pub temperature: f64,
    /// Only the mock backend honors this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl AgentRequest {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// The payload carried by the last user message, if it is JSON.
    pub fn payload(&self) -> Option<Value> {
        let m = self.messages.iter().rev().find(|m| m.speaker == Speaker::User)?;
        serde_json::from_str(&m.content).ok()
    }

    /// Rough size: four characters per token.
    pub fn estimated_tokens(&self) -> usize {
        self.messages.iter().map(|m| m.content.chars().count()).sum::<usize>().div_ceil(4)
    }

    pub fn check(&self) -> Result<(), AgentError> {
        match self.messages.first() {
            Some(m) if m.speaker == Speaker::System => {}
            _ => return Err(AgentError::Payload("first message must be the system prompt".into())),
        }
        if self.messages.iter().any(|m| m.content.is_empty()) {
            return Err(AgentError::Payload("messages must not be empty".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(AgentError::Payload(format!("invalid temperature {}", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentReply {
    pub raw_text: String,
    pub extracted_json: Option<Value>,
    pub token_usage: Option<TokenUsage>,
    pub latency: Duration,
    /// Retries the transport needed before this reply.
    pub retry_count: u32,
}

impl AgentReply {
    pub fn text(raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        Self { extracted_json: extract_json(&raw_text), raw_text, token_usage: None, latency: Duration::ZERO, retry_count: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("template error: {0}")]
    Template(String),
    #[error("payload error: {0}")]
    Payload(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("request needs about {estimated} tokens, budget is {budget}")]
    Oversize { estimated: usize, budget: usize },
    #[error("replay: {0}")]
    Replay(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl AgentError {
    /// Transport and configuration failures abort a run; the rest are per task.
    pub fn is_fatal(&self) -> bool {
        matches!(self, AgentError::Transport { .. } | AgentError::Auth(_) | AgentError::Config(_))
    }
}

/// A provider of role-conditioned completions. Implementations must be
/// shareable across threads.
pub trait AgentBackend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, req: &AgentRequest) -> Result<AgentReply, AgentError>;
}

/// One round trip without budget or concurrency limits.
pub fn invoke(backend: &dyn AgentBackend, req: &AgentRequest) -> Result<AgentReply, AgentError> {
    req.check()?;
    let start = Instant::now();
    let mut reply = backend.complete(req)?;
    if reply.latency == Duration::ZERO {
        reply.latency = start.elapsed();
    }
    if reply.extracted_json.is_none() {
        reply.extracted_json = extract_json(&reply.raw_text);
    }
    Ok(reply)
}

#[derive(Debug)]
struct Gate {
    cap: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut n = self.active.lock().expect("gate lock");
        while *n >= self.cap {
            n = self.freed.wait(n).expect("gate lock");
        }
        *n += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().expect("gate lock") -= 1;
        self.0.freed.notify_one();
    }
}

/// Shareable handle: budget check, in-flight cap, then [`invoke`].
#[derive(Clone)]
pub struct AgentClient {
    backend: Arc<dyn AgentBackend>,
    budget: usize,
    gate: Arc<Gate>,
}

impl fmt::Debug for AgentClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AgentClient").field("backend", &self.backend.name()).field("budget", &self.budget).finish()
    }
}

impl AgentClient {
    pub fn new(backend: Arc<dyn AgentBackend>, budget: usize, in_flight: usize) -> Self {
        Self {
            backend,
            budget,
            gate: Arc::new(Gate { cap: in_flight.max(1), active: Mutex::new(0), freed: Condvar::new() }),
        }
    }

    /// Same budget and in-flight slots, different backend.
    pub fn with_backend(&self, backend: Arc<dyn AgentBackend>) -> Self {
        Self { backend, budget: self.budget, gate: self.gate.clone() }
    }

    pub fn backend(&self) -> &Arc<dyn AgentBackend> {
        &self.backend
    }

    pub fn invoke(&self, req: &AgentRequest) -> Result<AgentReply, AgentError> {
        let estimated = req.estimated_tokens();
        if estimated > self.budget {
            return Err(AgentError::Oversize { estimated, budget: self.budget });
        }
        let _slot = self.gate.acquire();
        invoke(self.backend.as_ref(), req)
    }
}

/// Bounds of the table as described to the generation roles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z: f64,
}

impl Default for TableBounds {
    /// The planning table the seed and verifier roles reason about.
    fn default() -> Self {
        Self { x_min: 0.0, x_max: 1.05, y_min: -0.85, y_max: 0.85, z: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Temperatures {
    pub seed_generator: f64,
    pub verifier: f64,
    pub mutator: f64,
    pub scene_generator: f64,
    pub metric_generator: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Self { seed_generator: 0.8, verifier: 0.0, mutator: 0.8, scene_generator: 0.8, metric_generator: 0.0 }
    }
}

impl Temperatures {
    pub fn for_role(&self, role: AgentRole) -> f64 {
        match role {
            AgentRole::SeedGenerator => self.seed_generator,
            AgentRole::Verifier => self.verifier,
            AgentRole::Mutator => self.mutator,
            AgentRole::SceneGenerator => self.scene_generator,
            AgentRole::MetricGenerator => self.metric_generator,
        }
    }
}

/// Configuration values substituted into prompts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PromptContext {
    pub workspace: WorkspaceSpec,
    pub planning_table: TableBounds,
    pub temperatures: Temperatures,
}

pub const MUTATION_TYPES: [&str; 4] = ["pivot", "trap", "related", "unrelated"];

fn require_object(payload: &Value, role: AgentRole) -> Result<&serde_json::Map<String, Value>, AgentError> {
    payload.as_object().ok_or_else(|| AgentError::Payload(format!("{role} payload must be a JSON object")))
}

fn require_task(obj: &serde_json::Map<String, Value>, role: AgentRole) -> Result<(), AgentError> {
    let task = obj.get("task").ok_or_else(|| AgentError::Payload(format!("{role} payload needs a task")))?;
    task_from_value(task, &ParseOptions::default())
        .map(|_| ())
        .map_err(|e| AgentError::Payload(format!("{role} task: {e}")))
}

/// Checks a payload against its role's input contract.
pub fn check_payload(role: AgentRole, payload: &Value) -> Result<(), AgentError> {
    let obj = require_object(payload, role)?;
    match role {
        AgentRole::SeedGenerator => match obj.get("num_tasks") {
            Some(n) if n.as_u64().is_some_and(|n| n > 0) => Ok(()),
            _ => Err(AgentError::Payload("seed_generator payload needs a positive num_tasks".into())),
        },
        AgentRole::Verifier | AgentRole::SceneGenerator | AgentRole::MetricGenerator => require_task(obj, role),
        AgentRole::Mutator => {
            require_task(obj, role)?;
            match obj.get("mutation_type").and_then(Value::as_str) {
                Some(t) if MUTATION_TYPES.contains(&t) => {}
                _ => return Err(AgentError::Payload(format!("mutation_type must be one of {MUTATION_TYPES:?}"))),
            }
            if let Some(prev) = obj.get("previous_attempt").filter(|v| !v.is_null()) {
                if !prev.is_object() {
                    return Err(AgentError::Payload("previous_attempt must be a task object".into()));
                }
            }
            Ok(())
        }
    }
}

/// Renders the role's system prompt and wraps the payload as the user turn.
pub fn build_prompt(role: AgentRole, payload: &Value, ctx: &PromptContext) -> Result<AgentRequest, AgentError> {
    check_payload(role, payload)?;
    let system = prompts::render(role, &prompts::substitutions(ctx))?;
    let user = serde_json::to_string_pretty(payload).expect("JSON value serializes");
    Ok(AgentRequest {
        role,
        messages: vec![
            Message { speaker: Speaker::System, content: system },
            Message { speaker: Speaker::User, content: user },
        ],
        temperature: ctx.temperatures.for_role(role),
        seed: None,
    })
}

/// Values available to templates, keyed by placeholder name.
pub type Substitutions = BTreeMap<&'static str, String>;
