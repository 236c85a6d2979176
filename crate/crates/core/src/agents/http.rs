//! Chat-completion transport: POST `{model, messages, temperature}` and read
//! `choices[0].message.content`.

use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{AgentBackend, AgentError, AgentReply, AgentRequest, TokenUsage};

pub const ENV_ENDPOINT: &str = "WITFORGE_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "WITFORGE_LLM_MODEL";
pub const ENV_KEY: &str = "WITFORGE_LLM_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// First backoff delay; doubles on each retry.
    pub base_delay: Duration,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            timeout: Duration::from_secs(120),
        }
    }

    /// Reads endpoint, model and key from the environment.
    pub fn from_env() -> Result<Self, AgentError> {
        let endpoint =
            std::env::var(ENV_ENDPOINT).map_err(|_| AgentError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let model = std::env::var(ENV_MODEL).map_err(|_| AgentError::Config(format!("{ENV_MODEL} is not set")))?;
        let mut c = Self::new(endpoint, model);
        c.api_key = std::env::var(ENV_KEY).ok().filter(|k| !k.is_empty());
        Ok(c)
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Done(AgentReply),
    Retry(String),
    Fail(AgentError),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn body(&self, req: &AgentRequest) -> Value {
        json!({
            "model": self.config.model,
            "messages": req.messages,
            "temperature": req.temperature,
        })
    }

    fn attempt(&self, body: &str) -> Attempt {
        let mut call = self.agent.post(&self.config.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let resp = match call.send(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = match resp.into_body().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(format!("reading body: {e}")),
        };
        match status {
            200..=299 => match parse_completion(&text) {
                Ok(reply) => Attempt::Done(reply),
                Err(m) => Attempt::Fail(AgentError::Transport { attempts: 1, message: m }),
            },
            401 | 403 => Attempt::Fail(AgentError::Auth(format!("HTTP {status}"))),
            429 | 500..=599 => Attempt::Retry(format!("HTTP {status}")),
            _ => Attempt::Fail(AgentError::Transport { attempts: 1, message: format!("HTTP {status}: {text}") }),
        }
    }
}

fn parse_completion(text: &str) -> Result<AgentReply, String> {
    let v: Value = serde_json::from_str(text).map_err(|e| format!("response is not JSON: {e}"))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or("response has no choices[0].message.content")?;
    let usage = v.get("usage").map(|u| TokenUsage {
        prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion_tokens: u.get("completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    });
    let mut reply = AgentReply::text(content);
    reply.token_usage = usage;
    Ok(reply)
}

impl AgentBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, req: &AgentRequest) -> Result<AgentReply, AgentError> {
        let body = self.body(req).to_string();
        let start = Instant::now();
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.config.base_delay * 2u32.pow(attempt - 1));
            }
            match self.attempt(&body) {
                Attempt::Done(mut reply) => {
                    reply.retry_count = attempt;
                    reply.latency = start.elapsed();
                    return Ok(reply);
                }
                Attempt::Fail(AgentError::Transport { message, .. }) => {
                    return Err(AgentError::Transport { attempts: attempt + 1, message })
                }
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(m) => {
                    log::warn!("{} attempt {} failed: {m}", req.role, attempt + 1);
                    last = m;
                }
            }
        }
        Err(AgentError::Transport { attempts: self.config.max_retries + 1, message: last })
    }
}
