use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, CompletionBackend, CompletionResult, TokenUsage};
use crate::prompt::PromptCase;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    /// Base URL (`http://host:port/v1`) or the full `/chat/completions` URL.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: String,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    /// Mirror every request/response pair to this JSONL file.
    pub debug_log: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: "http://127.0.0.1:8000/v1".to_string(),
            model: "default".to_string(),
            temperature: 0.0,
            max_tokens: 64,
            timeout_secs: 60,
            max_retries: 3,
            max_in_flight: 4,
            api_key_env: "OPENAI_API_KEY".to_string(),
            initial_backoff_ms: 500,
            max_backoff_ms: 8_000,
            debug_log: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_in_flight == 0 {
            return Err(BackendError::Config(
                "max in-flight must be at least 1".into(),
            ));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(BackendError::Config("temperature must be >= 0".into()));
        }
        if self.endpoint.is_empty() {
            return Err(BackendError::Config("endpoint is empty".into()));
        }
        Ok(())
    }

    pub fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

struct Semaphore {
    available: Mutex<usize>,
    cond: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            available: Mutex::new(n),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.cond.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.cond.notify_one();
    }
}

enum Attempt {
    Done(String, Option<TokenUsage>),
    Retry(String, Option<Duration>),
    Fatal(BackendError),
}

/// Chat-completions client with bounded in-flight requests and exponential
/// backoff on 429/5xx and connection errors.
pub struct HttpBackend {
    cfg: BackendConfig,
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    gate: Semaphore,
    debug: Option<Mutex<File>>,
}

impl HttpBackend {
    pub fn new(cfg: BackendConfig) -> Result<Self, BackendError> {
        cfg.validate()?;
        let api_key = std::env::var(&cfg.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let debug = match &cfg.debug_log {
            Some(path) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| {
                        BackendError::Config(format!("debug log {}: {e}", path.display()))
                    })?,
            )),
            None => None,
        };
        Ok(HttpBackend {
            url: cfg.url(),
            gate: Semaphore::new(cfg.max_in_flight),
            cfg,
            api_key,
            agent,
            debug,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
        })
    }

    fn mirror(&self, request: &Value, status: Option<u16>, response: &str) {
        if let Some(log) = &self.debug {
            let line = json!({"request": request, "status": status, "response": response});
            let mut f = log.lock().unwrap();
            let _ = writeln!(f, "{line}");
        }
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut req = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(resp) => resp,
            Err(e) => {
                self.mirror(body, None, &e.to_string());
                return Attempt::Retry(e.to_string(), None);
            }
        };
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => {
                self.mirror(body, Some(status), &e.to_string());
                return Attempt::Retry(format!("reading body: {e}"), None);
            }
        };
        self.mirror(body, Some(status), &text);
        match status {
            200..=299 => match parse_completion(&text) {
                Ok((content, usage)) => Attempt::Done(content, usage),
                Err(e) => Attempt::Fatal(e),
            },
            408 | 429 | 500..=599 => Attempt::Retry(format!("status {status}"), retry_after),
            _ => Attempt::Fatal(BackendError::Status { status, body: text }),
        }
    }

    /// Sends `prompt` as a single user message.
    pub fn complete_prompt(&self, prompt: &str) -> Result<CompletionResult, BackendError> {
        let body = self.request_body(prompt);
        let _permit = self.gate.acquire();
        let start = Instant::now();
        let mut backoff = Duration::from_millis(self.cfg.initial_backoff_ms);
        let max_backoff = Duration::from_millis(self.cfg.max_backoff_ms);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Attempt::Done(text, usage) => {
                    return Ok(CompletionResult {
                        text,
                        latency_ms: start.elapsed().as_millis() as u64,
                        attempts,
                        usage,
                    })
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(message, retry_after) => {
                    if attempts > self.cfg.max_retries {
                        return Err(BackendError::Transport { attempts, message });
                    }
                    thread::sleep(retry_after.unwrap_or(backoff).min(max_backoff));
                    backoff = (backoff * 2).min(max_backoff);
                }
            }
        }
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, case: &PromptCase) -> Result<CompletionResult, BackendError> {
        self.complete_prompt(&case.prompt)
    }
}

/// Extracts `choices[0].message.content` (or legacy `choices[0].text`).
fn parse_completion(body: &str) -> Result<(String, Option<TokenUsage>), BackendError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| BackendError::Malformed(format!("not JSON: {e}")))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::Malformed("missing choices[0]".into()))?;
    let text = choice
        .pointer("/message/content")
        .or_else(|| choice.get("text"))
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Malformed("missing message content".into()))?;
    let usage = v
        .get("usage")
        .and_then(|u| serde_json::from_value::<TokenUsage>(u.clone()).ok());
    Ok((text.to_string(), usage))
}
