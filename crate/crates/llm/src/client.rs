//! Chat-completion client with retry, rate limiting and exchange logging.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::parse::parse_choice;
use crate::prompt::{Message, PromptVariant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub variant: PromptVariant,
    pub temperature: Option<f64>,
    /// Sent verbatim as the `thinking` field of the request.
    pub thinking: Option<Value>,
    pub max_retries: u32,
    pub timeout_secs: f64,
    /// JSON pointer to the answer text in the response body.
    pub response_pointer: String,
    /// Upper bound on requests per second across all sessions.
    pub max_requests_per_sec: Option<f64>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: String::new(),
            auth_env: None,
            variant: PromptVariant::ThinkOutLoud,
            temperature: None,
            thinking: None,
            max_retries: 3,
            timeout_secs: 60.0,
            response_pointer: "/choices/0/message/content".into(),
            max_requests_per_sec: None,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |m: &str| Err(LlmError::Config(m.into()));
        if self.endpoint.is_empty() {
            return bad("endpoint is empty");
        }
        if self.model.is_empty() {
            return bad("model is empty");
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad("timeout_secs must be positive");
        }
        if let Some(t) = self.temperature {
            if !(t.is_finite() && t >= 0.0) {
                return bad("temperature must be non-negative");
            }
        }
        if let Some(r) = self.max_requests_per_sec {
            if !(r.is_finite() && r > 0.0) {
                return bad("max_requests_per_sec must be positive");
            }
        }
        if !self.response_pointer.is_empty() && !self.response_pointer.starts_with('/') {
            return bad("response_pointer must be empty or start with '/'");
        }
        Ok(())
    }

    /// Request body for one exchange.
    pub fn request_body(&self, messages: &[Message]) -> Value {
        let mut body = json!({ "model": self.model, "messages": messages });
        if let Some(t) = self.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(th) = &self.thinking {
            body["thinking"] = th.clone();
        }
        body
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid llm config: {0}")]
    Config(String),
    #[error("no valid answer after {attempts} attempts: {last_error}")]
    Exhausted { attempts: u32, last_error: String },
}

/// Identifies one request within a run.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExchangeKey {
    pub subject_id: String,
    pub trial_index: usize,
    pub game: usize,
    pub round: usize,
    /// 0 for the first attempt, then one per retry.
    pub attempt: u32,
}

/// One request/response pair. `parsed` holds the machine label and is set iff
/// parsing succeeded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExchangeLog {
    #[serde(flatten)]
    pub key: ExchangeKey,
    pub request: Vec<Message>,
    pub response: Option<String>,
    pub parsed: Option<i64>,
    pub error: Option<String>,
    pub latency_ms: f64,
}

pub trait ExchangeSink: Send + Sync {
    fn record(&self, log: &ExchangeLog);
}

#[derive(Debug, Default)]
pub struct MemorySink(Mutex<Vec<ExchangeLog>>);

impl MemorySink {
    pub fn logs(&self) -> Vec<ExchangeLog> {
        self.0.lock().unwrap().clone()
    }
}

impl ExchangeSink for MemorySink {
    fn record(&self, log: &ExchangeLog) {
        self.0.lock().unwrap().push(log.clone());
    }
}

/// Appends one JSON object per line.
pub struct JsonlSink(Mutex<BufWriter<File>>);

impl JsonlSink {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        Ok(Self(Mutex::new(BufWriter::new(File::create(path)?))))
    }
}

impl ExchangeSink for JsonlSink {
    fn record(&self, log: &ExchangeLog) {
        let mut w = self.0.lock().unwrap();
        let line = serde_json::to_string(log).expect("log serialises");
        if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
            tracing::error!(error = %e, "failed to write exchange log");
        }
    }
}

pub fn read_jsonl(path: &Path) -> std::io::Result<Vec<ExchangeLog>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
        .collect()
}

/// Delivers one request body and returns the raw response text.
pub trait Transport: Send + Sync {
    fn send(&self, key: &ExchangeKey, body: &Value) -> Result<String, String>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    token: Option<String>,
}

impl HttpTransport {
    pub fn new(cfg: &LlmConfig) -> Result<Self, LlmError> {
        let token = match &cfg.auth_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| LlmError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self { client, endpoint: cfg.endpoint.clone(), token })
    }
}

impl Transport for HttpTransport {
    fn send(&self, _key: &ExchangeKey, body: &Value) -> Result<String, String> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status();
        let text = resp.text().map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("http {status}: {text}"));
        }
        Ok(text)
    }
}

/// Serves logged responses back by key and checks the request is unchanged.
pub struct ReplayTransport {
    entries: std::collections::HashMap<ExchangeKey, ExchangeLog>,
    cfg: LlmConfig,
}

impl ReplayTransport {
    pub fn new(cfg: &LlmConfig, logs: Vec<ExchangeLog>) -> Self {
        Self { entries: logs.into_iter().map(|l| (l.key.clone(), l)).collect(), cfg: cfg.clone() }
    }
}

impl Transport for ReplayTransport {
    fn send(&self, key: &ExchangeKey, body: &Value) -> Result<String, String> {
        let log = self.entries.get(key).ok_or_else(|| format!("no logged exchange for {key:?}"))?;
        if &self.cfg.request_body(&log.request) != body {
            return Err(format!("request for {key:?} differs from the logged one"));
        }
        match (&log.response, &log.error) {
            (Some(r), _) => Ok(r.clone()),
            (None, Some(e)) => Err(e.clone()),
            (None, None) => Err("logged exchange has no response".into()),
        }
    }
}

/// Minimum spacing between consecutive requests.
#[derive(Debug)]
struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    fn wait(&self) {
        let slot = {
            let mut next = self.next.lock().unwrap();
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
}

/// Shared by every session of a run.
pub struct LlmClient {
    pub cfg: LlmConfig,
    transport: Arc<dyn Transport>,
    sink: Option<Arc<dyn ExchangeSink>>,
    limiter: Option<RateLimiter>,
}

/// Outcome of a successful decision.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub label: i64,
    pub retries: u32,
    pub logs: Vec<ExchangeLog>,
}

impl LlmClient {
    pub fn new(cfg: LlmConfig, transport: Arc<dyn Transport>) -> Result<Self, LlmError> {
        cfg.validate()?;
        let limiter = cfg.max_requests_per_sec.map(|r| RateLimiter {
            interval: Duration::from_secs_f64(1.0 / r),
            next: Mutex::new(Instant::now()),
        });
        Ok(Self { cfg, transport, sink: None, limiter })
    }

    pub fn http(cfg: LlmConfig) -> Result<Self, LlmError> {
        let t = HttpTransport::new(&cfg)?;
        Self::new(cfg, Arc::new(t))
    }

    pub fn with_sink(mut self, sink: Arc<dyn ExchangeSink>) -> Self {
        self.sink = Some(sink);
        self
    }

    fn extract(&self, raw: &str) -> Result<String, String> {
        if self.cfg.response_pointer.is_empty() {
            return Ok(raw.to_string());
        }
        let v: Value = serde_json::from_str(raw).map_err(|e| format!("response is not JSON: {e}"))?;
        match v.pointer(&self.cfg.response_pointer) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(other) => Err(format!("{} is not a string: {other}", self.cfg.response_pointer)),
            None => Err(format!("response has no {}", self.cfg.response_pointer)),
        }
    }

    /// Sends `messages` until a valid label comes back, at most `max_retries + 1` times.
    pub fn decide(&self, key: ExchangeKey, messages: &[Message], valid: &[i64]) -> Result<Decision, LlmError> {
        let body = self.cfg.request_body(messages);
        let mut logs = Vec::new();
        let mut last_error = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if let Some(l) = &self.limiter {
                l.wait();
            }
            let key = ExchangeKey { attempt, ..key.clone() };
            let start = Instant::now();
            let sent = self.transport.send(&key, &body);
            let latency_ms = start.elapsed().as_secs_f64() * 1e3;
            let (response, outcome) = match sent {
                Ok(raw) => {
                    let outcome = self
                        .extract(&raw)
                        .and_then(|text| parse_choice(&text, valid).map_err(|e| e.to_string()));
                    (Some(raw), outcome)
                }
                Err(e) => (None, Err(e)),
            };
            let log = ExchangeLog {
                key,
                request: messages.to_vec(),
                response,
                parsed: outcome.as_ref().ok().copied(),
                error: outcome.as_ref().err().cloned(),
                latency_ms,
            };
            match outcome {
                Ok(label) => {
                    self.emit(&log);
                    logs.push(log);
                    return Ok(Decision { label, retries: attempt, logs });
                }
                Err(e) => {
                    tracing::debug!(attempt, error = %e, "llm attempt failed");
                    self.emit(&log);
                    logs.push(log);
                    last_error = e;
                }
            }
        }
        Err(LlmError::Exhausted { attempts: self.cfg.max_retries + 1, last_error })
    }

    fn emit(&self, log: &ExchangeLog) {
        if let Some(s) = &self.sink {
            s.record(log);
        }
    }
}
