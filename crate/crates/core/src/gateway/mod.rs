//! Every LLM interaction goes through this module.
//!
//! A [`Gateway`] pairs a [`Transport`] (the OpenAI-style HTTP client or the
//! scripted [`MockTransport`]) with a retry policy, per-stage sampling
//! overrides, and a call log. Pipeline code only sees the [`LlmGateway`]
//! trait.

mod http;
mod mock;
mod template;

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpConfig, HttpTransport};
pub use mock::{Fault, MockReply, MockScript, MockTransport, ScriptError};
pub use template::{render_prompt, TemplateError, TemplateStore};

/// Stage tags carried by every request.
pub mod tags {
    pub const CHUNK: &str = "chunk";
    pub const EXTRACT_REGEX: &str = "extract.regex";
    pub const EXTRACT_DIRECT: &str = "extract.direct";
    pub const GENERATE: &str = "generate";
    pub const REGENERATE: &str = "regenerate";
    pub const DECOMPOSE: &str = "decompose";
    pub const VERIFY: &str = "verify";
    pub const SOLVE_KNOWLEDGE: &str = "solve.knowledge";
    pub const SOLVE_OTHER: &str = "solve.other";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub turns: Vec<Turn>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Pipeline stage that issued the request.
    pub tag: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stop: Vec<String>,
}

impl ChatRequest {
    /// Single-turn request with deterministic sampling. Per-stage overrides
    /// configured on the [`Gateway`] are applied at send time.
    pub fn new(tag: &str, system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            turns: vec![Turn {
                role: Role::User,
                content: user.into(),
            }],
            temperature: 0.0,
            max_tokens: 1024,
            tag: tag.to_string(),
            stop: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let invalid = |m: &str| Err(GatewayError::InvalidRequest(m.to_string()));
        match self.turns.last() {
            None => return invalid("request has no turns"),
            Some(t) if t.role != Role::User => return invalid("last turn must be from the user"),
            _ => {}
        }
        if !(self.temperature >= 0.0) {
            return invalid("temperature must be >= 0");
        }
        if self.max_tokens == 0 {
            return invalid("max_tokens must be positive");
        }
        if self.tag.is_empty() {
            return invalid("request carries no stage tag");
        }
        Ok(())
    }

    /// Concatenated prompt text, used for usage estimates.
    pub fn prompt_text(&self) -> String {
        let mut s = self.system.clone();
        for t in &self.turns {
            s.push('\n');
            s.push_str(&t.content);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
}

/// Failure of one transport attempt.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("could not decode response: {0}")]
    Decode(String),
    #[error("mock script has no reply left for tag `{0}`")]
    ScriptExhausted(String),
}

impl TransportError {
    /// Timeouts, connection errors, 429 and 5xx are retried; everything else
    /// surfaces immediately.
    pub fn is_transient(&self) -> bool {
        match self {
            TransportError::Timeout | TransportError::Connection(_) => true,
            TransportError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("gateway unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("HTTP status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("mock script has no reply left for tag `{0}`")]
    ScriptExhausted(String),
}

/// Anything that can answer a chat request.
pub trait LlmGateway: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

impl<G: LlmGateway + ?Sized> LlmGateway for &G {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).chat(request)
    }
}

impl<G: LlmGateway + ?Sized> LlmGateway for std::sync::Arc<G> {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).chat(request)
    }
}

impl<G: LlmGateway + ?Sized> LlmGateway for Box<G> {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).chat(request)
    }
}

/// One attempt at the wire.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// Base delay, doubled on each retry.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            backoff_ms: 500,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_retries: u32) -> Self {
        Self {
            max_retries,
            backoff_ms: 0,
        }
    }

    fn delay(&self, retry: u32) -> Duration {
        Duration::from_millis(self.backoff_ms.saturating_mul(1u64 << retry.min(16)))
    }
}

/// Sampling parameters applied to every request carrying a given tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

/// Log entry for one `chat` call (after retries).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub tag: String,
    pub attempts: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    pub finish_reason: Option<FinishReason>,
    pub usage: Usage,
    /// The model stopped on the token budget rather than completing.
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct Gateway<T> {
    transport: T,
    policy: RetryPolicy,
    stages: BTreeMap<String, StageParams>,
    log: Mutex<Vec<CallRecord>>,
}

impl<T: Transport> Gateway<T> {
    pub fn new(transport: T, policy: RetryPolicy) -> Self {
        Self {
            transport,
            policy,
            stages: BTreeMap::new(),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn with_stage_params(mut self, stages: BTreeMap<String, StageParams>) -> Self {
        self.stages = stages;
        self
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn policy(&self) -> RetryPolicy {
        self.policy
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn apply_stage(&self, request: &ChatRequest) -> ChatRequest {
        let mut req = request.clone();
        if let Some(p) = self.stages.get(&req.tag) {
            if let Some(t) = p.temperature {
                req.temperature = t;
            }
            if let Some(m) = p.max_tokens {
                req.max_tokens = m;
            }
        }
        req
    }

    fn record(&self, rec: CallRecord) {
        if rec.truncated {
            log::warn!(
                "stage {} hit max_tokens={} (finish_reason=length)",
                rec.tag,
                rec.max_tokens
            );
        } else {
            log::debug!(
                "stage {} ok: {} prompt + {} completion tokens, {} attempt(s)",
                rec.tag,
                rec.usage.prompt_tokens,
                rec.usage.completion_tokens,
                rec.attempts
            );
        }
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push(rec);
    }
}

impl Gateway<MockTransport> {
    /// Scripted gateway with no backoff delay and the default retry budget.
    pub fn mock(script: MockScript) -> Self {
        Gateway::new(MockTransport::new(script), RetryPolicy::immediate(2))
    }
}

impl<T: Transport> LlmGateway for Gateway<T> {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let req = self.apply_stage(request);
        req.validate()?;
        let mut attempts = 0;
        loop {
            attempts += 1;
            let result = self.transport.send(&req);
            let base = CallRecord {
                tag: req.tag.clone(),
                attempts,
                temperature: req.temperature,
                max_tokens: req.max_tokens,
                finish_reason: None,
                usage: Usage::default(),
                truncated: false,
                error: None,
            };
            match result {
                Ok(resp) => {
                    self.record(CallRecord {
                        finish_reason: Some(resp.finish_reason),
                        usage: resp.usage,
                        truncated: resp.finish_reason == FinishReason::Length,
                        ..base
                    });
                    return Ok(resp);
                }
                Err(e) if e.is_transient() && attempts <= self.policy.max_retries => {
                    log::debug!("stage {} attempt {attempts} failed: {e}; retrying", req.tag);
                    std::thread::sleep(self.policy.delay(attempts - 1));
                }
                Err(e) => {
                    let err = match e {
                        TransportError::Status { status, .. } if status == 401 || status == 403 => {
                            GatewayError::Auth { status }
                        }
                        ref t if t.is_transient() => GatewayError::Unavailable {
                            attempts,
                            last: t.to_string(),
                        },
                        TransportError::Status { status, body } => GatewayError::Http { status, body },
                        TransportError::Decode(m) => GatewayError::Decode(m),
                        TransportError::ScriptExhausted(t) => GatewayError::ScriptExhausted(t),
                        TransportError::Timeout | TransportError::Connection(_) => unreachable!(),
                    };
                    self.record(CallRecord {
                        error: Some(err.to_string()),
                        ..base
                    });
                    return Err(err);
                }
            }
        }
    }
}

/// Wraps a gateway and keeps its own log of the calls made through it, so a
/// single run can attribute its LLM traffic even when the inner gateway is
/// shared with concurrent runs.
pub struct RecordingGateway<'a> {
    inner: &'a dyn LlmGateway,
    calls: Mutex<Vec<RecordedCall>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedCall {
    pub tag: String,
    pub ok: bool,
    pub usage: Usage,
}

impl<'a> RecordingGateway<'a> {
    pub fn new(inner: &'a dyn LlmGateway) -> Self {
        Self {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).len()
    }
}

impl LlmGateway for RecordingGateway<'_> {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let result = self.inner.chat(request);
        let rec = RecordedCall {
            tag: request.tag.clone(),
            ok: result.is_ok(),
            usage: result.as_ref().map(|r| r.usage).unwrap_or_default(),
        };
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).push(rec);
        result
    }
}

/// Strips a surrounding markdown code fence, if any.
pub fn strip_code_fence(s: &str) -> &str {
    let t = s.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = match rest.find('\n') {
            Some(i) => &rest[i + 1..],
            None => rest,
        };
        return rest.strip_suffix("```").unwrap_or(rest).trim();
    }
    t
}
