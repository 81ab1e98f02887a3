//! Scripted, deterministic stand-in for a chat endpoint.
//!
//! Replies are looked up per request in this order: the queue keyed by the
//! request's stage tag, an optional programmatic handler, then the shared
//! `default` queue. Queues listed in `repeat_last` keep returning their final
//! reply once drained. All consumption happens under one lock, so the replay
//! order is total.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ChatRequest, ChatResponse, FinishReason, Transport, TransportError, Usage};
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    Timeout,
    Unavailable,
    Status(u16),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    Content {
        content: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        finish_reason: Option<FinishReason>,
    },
    Fault {
        fault: Fault,
    },
}

impl MockReply {
    pub fn text(s: impl Into<String>) -> Self {
        MockReply::Text(s.into())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub queues: BTreeMap<String, Vec<MockReply>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub default: Vec<MockReply>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub repeat_last: BTreeSet<String>,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read mock script {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed mock script {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
}

impl MockScript {
    /// Script whose replies are served in order regardless of tag.
    pub fn ordered<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::ordered_replies(replies.into_iter().map(|s| MockReply::Text(s.into())).collect())
    }

    pub fn ordered_replies(replies: Vec<MockReply>) -> Self {
        Self {
            default: replies,
            ..Self::default()
        }
    }

    /// Appends replies to the queue for `tag`.
    pub fn push<S: Into<String>>(&mut self, tag: &str, reply: S) -> &mut Self {
        self.push_reply(tag, MockReply::Text(reply.into()))
    }

    pub fn push_reply(&mut self, tag: &str, reply: MockReply) -> &mut Self {
        self.queues.entry(tag.to_string()).or_default().push(reply);
        self
    }

    pub fn repeat(&mut self, tag: &str) -> &mut Self {
        self.repeat_last.insert(tag.to_string());
        self
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: p.clone(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ScriptError::Parse { path: p, source })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mock scripts always serialize")
    }
}

type Handler = Box<dyn Fn(&ChatRequest) -> Option<MockReply> + Send + Sync>;

#[derive(Default)]
struct MockState {
    cursors: BTreeMap<String, usize>,
    default_cursor: usize,
    transcript: Vec<ChatRequest>,
}

pub struct MockTransport {
    script: MockScript,
    handler: Option<Handler>,
    state: Mutex<MockState>,
}

impl MockTransport {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            handler: None,
            state: Mutex::new(MockState::default()),
        }
    }

    /// Adds a programmatic responder consulted after the tag queue.
    pub fn with_handler<F>(mut self, f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Option<MockReply> + Send + Sync + 'static,
    {
        self.handler = Some(Box::new(f));
        self
    }

    /// Every request received so far, in order.
    pub fn transcript(&self) -> Vec<ChatRequest> {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).transcript.clone()
    }

    fn next_reply(&self, state: &mut MockState, request: &ChatRequest) -> Option<MockReply> {
        if let Some(queue) = self.script.queues.get(&request.tag) {
            let cursor = state.cursors.entry(request.tag.clone()).or_insert(0);
            if *cursor < queue.len() {
                *cursor += 1;
                return Some(queue[*cursor - 1].clone());
            }
            if self.script.repeat_last.contains(&request.tag) {
                if let Some(last) = queue.last() {
                    return Some(last.clone());
                }
            }
        }
        if let Some(h) = &self.handler {
            if let Some(reply) = h(request) {
                return Some(reply);
            }
        }
        if state.default_cursor < self.script.default.len() {
            state.default_cursor += 1;
            return Some(self.script.default[state.default_cursor - 1].clone());
        }
        if self.script.repeat_last.contains("default") {
            return self.script.default.last().cloned();
        }
        None
    }
}

impl Transport for MockTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        state.transcript.push(request.clone());
        let reply = self
            .next_reply(&mut state, request)
            .ok_or_else(|| TransportError::ScriptExhausted(request.tag.clone()))?;
        let (content, finish_reason) = match reply {
            MockReply::Text(c) => (c, FinishReason::Stop),
            MockReply::Content {
                content,
                finish_reason,
            } => (content, finish_reason.unwrap_or(FinishReason::Stop)),
            MockReply::Fault { fault } => {
                return Err(match fault {
                    Fault::Timeout => TransportError::Timeout,
                    Fault::Unavailable => TransportError::Connection("scripted outage".into()),
                    Fault::Status(status) => TransportError::Status {
                        status,
                        body: "scripted status".into(),
                    },
                })
            }
        };
        let usage = Usage {
            prompt_tokens: tokenize(&request.prompt_text()).len() as u64,
            completion_tokens: tokenize(&content).len() as u64,
        };
        Ok(ChatResponse {
            content,
            finish_reason,
            usage,
        })
    }
}
