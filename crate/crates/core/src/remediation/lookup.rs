//! External background-knowledge lookup: a local snapshot file for offline
//! runs and tests, or an HTTP search endpoint.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Chunk, ChunkKind};
use crate::text::token_set;
use crate::verifier::jaccard;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeSnippet {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

impl KnowledgeSnippet {
    /// Pseudo-chunk standing in for the snippet during re-verification.
    pub fn as_chunk(&self) -> Chunk {
        Chunk {
            id: format!("ext:{}", self.id),
            doc_id: "ext".into(),
            start: 0,
            end: self.text.chars().count(),
            text: self.text.clone(),
            kind: ChunkKind::Biographical,
        }
    }
}

#[derive(Debug, Error)]
pub enum LookupError {
    #[error("knowledge source unreachable: {0}")]
    Unreachable(String),
    #[error("malformed knowledge response: {0}")]
    Malformed(String),
}

pub trait ExternalLookup: Send + Sync {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<KnowledgeSnippet>, LookupError>;
}

/// Ranks a fixed snippet list by token overlap with the query.
#[derive(Debug, Clone, Default)]
pub struct SnapshotLookup {
    pub snippets: Vec<KnowledgeSnippet>,
}

impl SnapshotLookup {
    pub fn new(snippets: Vec<KnowledgeSnippet>) -> Self {
        Self { snippets }
    }

    /// Reads a JSON array of `{id, title, text}` objects.
    pub fn load(path: &Path) -> Result<Self, LookupError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LookupError::Unreachable(format!("{}: {e}", path.display())))?;
        let snippets = serde_json::from_str(&text).map_err(|e| LookupError::Malformed(e.to_string()))?;
        Ok(Self { snippets })
    }
}

impl ExternalLookup for SnapshotLookup {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<KnowledgeSnippet>, LookupError> {
        let q = token_set(query);
        let mut scored: Vec<(f64, usize)> = self
            .snippets
            .iter()
            .enumerate()
            .map(|(i, s)| (jaccard(&q, &token_set(&format!("{} {}", s.title, s.text))), i))
            .filter(|(score, _)| *score > 0.0)
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        Ok(scored
            .into_iter()
            .take(limit)
            .map(|(_, i)| self.snippets[i].clone())
            .collect())
    }
}

/// `GET {url}?q=<query>&limit=<n>` returning a JSON array of snippets.
pub struct HttpLookup {
    url: String,
    agent: ureq::Agent,
}

impl HttpLookup {
    pub fn new(url: &str, timeout_secs: u64) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(timeout_secs.max(1))))
            .build()
            .into();
        Self {
            url: url.to_string(),
            agent,
        }
    }
}

impl ExternalLookup for HttpLookup {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<KnowledgeSnippet>, LookupError> {
        let mut resp = self
            .agent
            .get(&self.url)
            .query("q", query)
            .query("limit", limit.to_string())
            .call()
            .map_err(|e| LookupError::Unreachable(e.to_string()))?;
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| LookupError::Unreachable(e.to_string()))?;
        let mut snippets: Vec<KnowledgeSnippet> =
            serde_json::from_str(&body).map_err(|e| LookupError::Malformed(e.to_string()))?;
        snippets.truncate(limit);
        Ok(snippets)
    }
}
