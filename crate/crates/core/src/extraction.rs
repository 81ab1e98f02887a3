//! Triple extraction from biographical chunks.
//!
//! The LLM is asked for a chunk-specific regex plus one relation label per
//! capture group; the regex is validated (linear-time dialect, arity, work
//! budget, at least one match) and applied locally. When no acceptable regex
//! can be obtained the chunk goes to direct LLM extraction ("plan B"), whose
//! reply is one `head<TAB>relation<TAB>tail` triple per line.
//!
//! Accepted regexes are cached by the punctuation/keyword shape of the
//! chunk's opening clause, so entries written to the same template reuse one
//! regex. Cache hits are re-validated against each new chunk.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Chunk;
use crate::gateway::{strip_code_fence, tags, ChatRequest, LlmGateway, TemplateStore};
use crate::text::is_cjk;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegexOrigin {
    LlmGenerated,
    Handcrafted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRegex {
    pub pattern: String,
    /// One relation label per capture group, in group order.
    pub capture_roles: Vec<String>,
    pub origin: RegexOrigin,
}

impl ExtractionRegex {
    pub fn new(pattern: &str, roles: &[&str], origin: RegexOrigin) -> Self {
        Self {
            pattern: pattern.to_string(),
            capture_roles: roles.iter().map(|r| r.to_string()).collect(),
            origin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegexDemonstration {
    pub excerpt: String,
    pub regex: ExtractionRegex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Regex,
    LlmDirect,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub chunk_id: String,
    pub provenance: Provenance,
}

/// Limits applied when validating a candidate regex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegexBudget {
    pub max_pattern_len: usize,
    /// Compiled program size limit in bytes.
    pub size_limit: usize,
    pub max_matches: usize,
    pub time_budget_ms: u64,
}

impl Default for RegexBudget {
    fn default() -> Self {
        Self {
            max_pattern_len: 2_000,
            size_limit: 1 << 20,
            max_matches: 10_000,
            time_budget_ms: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason", content = "detail")]
pub enum RejectReason {
    Compile(String),
    Arity { groups: usize, roles: usize },
    OverBudget(String),
    NoMatch,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::Compile(m) => write!(f, "does not compile: {m}"),
            RejectReason::Arity { groups, roles } => {
                write!(f, "{groups} capture groups but {roles} roles")
            }
            RejectReason::OverBudget(m) => write!(f, "over budget: {m}"),
            RejectReason::NoMatch => write!(f, "does not match the chunk"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validation {
    Accepted,
    Rejected(RejectReason),
}

fn compile(pattern: &str, budget: &RegexBudget) -> Result<Regex, RejectReason> {
    if pattern.len() > budget.max_pattern_len {
        return Err(RejectReason::OverBudget(format!(
            "pattern is {} bytes (limit {})",
            pattern.len(),
            budget.max_pattern_len
        )));
    }
    RegexBuilder::new(pattern)
        .size_limit(budget.size_limit)
        .dfa_size_limit(budget.size_limit)
        .build()
        .map_err(|e| match e {
            regex::Error::CompiledTooBig(n) => RejectReason::OverBudget(format!("compiled size exceeds {n}")),
            other => RejectReason::Compile(other.to_string()),
        })
}

/// Accepts iff the pattern compiles in the linear-time dialect, its capture
/// group count equals the role count, applying it stays within the budget,
/// and it matches the chunk at least once.
pub fn validate_regex(candidate: &ExtractionRegex, chunk: &Chunk, budget: &RegexBudget) -> Validation {
    let re = match compile(&candidate.pattern, budget) {
        Ok(re) => re,
        Err(r) => return Validation::Rejected(r),
    };
    let groups = re.captures_len() - 1;
    if groups != candidate.capture_roles.len() || groups == 0 {
        return Validation::Rejected(RejectReason::Arity {
            groups,
            roles: candidate.capture_roles.len(),
        });
    }
    let started = Instant::now();
    let limit = Duration::from_millis(budget.time_budget_ms);
    let mut matches = 0usize;
    for _ in re.captures_iter(&chunk.text) {
        matches += 1;
        if matches > budget.max_matches {
            return Validation::Rejected(RejectReason::OverBudget(format!(
                "more than {} matches",
                budget.max_matches
            )));
        }
        if started.elapsed() > limit {
            return Validation::Rejected(RejectReason::OverBudget(format!(
                "application exceeded {} ms",
                budget.time_budget_ms
            )));
        }
    }
    if started.elapsed() > limit {
        return Validation::Rejected(RejectReason::OverBudget(format!(
            "application exceeded {} ms",
            budget.time_budget_ms
        )));
    }
    if matches == 0 {
        return Validation::Rejected(RejectReason::NoMatch);
    }
    Validation::Accepted
}

#[derive(Debug, Error, PartialEq)]
pub enum ExtractionError {
    #[error("regex was not validated: {0}")]
    NotValidated(String),
    #[error("head role `{0}` is not one of the capture roles")]
    UnknownHeadRole(String),
    #[error("direct extraction failed for {chunk_id}: {reason}")]
    ExtractionFailed { chunk_id: String, reason: String },
}

/// Applies a validated regex. The `head_role` capture of each match is the
/// head entity; every other non-empty capture becomes one triple.
pub fn apply_regex(regex: &ExtractionRegex, chunk: &Chunk, head_role: &str) -> Result<Vec<Triple>, ExtractionError> {
    let re = compile(&regex.pattern, &RegexBudget::default())
        .map_err(|e| ExtractionError::NotValidated(e.to_string()))?;
    let head_idx = regex
        .capture_roles
        .iter()
        .position(|r| r == head_role)
        .ok_or_else(|| ExtractionError::UnknownHeadRole(head_role.to_string()))?;
    let mut triples = Vec::new();
    for caps in re.captures_iter(&chunk.text) {
        let head = match caps.get(head_idx + 1).map(|m| m.as_str().trim()) {
            Some(h) if !h.is_empty() => h.to_string(),
            _ => continue,
        };
        for (i, role) in regex.capture_roles.iter().enumerate() {
            if i == head_idx {
                continue;
            }
            let Some(tail) = caps.get(i + 1).map(|m| m.as_str().trim()) else {
                continue;
            };
            if tail.is_empty() {
                continue;
            }
            triples.push(Triple {
                head: head.clone(),
                relation: role.clone(),
                tail: tail.to_string(),
                chunk_id: chunk.id.clone(),
                provenance: Provenance::Regex,
            });
        }
    }
    Ok(triples)
}

#[derive(Debug, Deserialize)]
struct RegexReply {
    pattern: String,
    #[serde(alias = "capture_roles")]
    roles: Vec<String>,
}

fn parse_regex_reply(reply: &str) -> Result<ExtractionRegex, String> {
    let body = strip_code_fence(reply);
    let (Some(open), Some(close)) = (body.find('{'), body.rfind('}')) else {
        return Err("reply contains no JSON object".into());
    };
    if close < open {
        return Err("reply contains no JSON object".into());
    }
    let parsed: RegexReply =
        serde_json::from_str(&body[open..=close]).map_err(|e| format!("bad JSON: {e}"))?;
    Ok(ExtractionRegex {
        pattern: parsed.pattern,
        capture_roles: parsed.roles.into_iter().map(|r| r.trim().to_string()).collect(),
        origin: RegexOrigin::LlmGenerated,
    })
}

/// Outcome of asking the LLM for a regex.
#[derive(Debug, Clone, PartialEq)]
pub enum RegexProposal {
    Found(ExtractionRegex),
    /// Sentinel: no acceptable regex; the caller takes the plan-B path.
    NoRegex { reasons: Vec<String> },
}

fn render_regex_demos(demos: &[RegexDemonstration]) -> String {
    demos
        .iter()
        .map(|d| {
            let json = serde_json::json!({"pattern": d.regex.pattern, "roles": d.regex.capture_roles});
            format!("Chunk: {}\nAnswer: {}\n", d.excerpt.trim(), json)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Asks the LLM for a chunk-specific regex, retrying rejected proposals up
/// to `retries` times.
pub fn generate_regex(
    chunk: &Chunk,
    demonstrations: &[RegexDemonstration],
    gateway: &dyn LlmGateway,
    templates: &TemplateStore,
    budget: &RegexBudget,
    retries: u32,
) -> RegexProposal {
    let mut reasons = Vec::new();
    if demonstrations.is_empty() {
        reasons.push("no regex demonstrations configured".to_string());
        return RegexProposal::NoRegex { reasons };
    }
    let prompt = match templates.render_with(
        "extract_regex",
        &[("demonstrations", &render_regex_demos(demonstrations)), ("chunk", &chunk.text)],
    ) {
        Ok(p) => p,
        Err(e) => {
            reasons.push(e.to_string());
            return RegexProposal::NoRegex { reasons };
        }
    };
    let request = ChatRequest::new(tags::EXTRACT_REGEX, "You write precise regular expressions.", prompt);
    for _ in 0..=retries {
        let reply = match gateway.chat(&request) {
            Ok(r) => r.content,
            Err(e) => {
                reasons.push(format!("gateway: {e}"));
                break;
            }
        };
        let candidate = match parse_regex_reply(&reply) {
            Ok(c) => c,
            Err(e) => {
                reasons.push(e);
                continue;
            }
        };
        match validate_regex(&candidate, chunk, budget) {
            Validation::Accepted => return RegexProposal::Found(candidate),
            Validation::Rejected(r) => reasons.push(r.to_string()),
        }
    }
    RegexProposal::NoRegex { reasons }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectExtraction {
    pub triples: Vec<Triple>,
    /// Non-blank reply lines that were not a well-formed triple.
    pub dropped_lines: usize,
}

/// Parses a plan-B reply: one `head<TAB>relation<TAB>tail` per line.
pub fn parse_direct_reply(reply: &str, chunk_id: &str) -> DirectExtraction {
    let mut triples = Vec::new();
    let mut dropped_lines = 0;
    for line in strip_code_fence(reply).lines() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').map(str::trim).collect();
        match parts.as_slice() {
            [h, r, t] if !h.is_empty() && !r.is_empty() && !t.is_empty() => triples.push(Triple {
                head: h.to_string(),
                relation: r.to_string(),
                tail: t.to_string(),
                chunk_id: chunk_id.to_string(),
                provenance: Provenance::LlmDirect,
            }),
            _ => dropped_lines += 1,
        }
    }
    DirectExtraction { triples, dropped_lines }
}

/// Plan B: ask the LLM for the triples themselves.
pub fn extract_direct(
    chunk: &Chunk,
    gateway: &dyn LlmGateway,
    templates: &TemplateStore,
) -> Result<DirectExtraction, ExtractionError> {
    let failed = |reason: String| ExtractionError::ExtractionFailed {
        chunk_id: chunk.id.clone(),
        reason,
    };
    let prompt = templates
        .render_with("extract_direct", &[("chunk", &chunk.text)])
        .map_err(|e| failed(e.to_string()))?;
    let request = ChatRequest::new(tags::EXTRACT_DIRECT, "You extract biographical facts.", prompt);
    let reply = gateway.chat(&request).map_err(|e| failed(e.to_string()))?;
    Ok(parse_direct_reply(&reply.content, &chunk.id))
}

/// Shape of the opening clause of a chunk: punctuation and lowercase Latin
/// keywords kept literally, capitalized Latin name runs collapsed to `N`,
/// CJK runs collapsed to `H` (keeping the marker character that follows a
/// punctuation mark), digit runs to `9`.
pub fn pattern_shape(text: &str) -> String {
    let head: String = text
        .trim_start()
        .chars()
        .take_while(|&c| !matches!(c, '。' | '.' | '\n' | ';' | '；'))
        .collect();
    let mut shape = String::new();
    let chars: Vec<char> = head.chars().collect();
    let mut i = 0;
    let mut after_punct = false;
    let push_token = |shape: &mut String, tok: &str| {
        if !(tok == "N" && shape.ends_with('N')) {
            shape.push_str(tok);
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if is_cjk(c) {
            let start = i;
            while i < chars.len() && is_cjk(chars[i]) {
                i += 1;
            }
            if after_punct && i - start >= 2 {
                shape.push(chars[start]);
            }
            shape.push('H');
            after_punct = false;
        } else if c.is_alphabetic() {
            let start = i;
            while i < chars.len() && (chars[i].is_alphabetic() || chars[i] == '\'' || chars[i] == '\u{2019}') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            if c.is_uppercase() {
                push_token(&mut shape, "N");
            } else {
                shape.push_str(&word);
            }
            after_punct = false;
        } else if c.is_ascii_digit() {
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            shape.push('9');
            after_punct = false;
        } else if c.is_whitespace() {
            i += 1;
            if !shape.ends_with(' ') && !shape.ends_with('N') {
                shape.push(' ');
            }
        } else {
            if shape.ends_with(' ') {
                shape.pop();
            }
            shape.push(c);
            i += 1;
            after_punct = true;
        }
    }
    shape.trim().to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum ExtractionMethod {
    Regex { cached: bool },
    Direct,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkExtraction {
    pub chunk_id: String,
    pub triples: Vec<Triple>,
    pub method: ExtractionMethod,
    pub dropped_lines: usize,
    /// The regex used, when the regex path succeeded.
    pub regex: Option<ExtractionRegex>,
}

/// Per-chunk extractor with a shared, read-mostly demonstration set and the
/// shape-keyed regex cache.
pub struct Extractor {
    pub demonstrations: Vec<RegexDemonstration>,
    pub templates: TemplateStore,
    pub budget: RegexBudget,
    pub retries: u32,
    pub head_role: String,
    cache: Mutex<BTreeMap<String, ExtractionRegex>>,
}

impl Extractor {
    pub fn new(demonstrations: Vec<RegexDemonstration>) -> Self {
        Self {
            demonstrations,
            templates: TemplateStore::builtin(),
            budget: RegexBudget::default(),
            retries: 2,
            head_role: "name".to_string(),
            cache: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn cached_shapes(&self) -> usize {
        self.cache.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    fn head_role_for(&self, regex: &ExtractionRegex) -> String {
        if regex.capture_roles.iter().any(|r| *r == self.head_role) {
            self.head_role.clone()
        } else {
            regex.capture_roles[0].clone()
        }
    }

    fn try_regex(&self, regex: &ExtractionRegex, chunk: &Chunk) -> Option<Vec<Triple>> {
        if validate_regex(regex, chunk, &self.budget) != Validation::Accepted {
            return None;
        }
        let triples = apply_regex(regex, chunk, &self.head_role_for(regex)).ok()?;
        (!triples.is_empty()).then_some(triples)
    }

    pub fn extract(&self, chunk: &Chunk, gateway: &dyn LlmGateway) -> ChunkExtraction {
        let shape = pattern_shape(&chunk.text);
        let cached = self
            .cache
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(&shape)
            .cloned();
        if let Some(regex) = cached {
            if let Some(triples) = self.try_regex(&regex, chunk) {
                return ChunkExtraction {
                    chunk_id: chunk.id.clone(),
                    triples,
                    method: ExtractionMethod::Regex { cached: true },
                    dropped_lines: 0,
                    regex: Some(regex),
                };
            }
        }
        let proposal = generate_regex(
            chunk,
            &self.demonstrations,
            gateway,
            &self.templates,
            &self.budget,
            self.retries,
        );
        if let RegexProposal::Found(regex) = proposal {
            if let Some(triples) = self.try_regex(&regex, chunk) {
                self.cache
                    .lock()
                    .unwrap_or_else(|e| e.into_inner())
                    .insert(shape, regex.clone());
                return ChunkExtraction {
                    chunk_id: chunk.id.clone(),
                    triples,
                    method: ExtractionMethod::Regex { cached: false },
                    dropped_lines: 0,
                    regex: Some(regex),
                };
            }
        }
        match extract_direct(chunk, gateway, &self.templates) {
            Ok(d) => ChunkExtraction {
                chunk_id: chunk.id.clone(),
                triples: d.triples,
                method: ExtractionMethod::Direct,
                dropped_lines: d.dropped_lines,
                regex: None,
            },
            Err(e) => ChunkExtraction {
                chunk_id: chunk.id.clone(),
                triples: Vec::new(),
                method: ExtractionMethod::Failed { reason: e.to_string() },
                dropped_lines: 0,
                regex: None,
            },
        }
    }
}
