//! Sentence-level fact checking: sentence splitting, atomic-fact
//! decomposition, Jaccard pre-filtering of references, and the support check.
//!
//! Verdict wire format (first non-blank line, then evidence lines):
//!
//! ```text
//! SUPPORTED | NOT_INCLUDED | NOT_SUPPORTED,<ERA|REF|KNOWLEDGE|ALIAS|OTHER>
//! EVIDENCE <chunk id> <snippet>
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;
use crate::gateway::{strip_code_fence, tags, ChatRequest, LlmGateway, TemplateStore};
use crate::text::token_set;

const TERMINATORS: &[char] = &['。', '！', '？', '；', '.', '!', '?', ';'];
const CLOSERS: &[char] = &['”', '’', '」', '』', '）', ')', '"', '\'', '》', ']'];

/// Splits after terminal punctuation (CJK and Latin). A run of terminators
/// and closing quotes stays with its sentence; a `.` between digits does not
/// end a sentence. Concatenating the output gives back the input.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut current = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        current.push(c);
        i += 1;
        let decimal = c == '.'
            && i >= 2
            && chars[i - 2].is_ascii_digit()
            && chars.get(i).is_some_and(|n| n.is_ascii_digit());
        if TERMINATORS.contains(&c) && !decimal {
            while i < chars.len() && (TERMINATORS.contains(&chars[i]) || CLOSERS.contains(&chars[i])) {
                current.push(chars[i]);
                i += 1;
            }
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// |a ∩ b| / |a ∪ b|, and 0 when both are empty.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Indices kept by the reference filter: the top `k` scores that reach
/// `floor` (ties by position), returned in original order. When nothing
/// reaches the floor the single best reference is kept.
pub fn filter_indices(scores: &[f64], k: usize, floor: f64) -> Vec<usize> {
    if scores.is_empty() {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| scores[i] >= floor)
        .take(k.max(1))
        .collect();
    if kept.is_empty() {
        kept.push(order[0]);
    }
    kept.sort_unstable();
    kept
}

pub fn reference_scores(fact: &str, refs: &[Chunk]) -> Vec<f64> {
    let ft = token_set(fact);
    refs.iter().map(|c| jaccard(&ft, &token_set(&c.text))).collect()
}

pub fn filter_references(fact: &AtomicFact, refs: &[Chunk], k: usize, floor: f64) -> Vec<Chunk> {
    let scores = reference_scores(&fact.text, refs);
    filter_indices(&scores, k, floor)
        .into_iter()
        .map(|i| refs[i].clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicFact {
    pub text: String,
    pub sentence_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    EraConflict,
    RefConflict,
    KnowledgeLack,
    AliasConflict,
    Other,
}

impl ErrorKind {
    pub fn wire_name(self) -> &'static str {
        match self {
            ErrorKind::EraConflict => "ERA",
            ErrorKind::RefConflict => "REF",
            ErrorKind::KnowledgeLack => "KNOWLEDGE",
            ErrorKind::AliasConflict => "ALIAS",
            ErrorKind::Other => "OTHER",
        }
    }

    fn from_wire(s: &str) -> Option<Self> {
        Some(match s.trim().to_ascii_uppercase().as_str() {
            "ERA" => ErrorKind::EraConflict,
            "REF" => ErrorKind::RefConflict,
            "KNOWLEDGE" => ErrorKind::KnowledgeLack,
            "ALIAS" => ErrorKind::AliasConflict,
            "OTHER" => ErrorKind::Other,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "kind")]
pub enum VerdictStatus {
    Supported,
    NotIncluded,
    NotSupported(ErrorKind),
}

impl VerdictStatus {
    pub fn wire(self) -> String {
        match self {
            VerdictStatus::Supported => "SUPPORTED".into(),
            VerdictStatus::NotIncluded => "NOT_INCLUDED".into(),
            VerdictStatus::NotSupported(k) => format!("NOT_SUPPORTED,{}", k.wire_name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub chunk_id: String,
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub fact: AtomicFact,
    pub status: VerdictStatus,
    pub evidence: Vec<Evidence>,
    pub jaccard_scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub low_confidence: bool,
    /// The model's reply when it could not be parsed, or the gateway error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

impl Verdict {
    /// Supported ⇒ evidence present; NotIncluded ⇒ no evidence.
    pub fn is_consistent(&self) -> bool {
        match self.status {
            VerdictStatus::Supported => !self.evidence.is_empty(),
            VerdictStatus::NotIncluded => self.evidence.is_empty(),
            VerdictStatus::NotSupported(_) => true,
        }
    }
}

/// Parses a verdict reply. Evidence citing chunks outside `known` is dropped.
pub fn parse_verdict(reply: &str, known: &BTreeSet<&str>) -> Option<(VerdictStatus, Vec<Evidence>)> {
    let body = strip_code_fence(reply);
    let mut lines = body.lines().map(str::trim).filter(|l| !l.is_empty());
    let head = lines.next()?.trim_matches(|c: char| c == '*' || c == '`').to_ascii_uppercase();
    let (word, sub) = match head.split_once(',') {
        Some((w, s)) => (w.trim().to_string(), Some(s.trim().to_string())),
        None => (head.trim().to_string(), None),
    };
    let status = match word.as_str() {
        "SUPPORTED" if sub.is_none() => VerdictStatus::Supported,
        "NOT_INCLUDED" if sub.is_none() => VerdictStatus::NotIncluded,
        "NOT_SUPPORTED" => match sub {
            None => VerdictStatus::NotSupported(ErrorKind::Other),
            Some(s) => VerdictStatus::NotSupported(ErrorKind::from_wire(&s)?),
        },
        _ => return None,
    };
    let evidence = lines
        .filter_map(|l| {
            let rest = l.strip_prefix("EVIDENCE")?.trim_start();
            let (id, snippet) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
            let id = id.trim_matches(|c| c == '[' || c == ']');
            known.contains(id).then(|| Evidence {
                chunk_id: id.to_string(),
                snippet: snippet.trim().to_string(),
            })
        })
        .collect();
    Some((status, evidence))
}

/// The sentence of `chunk` sharing the most tokens with `fact`.
fn best_sentence(fact: &str, chunk: &Chunk) -> String {
    let ft = token_set(fact);
    split_sentences(&chunk.text)
        .into_iter()
        .map(|s| (jaccard(&ft, &token_set(&s)), s))
        .fold(None::<(f64, String)>, |best, (score, s)| match best {
            Some((b, _)) if b >= score => best,
            _ => Some((score, s)),
        })
        .map(|(_, s)| s.trim().to_string())
        .unwrap_or_else(|| chunk.text.trim().to_string())
}

pub fn render_references(refs: &[Chunk]) -> String {
    refs.iter()
        .map(|c| format!("[{}] {}", c.id, c.text.trim()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierConfig {
    pub top_k: usize,
    pub floor: f64,
    pub max_facts: usize,
    /// Extra attempts after a malformed verdict.
    pub malformed_retries: u32,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            top_k: 3,
            floor: 0.05,
            max_facts: 8,
            malformed_retries: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Verifier {
    pub config: VerifierConfig,
    pub templates: TemplateStore,
}

impl Default for Verifier {
    fn default() -> Self {
        Self::new(VerifierConfig::default(), TemplateStore::builtin())
    }
}

fn strip_list_marker(line: &str) -> &str {
    let l = line.trim();
    for p in ["- ", "* ", "• "] {
        if let Some(r) = l.strip_prefix(p) {
            return r.trim();
        }
    }
    let digits = l.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &l[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return r.trim();
        }
    }
    l
}

impl Verifier {
    pub fn new(config: VerifierConfig, templates: TemplateStore) -> Self {
        Self { config, templates }
    }

    /// One fact per reply line. An empty reply or a gateway failure yields
    /// the whole sentence as a single fact; facts beyond `max_facts` are
    /// merged into the last one.
    pub fn decompose(&self, sentence: &str, sentence_index: usize, gateway: &dyn LlmGateway) -> Vec<AtomicFact> {
        let whole = || {
            vec![AtomicFact {
                text: sentence.trim().to_string(),
                sentence_index,
            }]
        };
        let Ok(prompt) = self.templates.render_with("decompose", &[("sentence", sentence.trim())]) else {
            return whole();
        };
        let req = ChatRequest::new(tags::DECOMPOSE, "You analyse biographical text.", prompt);
        let reply = match gateway.chat(&req) {
            Ok(r) => r.content,
            Err(e) => {
                log::warn!("decomposition failed, checking the sentence whole: {e}");
                return whole();
            }
        };
        let mut facts: Vec<String> = strip_code_fence(&reply)
            .lines()
            .map(strip_list_marker)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        if facts.is_empty() {
            return whole();
        }
        let max = self.config.max_facts.max(1);
        if facts.len() > max {
            let tail = facts.split_off(max - 1).join(" ");
            facts.push(tail);
        }
        facts
            .into_iter()
            .map(|text| AtomicFact { text, sentence_index })
            .collect()
    }

    /// Checks one fact against already-filtered references.
    pub fn check_support(&self, fact: &AtomicFact, refs: &[Chunk], gateway: &dyn LlmGateway) -> Verdict {
        let scores = reference_scores(&fact.text, refs);
        let mut verdict = Verdict {
            fact: fact.clone(),
            status: VerdictStatus::NotIncluded,
            evidence: Vec::new(),
            jaccard_scores: refs.iter().map(|c| c.id.clone()).zip(scores.iter().copied()).collect(),
            low_confidence: false,
            raw: None,
        };
        if refs.is_empty() {
            return verdict;
        }
        let known: BTreeSet<&str> = refs.iter().map(|c| c.id.as_str()).collect();
        let prompt = match self
            .templates
            .render_with("verify", &[("fact", &fact.text), ("references", &render_references(refs))])
        {
            Ok(p) => p,
            Err(e) => {
                verdict.status = VerdictStatus::NotSupported(ErrorKind::Other);
                verdict.low_confidence = true;
                verdict.raw = Some(e.to_string());
                return verdict;
            }
        };
        let req = ChatRequest::new(tags::VERIFY, "You are a careful fact checker.", prompt);
        let mut last_raw = String::new();
        for _ in 0..=self.config.malformed_retries {
            let reply = match gateway.chat(&req) {
                Ok(r) => r.content,
                Err(e) => {
                    last_raw = format!("gateway error: {e}");
                    break;
                }
            };
            if let Some((status, evidence)) = parse_verdict(&reply, &known) {
                verdict.status = status;
                verdict.evidence = evidence;
                match status {
                    VerdictStatus::NotIncluded => verdict.evidence.clear(),
                    VerdictStatus::Supported if verdict.evidence.is_empty() => {
                        let best = filter_indices(&scores, 1, 0.0)[0];
                        verdict.evidence.push(Evidence {
                            chunk_id: refs[best].id.clone(),
                            snippet: best_sentence(&fact.text, &refs[best]),
                        });
                    }
                    _ => {}
                }
                return verdict;
            }
            last_raw = reply;
        }
        verdict.status = VerdictStatus::NotSupported(ErrorKind::Other);
        verdict.low_confidence = true;
        verdict.raw = Some(last_raw);
        verdict
    }

    /// Filters references for the fact, then checks it.
    pub fn verify_fact(&self, fact: &AtomicFact, refs: &[Chunk], gateway: &dyn LlmGateway) -> Verdict {
        let kept = filter_references(fact, refs, self.config.top_k, self.config.floor);
        self.check_support(fact, &kept, gateway)
    }

    /// Decomposes and checks a whole sentence; facts are checked in order.
    pub fn verify_sentence(
        &self,
        sentence: &str,
        sentence_index: usize,
        refs: &[Chunk],
        gateway: &dyn LlmGateway,
    ) -> Vec<Verdict> {
        self.decompose(sentence, sentence_index, gateway)
            .iter()
            .map(|f| self.verify_fact(f, refs, gateway))
            .collect()
    }
}
