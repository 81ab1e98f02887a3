//! Audit trail and biography records. The trail is deterministic under a
//! scripted gateway; wall-clock timings live in [`RunTimings`] instead.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::kg::MatchKind;
use crate::remediation::{Resolution, SolverKind};
use crate::text::is_mostly_cjk;
use crate::verifier::Verdict;

/// Short hex sha256 used to pin sentence prefixes in the trail.
pub fn digest(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Joins sentences the way they appear in prose: no separator for Chinese.
pub fn join_sentences<'a>(sentences: impl IntoIterator<Item = &'a str>) -> String {
    let parts: Vec<&str> = sentences.into_iter().collect();
    if parts.iter().all(|s| is_mostly_cjk(s)) {
        parts.concat()
    } else {
        parts.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceStatus {
    Accepted,
    /// Awaiting a reviewer; `ticket` is set.
    Provisional,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BioSentence {
    pub text: String,
    pub status: SentenceStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ticket: Option<String>,
    /// Ticket whose resolution last replaced this sentence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_by: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Biography {
    /// Node id of the subject.
    pub figure: String,
    pub sentences: Vec<BioSentence>,
    /// Reference chunks consulted, in retrieval order, then external ids.
    pub references: Vec<String>,
}

impl Biography {
    pub fn text(&self) -> String {
        join_sentences(self.sentences.iter().map(|s| s.text.as_str()))
    }

    pub fn provisional(&self) -> impl Iterator<Item = &BioSentence> {
        self.sentences.iter().filter(|s| s.status == SentenceStatus::Provisional)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DraftOrigin {
    Generated,
    Regenerated,
    SolverRewrite,
}

/// A routed failure and what its solver did about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedFix {
    pub fact: String,
    pub status: String,
    pub route: SolverKind,
    pub resolution: Resolution,
}

/// One version of a sentence and its verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub origin: DraftOrigin,
    pub text: String,
    pub verdicts: Vec<Verdict>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fixes: Vec<RoutedFix>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum Outcome {
    Accepted,
    Provisional { ticket: String },
    /// Unsupported facts removed after regeneration ran out.
    Rebuilt { dropped_facts: Vec<String> },
    /// Nothing supported was left of the sentence.
    Dropped { reason: String },
    /// Generation ended at this slot.
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    /// Generation slot, counted from 0 whether or not the sentence survived.
    pub slot: usize,
    /// Position in the biography when emitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    /// Digest of the frozen prefix the sentence was generated after.
    pub prefix_digest: String,
    pub attempts: Vec<Attempt>,
    #[serde(flatten)]
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub regenerations: u32,
    pub solver_passes: u32,
    /// Stage tags of every chat call made for this sentence, in order.
    pub calls: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl SentenceRecord {
    pub fn fixes(&self) -> impl Iterator<Item = &RoutedFix> {
        self.attempts.iter().flat_map(|a| a.fixes.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub query: String,
    pub matched_node: String,
    pub match_kind: MatchKind,
    pub hops: usize,
    pub neighbor_nodes: Vec<String>,
    pub chunk_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditTrail {
    pub retrieval: RetrievalRecord,
    pub sentences: Vec<SentenceRecord>,
    /// Set when the run stopped on a gateway failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum TrailLine {
    Retrieval(RetrievalRecord),
    Sentence(Box<SentenceRecord>),
    End { sentences: usize, failure: Option<String> },
}

impl AuditTrail {
    /// Every routed fix, in order.
    pub fn fixes(&self) -> impl Iterator<Item = &RoutedFix> {
        self.sentences.iter().flat_map(SentenceRecord::fixes)
    }

    pub fn regenerations(&self) -> u32 {
        self.sentences.iter().map(|s| s.regenerations).sum()
    }

    /// One JSON object per line: retrieval, one per sentence slot, end marker.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: &TrailLine| {
            out.push_str(&serde_json::to_string(line).expect("trail records serialize"));
            out.push('\n');
        };
        push(&TrailLine::Retrieval(self.retrieval.clone()));
        for s in &self.sentences {
            push(&TrailLine::Sentence(Box::new(s.clone())));
        }
        push(&TrailLine::End {
            sentences: self.sentences.len(),
            failure: self.failure.clone(),
        });
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let mut retrieval = None;
        let mut sentences = Vec::new();
        let mut end = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            match serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))? {
                TrailLine::Retrieval(r) => retrieval = Some(r),
                TrailLine::Sentence(s) => sentences.push(*s),
                TrailLine::End { sentences: n, failure } => end = Some((n, failure)),
            }
        }
        let retrieval = retrieval.ok_or("trail has no retrieval record")?;
        let (n, failure) = end.ok_or("trail has no end record")?;
        if n != sentences.len() {
            return Err(format!("end record counts {n} sentences, found {}", sentences.len()));
        }
        Ok(Self {
            retrieval,
            sentences,
            failure,
        })
    }
}

/// Wall-clock time per stage, milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SentenceTimings {
    pub generation_ms: f64,
    pub verification_ms: f64,
    pub remediation_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTimings {
    pub retrieval_ms: f64,
    pub sentences: Vec<SentenceTimings>,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub stage: String,
    pub ms: f64,
}

/// Per-stage totals: retrieval, generation, verification, remediation.
pub fn stage_timings(timings: &RunTimings) -> Vec<StageRow> {
    let sum = |f: fn(&SentenceTimings) -> f64| timings.sentences.iter().map(f).sum::<f64>();
    [
        ("retrieval", timings.retrieval_ms),
        ("generation", sum(|s| s.generation_ms)),
        ("verification", sum(|s| s.verification_ms)),
        ("remediation", sum(|s| s.remediation_ms)),
    ]
    .into_iter()
    .map(|(stage, ms)| StageRow {
        stage: stage.to_string(),
        ms,
    })
    .collect()
}
