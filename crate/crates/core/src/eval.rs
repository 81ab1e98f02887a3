//! Evaluation metrics: ROUGE-1/2, ROUGE-L, hallucination rate, average
//! erroneous atomic facts, and macro-averaged retrieval precision/recall/F1.
//!
//! Text is tokenized with [`crate::text::tokenize`], so Chinese is scored
//! per character and Latin per lowercased word.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// An input was too short to score; all components are 0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl RougeScore {
    fn from_counts(hits: usize, cand: usize, reference: usize) -> Self {
        let precision = hits as f64 / cand as f64;
        let recall = hits as f64 / reference as f64;
        Self {
            precision,
            recall,
            f1: harmonic(precision, recall),
            degenerate: false,
        }
    }

    fn degenerate() -> Self {
        Self {
            degenerate: true,
            ..Self::default()
        }
    }
}

pub fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ngrams<T: Ord + Clone>(seq: &[T], n: usize) -> BTreeMap<&[T], usize> {
    let mut m = BTreeMap::new();
    for w in seq.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// Clipped n-gram overlap between candidate and reference.
pub fn ngram_overlap<T: Ord + Clone>(candidate: &[T], reference: &[T], n: usize) -> usize {
    if n == 0 || candidate.len() < n || reference.len() < n {
        return 0;
    }
    let r = ngrams(reference, n);
    ngrams(candidate, n)
        .into_iter()
        .map(|(g, c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum()
}

pub fn rouge_n<T: Ord + Clone>(candidate: &[T], reference: &[T], n: usize) -> RougeScore {
    if n == 0 || candidate.len() < n || reference.len() < n {
        return RougeScore::degenerate();
    }
    let hits = ngram_overlap(candidate, reference, n);
    RougeScore::from_counts(hits, candidate.len() + 1 - n, reference.len() + 1 - n)
}

/// Longest common subsequence length, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> RougeScore {
    if candidate.is_empty() || reference.is_empty() {
        return RougeScore::degenerate();
    }
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

/// ROUGE-1, ROUGE-2 and ROUGE-L of two texts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeReport {
    pub rouge_1: RougeScore,
    pub rouge_2: RougeScore,
    pub rouge_l: RougeScore,
}

pub fn rouge_text(candidate: &str, reference: &str) -> RougeReport {
    let c = crate::text::tokenize(candidate);
    let r = crate::text::tokenize(reference);
    RougeReport {
        rouge_1: rouge_n(&c, &r, 1),
        rouge_2: rouge_n(&c, &r, 2),
        rouge_l: rouge_l(&c, &r),
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no labels to aggregate")]
    EmptyLabels,
    #[error("query `{0}` has no gold chunks")]
    MissingGold(String),
    #[error("gold for `{0}` is empty")]
    EmptyGold(String),
    #[error("{path}: {message}")]
    Input { path: String, message: String },
}

/// Expert labels for one generated biography.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    #[serde(default)]
    pub figure: String,
    pub has_hallucination: bool,
    pub erroneous_atomic_fact_count: u32,
}

pub fn hallucination_rate(labels: &[Label]) -> Result<f64, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::EmptyLabels);
    }
    Ok(labels.iter().filter(|l| l.has_hallucination).count() as f64 / labels.len() as f64)
}

pub fn avg_atomic_fact_error(labels: &[Label]) -> Result<f64, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::EmptyLabels);
    }
    Ok(labels.iter().map(|l| f64::from(l.erroneous_atomic_fact_count)).sum::<f64>() / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub query: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub precision: f64,
    pub recall: f64,
    /// Mean of per-query F1, not the harmonic mean of the averages above.
    pub f1: f64,
    pub per_query: Vec<QueryScore>,
}

pub type Gold = BTreeMap<String, BTreeSet<String>>;

/// Per-query precision, recall and F1, macro-averaged over queries.
pub fn retrieval_metrics(results: &BTreeMap<String, Vec<String>>, gold: &Gold) -> Result<RetrievalMetrics, EvalError> {
    let mut per_query = Vec::new();
    for (query, retrieved) in results {
        let g = gold.get(query).ok_or_else(|| EvalError::MissingGold(query.clone()))?;
        if g.is_empty() {
            return Err(EvalError::EmptyGold(query.clone()));
        }
        let r: BTreeSet<&String> = retrieved.iter().collect();
        let hits = r.iter().filter(|c| g.contains(c.as_str())).count() as f64;
        let precision = if r.is_empty() { 0.0 } else { hits / r.len() as f64 };
        let recall = hits / g.len() as f64;
        per_query.push(QueryScore {
            query: query.clone(),
            precision,
            recall,
            f1: harmonic(precision, recall),
        });
    }
    let n = per_query.len().max(1) as f64;
    let mean = |f: fn(&QueryScore) -> f64| per_query.iter().map(f).sum::<f64>() / n;
    Ok(RetrievalMetrics {
        precision: mean(|q| q.precision),
        recall: mean(|q| q.recall),
        f1: mean(|q| q.f1),
        per_query,
    })
}

fn input_err(path: &Path, e: impl std::fmt::Display) -> EvalError {
    EvalError::Input {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// One JSON label object per line; blank lines are skipped.
pub fn load_labels(path: &Path) -> Result<Vec<Label>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| input_err(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| input_err(path, format!("line {}: {e}", i + 1))))
        .collect()
}

/// A JSON object mapping each query name to its gold chunk ids.
pub fn load_gold(path: &Path) -> Result<Gold, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| input_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| input_err(path, e))
}
