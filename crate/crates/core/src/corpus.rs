//! Corpus loading and person-level chunking.
//!
//! The LLM chunker is only ever asked for span boundaries; chunk text is
//! always sliced verbatim from the document. Text not covered by any span is
//! kept as [`ChunkKind::Preamble`] chunks, so the chunks of a document always
//! partition it exactly.

use std::path::{Path, PathBuf};

use regex::RegexBuilder;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{strip_code_fence, tags, ChatRequest, LlmGateway, TemplateStore};
use crate::text::CharIndex;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
    pub source: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        let id = id.into();
        Self {
            title: id.clone(),
            source: String::new(),
            id,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkKind {
    Biographical,
    /// Front matter, headers or other text between person entries.
    Preamble,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub doc_id: String,
    /// Character offsets into the document text, end exclusive.
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub kind: ChunkKind,
}

/// Chunk ids sort in document order within a document.
pub fn chunk_id(doc_id: &str, index: usize) -> String {
    format!("{doc_id}#{index:05}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub excerpt: String,
    /// Expected `[start, end)` chunk spans in character offsets.
    pub boundaries: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WritingPattern {
    pub description: String,
    pub demonstrations: Vec<Demonstration>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus root {0} does not exist or is not a directory")]
    MissingRoot(PathBuf),
    #[error("corpus at {0} contains no readable documents")]
    EmptyCorpus(PathBuf),
    #[error("document {0} is empty")]
    EmptyDocument(String),
    #[error("invalid boundary pattern `{pattern}`: {message}")]
    InvalidPattern { pattern: String, message: String },
    #[error("writing pattern has no demonstrations")]
    NoDemonstrations,
    #[error("chunking failed for {doc_id}: {reason}")]
    ChunkingFailed { doc_id: String, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub loaded: usize,
    /// Files that could not be loaded, with the reason.
    pub failures: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub documents: Vec<Document>,
    pub report: LoadReport,
}

/// Loads every `*.txt` file under `root` as one document. Ids are relative
/// paths without the extension, `/`-separated; documents come back sorted by
/// id.
pub fn load_corpus(root: &Path) -> Result<LoadedCorpus, CorpusError> {
    if !root.is_dir() {
        return Err(CorpusError::MissingRoot(root.to_path_buf()));
    }
    let mut documents = Vec::new();
    let mut report = LoadReport::default();
    let walker = walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !e.file_name().to_string_lossy().starts_with('.'));
    for entry in walker {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                let path = e.path().map(|p| p.display().to_string()).unwrap_or_default();
                report.failures.push((path, e.to_string()));
                continue;
            }
        };
        let path = entry.path();
        let is_txt = path
            .extension()
            .is_some_and(|x| x.eq_ignore_ascii_case("txt"));
        if !entry.file_type().is_file() || !is_txt {
            continue;
        }
        let rel = path.strip_prefix(root).unwrap_or(path).with_extension("");
        let id = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        let shown = path.display().to_string();
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) => {
                report.failures.push((shown, e.to_string()));
                continue;
            }
        };
        let text = match String::from_utf8(bytes) {
            Ok(t) => t,
            Err(e) => {
                report.failures.push((shown, format!("invalid UTF-8: {e}")));
                continue;
            }
        };
        if text.is_empty() {
            report.failures.push((shown, "empty file".into()));
            continue;
        }
        let title = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| id.clone());
        documents.push(Document {
            id,
            title,
            text,
            source: shown,
        });
    }
    documents.sort_by(|a, b| a.id.cmp(&b.id));
    report.loaded = documents.len();
    if documents.is_empty() {
        return Err(CorpusError::EmptyCorpus(root.to_path_buf()));
    }
    Ok(LoadedCorpus { documents, report })
}

/// Builds chunks from sorted, non-overlapping biographical spans, filling
/// every gap with a preamble chunk.
pub fn chunks_from_spans(doc: &Document, spans: &[(usize, usize)]) -> Vec<Chunk> {
    let idx = CharIndex::new(&doc.text);
    let mut out = Vec::with_capacity(spans.len() * 2 + 1);
    let mut cursor = 0;
    let push = |start: usize, end: usize, kind: ChunkKind, out: &mut Vec<Chunk>| {
        let text = idx
            .slice(&doc.text, start, end)
            .expect("spans validated against the document")
            .to_string();
        out.push(Chunk {
            id: chunk_id(&doc.id, out.len()),
            doc_id: doc.id.clone(),
            start,
            end,
            text,
            kind,
        });
    };
    for &(s, e) in spans {
        if s > cursor {
            push(cursor, s, ChunkKind::Preamble, &mut out);
        }
        push(s, e, ChunkKind::Biographical, &mut out);
        cursor = e;
    }
    if cursor < idx.len() {
        push(cursor, idx.len(), ChunkKind::Preamble, &mut out);
    }
    out
}

/// Checks every chunk invariant against its document, including the
/// partition property.
pub fn check_partition(doc: &Document, chunks: &[Chunk]) -> Result<(), String> {
    let idx = CharIndex::new(&doc.text);
    let mut cursor = 0;
    let mut rebuilt = String::with_capacity(doc.text.len());
    for c in chunks {
        if c.doc_id != doc.id {
            return Err(format!("{} belongs to {}", c.id, c.doc_id));
        }
        if !(c.start < c.end && c.end <= idx.len()) {
            return Err(format!("{} has invalid span {}..{}", c.id, c.start, c.end));
        }
        if c.start < cursor {
            return Err(format!("{} overlaps or is out of order", c.id));
        }
        let slice = idx.slice(&doc.text, c.start, c.end).unwrap_or_default();
        if slice != c.text {
            return Err(format!("{} text differs from its span", c.id));
        }
        rebuilt.push_str(idx.slice(&doc.text, cursor, c.start).unwrap_or_default());
        rebuilt.push_str(&c.text);
        cursor = c.end;
    }
    rebuilt.push_str(idx.slice(&doc.text, cursor, idx.len()).unwrap_or_default());
    if rebuilt != doc.text {
        return Err("chunks do not reconstruct the document".into());
    }
    Ok(())
}

/// Deterministic chunker: each match of `boundary_regex` (multi-line mode)
/// starts a new chunk; text before the first match becomes a preamble chunk.
pub fn chunk_fallback(doc: &Document, boundary_regex: &str) -> Result<Vec<Chunk>, CorpusError> {
    let re = RegexBuilder::new(boundary_regex)
        .multi_line(true)
        .build()
        .map_err(|e| CorpusError::InvalidPattern {
            pattern: boundary_regex.to_string(),
            message: e.to_string(),
        })?;
    if doc.text.is_empty() {
        return Err(CorpusError::EmptyDocument(doc.id.clone()));
    }
    let idx = CharIndex::new(&doc.text);
    let mut starts: Vec<usize> = re
        .find_iter(&doc.text)
        .filter_map(|m| idx.char_offset(m.start()))
        .filter(|&s| s < idx.len())
        .collect();
    starts.dedup();
    if starts.is_empty() {
        return Ok(chunks_from_spans(doc, &[(0, idx.len())]));
    }
    let mut spans = Vec::with_capacity(starts.len());
    for (i, &s) in starts.iter().enumerate() {
        let e = starts.get(i + 1).copied().unwrap_or(idx.len());
        spans.push((s, e));
    }
    Ok(chunks_from_spans(doc, &spans))
}

/// Parses an LLM boundary reply: a JSON array of `[start, end]` pairs,
/// optionally wrapped in a code fence or surrounding prose.
pub fn parse_boundaries(reply: &str) -> Result<Vec<(usize, usize)>, String> {
    let body = strip_code_fence(reply);
    let (Some(open), Some(close)) = (body.find('['), body.rfind(']')) else {
        return Err("no JSON array in reply".into());
    };
    if close < open {
        return Err("no JSON array in reply".into());
    }
    let spans: Vec<(usize, usize)> =
        serde_json::from_str(&body[open..=close]).map_err(|e| format!("bad span list: {e}"))?;
    Ok(spans)
}

/// Sorts spans and checks they are non-empty, in range and non-overlapping.
/// An empty list is valid: the document holds no person entries.
pub fn validate_spans(mut spans: Vec<(usize, usize)>, len: usize) -> Result<Vec<(usize, usize)>, String> {
    spans.sort_unstable();
    let mut prev_end = 0;
    for &(s, e) in &spans {
        if s >= e || e > len {
            return Err(format!("span {s}..{e} is empty or outside 0..{len}"));
        }
        if s < prev_end {
            return Err(format!("span {s}..{e} overlaps the previous span"));
        }
        prev_end = e;
    }
    Ok(spans)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkMethod {
    Llm,
    Fallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkedDocument {
    pub chunks: Vec<Chunk>,
    pub method: ChunkMethod,
    /// LLM calls made for this document.
    pub attempts: u32,
    /// Why each rejected LLM reply was rejected.
    pub rejections: Vec<String>,
}

/// Pattern-guided LLM chunker with a regex backstop.
#[derive(Debug, Clone)]
pub struct Chunker {
    pub pattern: WritingPattern,
    pub fallback_regex: String,
    /// Extra LLM attempts after a malformed reply.
    pub retries: u32,
    pub templates: TemplateStore,
}

impl Chunker {
    pub fn new(pattern: WritingPattern, fallback_regex: impl Into<String>) -> Self {
        Self {
            pattern,
            fallback_regex: fallback_regex.into(),
            retries: 2,
            templates: TemplateStore::builtin(),
        }
    }

    fn render_demonstrations(&self) -> String {
        self.pattern
            .demonstrations
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let spans = serde_json::to_string(&d.boundaries).unwrap_or_default();
                format!("Example {}:\n{}\nSpans: {}\n", i + 1, d.excerpt, spans)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn chunk(&self, doc: &Document, gateway: &dyn LlmGateway) -> Result<ChunkedDocument, CorpusError> {
        if self.pattern.demonstrations.is_empty() {
            return Err(CorpusError::NoDemonstrations);
        }
        if doc.text.is_empty() {
            return Err(CorpusError::EmptyDocument(doc.id.clone()));
        }
        let len = crate::text::char_len(&doc.text);
        let prompt = self
            .templates
            .render_with(
                "chunk",
                &[
                    ("pattern", &self.pattern.description),
                    ("demonstrations", &self.render_demonstrations()),
                    ("length", &len.to_string()),
                    ("document", &doc.text),
                ],
            )
            .map_err(|e| CorpusError::ChunkingFailed {
                doc_id: doc.id.clone(),
                reason: e.to_string(),
            })?;
        let request = ChatRequest::new(tags::CHUNK, "You are a careful document segmenter.", prompt);

        let mut rejections = Vec::new();
        let mut attempts = 0;
        while attempts <= self.retries {
            attempts += 1;
            match gateway.chat(&request) {
                Ok(resp) => match parse_boundaries(&resp.content).and_then(|s| validate_spans(s, len)) {
                    Ok(spans) => {
                        return Ok(ChunkedDocument {
                            chunks: chunks_from_spans(doc, &spans),
                            method: ChunkMethod::Llm,
                            attempts,
                            rejections,
                        })
                    }
                    Err(why) => rejections.push(why),
                },
                Err(e) => {
                    rejections.push(format!("gateway: {e}"));
                    break;
                }
            }
        }
        log::info!(
            "chunking {} falls back to the boundary regex: {}",
            doc.id,
            rejections.last().map(String::as_str).unwrap_or("")
        );
        let chunks = chunk_fallback(doc, &self.fallback_regex).map_err(|e| CorpusError::ChunkingFailed {
            doc_id: doc.id.clone(),
            reason: e.to_string(),
        })?;
        Ok(ChunkedDocument {
            chunks,
            method: ChunkMethod::Fallback,
            attempts,
            rejections,
        })
    }
}
