//! Line-delimited JSON index files. See `docs/index-format.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Edge, EntityNode, KgError, KnowledgeGraph};
use crate::corpus::Chunk;

pub const FORMAT_NAME: &str = "chronicle-kg";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header { format: String, version: u32 },
    Chunk(Chunk),
    Node(EntityNode),
    Edge(Edge),
    Orphan { chunk_id: String },
    Footer { chunks: usize, nodes: usize, edges: usize, orphans: usize },
}

fn line(rec: &Record) -> String {
    serde_json::to_string(rec).expect("index records always serialize")
}

/// Serializes a graph to the index text format.
pub fn write_graph(graph: &KnowledgeGraph) -> String {
    let mut out = String::new();
    let mut push = |r: Record| {
        out.push_str(&line(&r));
        out.push('\n');
    };
    push(Record::Header {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
    });
    for c in graph.chunks.values() {
        push(Record::Chunk(c.clone()));
    }
    for n in graph.nodes.values() {
        push(Record::Node(n.clone()));
    }
    for e in &graph.edges {
        push(Record::Edge(e.clone()));
    }
    for o in &graph.orphan_chunks {
        push(Record::Orphan { chunk_id: o.clone() });
    }
    push(Record::Footer {
        chunks: graph.chunks.len(),
        nodes: graph.nodes.len(),
        edges: graph.edges.len(),
        orphans: graph.orphan_chunks.len(),
    });
    out
}

/// Parses the index text format.
pub fn read_graph(text: &str) -> Result<KnowledgeGraph, KgError> {
    let corrupt = |line: usize, message: String| KgError::CorruptIndex { line, message };
    let mut lines = text.split_inclusive('\n').enumerate();
    let Some((_, first)) = lines.next() else {
        return Err(corrupt(1, "empty file".into()));
    };
    let header: serde_json::Value =
        serde_json::from_str(first.trim_end()).map_err(|e| corrupt(1, format!("bad header: {e}")))?;
    if header.get("record").and_then(|v| v.as_str()) != Some("header")
        || header.get("format").and_then(|v| v.as_str()) != Some(FORMAT_NAME)
    {
        return Err(corrupt(1, "not a graph index header".into()));
    }
    let version = header
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| corrupt(1, "header has no version".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(KgError::UnsupportedVersion {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            supported: FORMAT_VERSION,
        });
    }

    let mut chunks = BTreeMap::new();
    let mut nodes = BTreeMap::new();
    let mut edges = Vec::new();
    let mut orphans = BTreeSet::new();
    let mut footer = None;
    for (i, raw) in lines {
        let n = i + 1;
        if footer.is_some() {
            return Err(corrupt(n, "data after footer".into()));
        }
        if !raw.ends_with('\n') {
            return Err(corrupt(n, "truncated record".into()));
        }
        let rec: Record = serde_json::from_str(raw.trim_end()).map_err(|e| corrupt(n, e.to_string()))?;
        match rec {
            Record::Header { .. } => return Err(corrupt(n, "repeated header".into())),
            Record::Chunk(c) => {
                if chunks.insert(c.id.clone(), c).is_some() {
                    return Err(corrupt(n, "duplicate chunk".into()));
                }
            }
            Record::Node(node) => {
                if nodes.insert(node.id.clone(), node).is_some() {
                    return Err(corrupt(n, "duplicate node".into()));
                }
            }
            Record::Edge(e) => edges.push(e),
            Record::Orphan { chunk_id } => {
                orphans.insert(chunk_id);
            }
            Record::Footer {
                chunks: c,
                nodes: nn,
                edges: e,
                orphans: o,
            } => footer = Some((n, (c, nn, e, o))),
        }
    }
    let Some((n, counts)) = footer else {
        return Err(corrupt(text.lines().count(), "missing footer (truncated file)".into()));
    };
    if counts != (chunks.len(), nodes.len(), edges.len(), orphans.len()) {
        return Err(corrupt(n, "footer counts do not match records".into()));
    }
    let graph = KnowledgeGraph::from_parts(nodes, edges, chunks, orphans);
    for e in &graph.edges {
        if !graph.nodes.contains_key(&e.head) || !graph.nodes.contains_key(&e.tail) || !graph.chunks.contains_key(&e.chunk_id) {
            return Err(corrupt(n, format!("edge {} -> {} does not resolve", e.head, e.tail)));
        }
    }
    for node in graph.nodes.values() {
        if let Some(c) = node.chunk_ids.iter().find(|c| !graph.chunks.contains_key(*c)) {
            return Err(corrupt(n, format!("node {} links unknown chunk {c}", node.id)));
        }
    }
    if let Some(o) = graph.orphan_chunks.iter().find(|c| !graph.chunks.contains_key(*c)) {
        return Err(corrupt(n, format!("orphan {o} is not a stored chunk")));
    }
    Ok(graph)
}

pub fn save_graph(graph: &KnowledgeGraph, path: &Path) -> Result<(), KgError> {
    let io = |e: std::io::Error| KgError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(write_graph(graph).as_bytes()).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_graph(path: &Path) -> Result<KnowledgeGraph, KgError> {
    let bytes = fs::read(path).map_err(|e| KgError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let text = String::from_utf8(bytes).map_err(|e| KgError::CorruptIndex {
        line: 0,
        message: format!("not UTF-8: {e}"),
    })?;
    read_graph(&text)
}
