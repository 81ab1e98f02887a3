//! Biographical knowledge graph: entity nodes with aliases, relation edges,
//! node-to-chunk links, and breadth-first neighbor retrieval.

mod build;
mod store;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Chunk;
use crate::text::normalize_name;

pub use build::{build_graph, BuildReport, Collision, CollisionOutcome, GraphConfig};
pub use store::{load_graph, save_graph, write_graph, read_graph, FORMAT_NAME, FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    /// Created from a triple head.
    Person,
    /// Created only as a triple tail (a place, an office, ...).
    Entity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityNode {
    pub id: String,
    pub canonical_name: String,
    pub aliases: BTreeSet<String>,
    pub chunk_ids: BTreeSet<String>,
    pub kind: NodeKind,
}

impl EntityNode {
    /// Canonical name followed by aliases.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical_name.as_str()).chain(self.aliases.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub chunk_id: String,
    /// The tail string as extracted. For alias relations the edge is a
    /// self-loop and this holds the alias.
    pub tail_surface: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Canonical,
    Alias,
    /// The query was an exact node id (used to address split homonyms).
    NodeId,
    None,
}

#[derive(Debug, Error, PartialEq)]
pub enum KgError {
    #[error("name `{name}` is ambiguous: {candidates:?}")]
    Ambiguous { name: String, candidates: Vec<String> },
    #[error("triple cites unknown chunk `{0}`")]
    UnknownChunk(String),
    #[error("cannot access index {path}: {message}")]
    Io { path: String, message: String },
    #[error("corrupt index at line {line}: {message}")]
    CorruptIndex { line: usize, message: String },
    #[error("index format version {found} is not supported (this build reads {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_name: String,
    pub matched_node: Option<String>,
    pub match_kind: MatchKind,
    /// Nodes reached by expansion, in breadth-first order.
    pub neighbor_nodes: Vec<String>,
    pub chunks: Vec<Chunk>,
}

impl RetrievalResult {
    pub fn chunk_ids(&self) -> Vec<String> {
        self.chunks.iter().map(|c| c.id.clone()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeGraph {
    pub nodes: BTreeMap<String, EntityNode>,
    pub edges: Vec<Edge>,
    pub chunks: BTreeMap<String, Chunk>,
    pub orphan_chunks: BTreeSet<String>,
    /// Normalized name or alias to the nodes carrying it. Derived.
    pub name_index: BTreeMap<String, BTreeSet<String>>,
    adjacency: BTreeMap<String, BTreeSet<String>>,
}

impl KnowledgeGraph {
    /// Assembles a graph and derives the name index and adjacency.
    pub fn from_parts(
        nodes: BTreeMap<String, EntityNode>,
        edges: Vec<Edge>,
        chunks: BTreeMap<String, Chunk>,
        orphan_chunks: BTreeSet<String>,
    ) -> Self {
        let mut g = Self {
            nodes,
            edges,
            chunks,
            orphan_chunks,
            name_index: BTreeMap::new(),
            adjacency: BTreeMap::new(),
        };
        g.reindex();
        g
    }

    fn reindex(&mut self) {
        self.name_index.clear();
        self.adjacency.clear();
        for node in self.nodes.values() {
            for name in node.names() {
                self.name_index
                    .entry(normalize_name(name))
                    .or_default()
                    .insert(node.id.clone());
            }
        }
        for e in &self.edges {
            if e.head != e.tail {
                self.adjacency.entry(e.head.clone()).or_default().insert(e.tail.clone());
                self.adjacency.entry(e.tail.clone()).or_default().insert(e.head.clone());
            }
        }
    }

    pub fn node(&self, id: &str) -> Option<&EntityNode> {
        self.nodes.get(id)
    }

    pub fn chunk(&self, id: &str) -> Option<&Chunk> {
        self.chunks.get(id)
    }

    /// Undirected neighbors, ignoring self-loops, ordered by id.
    pub fn neighbors(&self, id: &str) -> impl Iterator<Item = &String> {
        self.adjacency.get(id).into_iter().flatten()
    }

    /// Canonical names first, then aliases; exact node ids are also accepted.
    pub fn lookup(&self, name: &str) -> Result<Option<(String, MatchKind)>, KgError> {
        let key = normalize_name(name);
        if key.is_empty() {
            return Ok(None);
        }
        let Some(ids) = self.name_index.get(&key) else {
            return Ok(self.nodes.contains_key(name).then(|| (name.to_string(), MatchKind::NodeId)));
        };
        let canonical: Vec<String> = ids
            .iter()
            .filter(|id| normalize_name(&self.nodes[*id].canonical_name) == key)
            .cloned()
            .collect();
        let (hits, kind) = if canonical.is_empty() {
            (ids.iter().cloned().collect::<Vec<_>>(), MatchKind::Alias)
        } else {
            (canonical, MatchKind::Canonical)
        };
        match hits.len() {
            1 => Ok(Some((hits[0].clone(), kind))),
            _ => Err(KgError::Ambiguous {
                name: name.to_string(),
                candidates: hits,
            }),
        }
    }

    /// Matched node's chunks, then chunks of nodes within `hops` undirected
    /// edges, breadth-first with each level ordered by node id.
    pub fn retrieve(&self, name: &str, hops: usize) -> Result<RetrievalResult, KgError> {
        let mut result = RetrievalResult {
            query_name: name.to_string(),
            matched_node: None,
            match_kind: MatchKind::None,
            neighbor_nodes: Vec::new(),
            chunks: Vec::new(),
        };
        let Some((start, kind)) = self.lookup(name)? else {
            return Ok(result);
        };
        result.matched_node = Some(start.clone());
        result.match_kind = kind;

        let mut order = vec![start.clone()];
        let mut seen: BTreeSet<String> = BTreeSet::from([start.clone()]);
        let mut frontier = VecDeque::from([start]);
        for _ in 0..hops {
            let mut next: BTreeSet<String> = BTreeSet::new();
            while let Some(id) = frontier.pop_front() {
                for n in self.neighbors(&id) {
                    if !seen.contains(n) {
                        next.insert(n.clone());
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            for n in &next {
                seen.insert(n.clone());
                order.push(n.clone());
                result.neighbor_nodes.push(n.clone());
            }
            frontier = next.into_iter().collect();
        }

        let mut emitted = BTreeSet::new();
        for id in &order {
            for cid in &self.nodes[id].chunk_ids {
                if emitted.insert(cid.clone()) {
                    if let Some(c) = self.chunks.get(cid) {
                        result.chunks.push(c.clone());
                    }
                }
            }
        }
        Ok(result)
    }

    /// Up to `limit` known names closest to `name`, best first.
    pub fn suggest(&self, name: &str, limit: usize) -> Vec<String> {
        let key = normalize_name(name);
        let mut scored: Vec<(f64, String)> = self
            .nodes
            .values()
            .filter(|n| n.kind == NodeKind::Person)
            .flat_map(|n| n.names().map(str::to_string).collect::<Vec<_>>())
            .map(|cand| (strsim::normalized_levenshtein(&key, &normalize_name(&cand)), cand))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        scored.dedup_by(|a, b| a.1 == b.1);
        scored.into_iter().filter(|(s, _)| *s > 0.0).take(limit).map(|(_, n)| n).collect()
    }

    /// Checks that every edge endpoint and chunk link resolves and that every
    /// node's chunks mention one of its names.
    pub fn check_integrity(&self) -> Result<(), String> {
        for node in self.nodes.values() {
            if node.canonical_name.is_empty() {
                return Err(format!("node {} has an empty name", node.id));
            }
            if node.aliases.contains(&node.canonical_name) {
                return Err(format!("node {} lists its canonical name as an alias", node.id));
            }
            for cid in &node.chunk_ids {
                let chunk = self
                    .chunks
                    .get(cid)
                    .ok_or_else(|| format!("node {} links unknown chunk {cid}", node.id))?;
                let text = normalize_name(&chunk.text);
                if !node.names().any(|n| text.contains(&normalize_name(n))) {
                    return Err(format!("chunk {cid} does not mention node {}", node.id));
                }
            }
        }
        for e in &self.edges {
            if !self.nodes.contains_key(&e.head) || !self.nodes.contains_key(&e.tail) {
                return Err(format!("edge {} -{}-> {} has a dangling endpoint", e.head, e.relation, e.tail));
            }
            if !self.chunks.contains_key(&e.chunk_id) {
                return Err(format!("edge cites unknown chunk {}", e.chunk_id));
            }
        }
        for cid in &self.orphan_chunks {
            if !self.chunks.contains_key(cid) {
                return Err(format!("orphan {cid} is not a stored chunk"));
            }
        }
        Ok(())
    }
}
