//! Offline index construction: load, chunk, extract, build, save.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{load_corpus, ChunkKind, ChunkMethod, Chunker, CorpusError, LoadReport};
use crate::extraction::{ExtractionMethod, Extractor};
use crate::gateway::LlmGateway;
use crate::kg::{build_graph, save_graph, Collision, GraphConfig, KgError, KnowledgeGraph, NodeKind};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Graph(#[from] KgError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexTimings {
    pub load_ms: f64,
    pub chunk_ms: f64,
    pub extract_ms: f64,
    pub build_ms: f64,
    pub save_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub load: LoadReport,
    pub documents: usize,
    /// Documents chunked from the model's boundaries vs the boundary regex.
    pub llm_chunked: usize,
    pub fallback_chunked: usize,
    pub chunks: usize,
    pub biographical_chunks: usize,
    /// Biographical chunks extracted by regex, of which served from the shape cache.
    pub regex_chunks: usize,
    pub cached_regex_chunks: usize,
    pub direct_chunks: usize,
    pub failed_chunks: usize,
    /// regex / (regex + direct); 0 when nothing was extracted.
    pub regex_ratio: f64,
    pub dropped_lines: usize,
    pub triples: usize,
    pub person_nodes: usize,
    pub nodes: usize,
    pub edges: usize,
    pub orphans: usize,
    pub invalid_triples: usize,
    pub collisions: Vec<Collision>,
    pub timings: IndexTimings,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}

/// Runs the offline stages over `corpus_root`. Documents are processed in id
/// order so that a scripted gateway sees a fixed call sequence.
pub fn build_index(
    corpus_root: &Path,
    chunker: &Chunker,
    extractor: &Extractor,
    graph_config: &GraphConfig,
    gateway: &dyn LlmGateway,
) -> Result<(KnowledgeGraph, IndexReport), IndexError> {
    let total = Instant::now();
    let mut report = IndexReport::default();

    let t = Instant::now();
    let corpus = load_corpus(corpus_root)?;
    report.load = corpus.report;
    report.documents = corpus.documents.len();
    report.timings.load_ms = ms(t);

    let t = Instant::now();
    let mut chunks = Vec::new();
    for doc in &corpus.documents {
        let chunked = chunker.chunk(doc, gateway)?;
        match chunked.method {
            ChunkMethod::Llm => report.llm_chunked += 1,
            ChunkMethod::Fallback => report.fallback_chunked += 1,
        }
        chunks.extend(chunked.chunks);
    }
    report.chunks = chunks.len();
    report.timings.chunk_ms = ms(t);

    let t = Instant::now();
    let mut triples = Vec::new();
    for chunk in chunks.iter().filter(|c| c.kind == ChunkKind::Biographical) {
        report.biographical_chunks += 1;
        let x = extractor.extract(chunk, gateway);
        match &x.method {
            ExtractionMethod::Regex { cached } => {
                report.regex_chunks += 1;
                report.cached_regex_chunks += usize::from(*cached);
            }
            ExtractionMethod::Direct => report.direct_chunks += 1,
            ExtractionMethod::Failed { reason } => {
                log::warn!("no triples for {}: {reason}", x.chunk_id);
                report.failed_chunks += 1;
            }
        }
        report.dropped_lines += x.dropped_lines;
        triples.extend(x.triples);
    }
    let extracted = report.regex_chunks + report.direct_chunks;
    if extracted > 0 {
        report.regex_ratio = report.regex_chunks as f64 / extracted as f64;
    }
    report.triples = triples.len();
    report.timings.extract_ms = ms(t);

    let t = Instant::now();
    let (graph, build) = build_graph(&triples, &chunks, graph_config)?;
    report.nodes = build.nodes;
    report.edges = build.edges;
    report.orphans = build.orphans;
    report.invalid_triples = build.invalid_triples;
    report.collisions = build.collisions;
    report.person_nodes = graph.nodes.values().filter(|n| n.kind == NodeKind::Person).count();
    report.timings.build_ms = ms(t);
    report.timings.total_ms = ms(total);
    Ok((graph, report))
}

/// [`build_index`] followed by saving the graph to `index_path`.
pub fn build_and_save(
    corpus_root: &Path,
    index_path: &Path,
    chunker: &Chunker,
    extractor: &Extractor,
    graph_config: &GraphConfig,
    gateway: &dyn LlmGateway,
) -> Result<(KnowledgeGraph, IndexReport), IndexError> {
    let total = Instant::now();
    let (graph, mut report) = build_index(corpus_root, chunker, extractor, graph_config, gateway)?;
    let t = Instant::now();
    save_graph(&graph, index_path)?;
    report.timings.save_ms = ms(t);
    report.timings.total_ms = ms(total);
    Ok((graph, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::gateway::{Gateway, MockTransport, RetryPolicy};
    use crate::kg::{load_graph, write_graph};
    use crate::synth::{SynthConfig, SynthCorpus};

    fn run(dir: &Path, synth: &SynthCorpus) -> (KnowledgeGraph, IndexReport) {
        let cfg = RunConfig::default();
        let gw = Gateway::new(MockTransport::new(synth.index_script()), RetryPolicy::immediate(0));
        build_and_save(
            &dir.join("corpus"),
            &dir.join("index.kg"),
            &cfg.chunker().unwrap(),
            &cfg.extractor().unwrap(),
            &cfg.graph,
            &gw,
        )
        .unwrap()
    }

    #[test]
    fn synthetic_corpus_indexes_fully_by_regex() {
        let dir = tempfile::tempdir().unwrap();
        let synth = SynthCorpus::generate(&SynthConfig::default()).unwrap();
        synth.write(dir.path()).unwrap();
        let (graph, report) = run(dir.path(), &synth);
        assert_eq!(report.person_nodes, 10);
        assert_eq!(report.biographical_chunks, 10);
        assert_eq!(report.regex_ratio, 1.0);
        assert_eq!(report.fallback_chunked, 0);
        assert_eq!(report.triples, 30);
        // the volume headers and the distractor documents
        assert_eq!(report.orphans, 3 + 5);
        assert!(report.collisions.is_empty());
        graph.check_integrity().unwrap();
        assert_eq!(load_graph(&dir.path().join("index.kg")).unwrap(), graph);
        for f in &synth.figures {
            let r = graph.retrieve(&f.name, 0).unwrap();
            assert_eq!(r.chunk_ids(), vec![f.chunk_id.clone()]);
        }
    }

    #[test]
    fn rerun_gives_identical_file() {
        let synth = SynthCorpus::generate(&SynthConfig::default()).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        synth.write(a.path()).unwrap();
        synth.write(b.path()).unwrap();
        let (ga, _) = run(a.path(), &synth);
        let (gb, _) = run(b.path(), &synth);
        assert_eq!(write_graph(&ga), write_graph(&gb));
        assert_eq!(
            std::fs::read(a.path().join("index.kg")).unwrap(),
            std::fs::read(b.path().join("index.kg")).unwrap()
        );
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let gw = Gateway::new(MockTransport::new(Default::default()), RetryPolicy::immediate(0));
        let err = build_index(dir.path(), &cfg.chunker().unwrap(), &cfg.extractor().unwrap(), &cfg.graph, &gw);
        assert!(matches!(err, Err(IndexError::Corpus(CorpusError::EmptyCorpus(_)))));
    }

    #[test]
    fn exhausted_script_falls_back_to_the_boundary_regex() {
        let dir = tempfile::tempdir().unwrap();
        let synth = SynthCorpus::generate(&SynthConfig {
            figures: 3,
            distractors: 0,
            ..SynthConfig::default()
        })
        .unwrap();
        synth.write(dir.path()).unwrap();
        let cfg = RunConfig::default();
        let mut script = synth.index_script();
        script.queues.remove(crate::gateway::tags::CHUNK);
        let gw = Gateway::new(MockTransport::new(script), RetryPolicy::immediate(0));
        let (graph, report) =
            build_index(&dir.path().join("corpus"), &cfg.chunker().unwrap(), &cfg.extractor().unwrap(), &cfg.graph, &gw)
                .unwrap();
        assert_eq!(report.fallback_chunked, 1);
        for f in &synth.figures {
            assert_eq!(graph.retrieve(&f.name, 0).unwrap().chunk_ids(), vec![f.chunk_id.clone()]);
        }
    }
}
