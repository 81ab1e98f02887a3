//! Run-level invariants of the generation pipeline under random verdicts.

use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chronicle_core::corpus::{Chunk, ChunkKind};
use chronicle_core::extraction::{Provenance, Triple};
use chronicle_core::gateway::{tags, ChatRequest, Gateway, MockReply, MockScript, MockTransport, RetryPolicy};
use chronicle_core::kg::{build_graph, GraphConfig, KnowledgeGraph};
use chronicle_core::pipeline::{
    read_biography, read_trail, AuditTrail, BiographyQuery, Pipeline, PipelineConfig, SentenceStatus, END_MARKER,
};
use chronicle_core::remediation::{EraTable, KnowledgeSnippet, Remediator, ReviewStore, SnapshotLookup};
use chronicle_core::verifier::Verifier;

fn graph() -> KnowledgeGraph {
    let texts = [
        ("a#00000", "a", "Hu E, styled Zhuo'an, born in the third year of Chongzhen (1630), a native of Yuyao."),
        ("b#00000", "b", "Hu E, styled Zhuo'an, born in the fourth year of Chongzhen (1631)."),
        ("c#00000", "c", "Yuyao County lies in Shaoxing Prefecture."),
    ];
    let chunks: Vec<Chunk> = texts
        .iter()
        .map(|(id, doc, text)| Chunk {
            id: id.to_string(),
            doc_id: doc.to_string(),
            start: 0,
            end: text.chars().count(),
            text: text.to_string(),
            kind: ChunkKind::Biographical,
        })
        .collect();
    let t = |h: &str, r: &str, tail: &str, c: &str| Triple {
        head: h.into(),
        relation: r.into(),
        tail: tail.into(),
        chunk_id: c.into(),
        provenance: Provenance::Regex,
    };
    let triples = [
        t("Hu E", "styled_name", "Zhuo'an", "a#00000"),
        t("Hu E", "hometown", "Yuyao", "a#00000"),
        t("Hu E", "styled_name", "Zhuo'an", "b#00000"),
        t("Yuyao County", "located_in", "Shaoxing Prefecture", "c#00000"),
    ];
    build_graph(&triples, &chunks, &GraphConfig::default()).unwrap().0
}

const POOL: [&str; 5] = [
    "Hu E was a native of Yuyao.",
    "He was born in the third year of Chongzhen (1632).",
    "He was born in 1631.",
    "Hu E, nicknamed Songjiang, liked tea.",
    "He passed the examination.",
];

fn random_model(seed: u64) -> Gateway<MockTransport> {
    let rng = Mutex::new(ChaCha8Rng::seed_from_u64(seed));
    let handler = move |req: &ChatRequest| {
        let mut rng = rng.lock().unwrap();
        let pick = |rng: &mut ChaCha8Rng| POOL[rng.random_range(0..POOL.len())].to_string();
        let text = match req.tag.as_str() {
            tags::GENERATE if rng.random_bool(0.15) => END_MARKER.to_string(),
            tags::VERIFY => {
                let s = ["SUPPORTED", "NOT_INCLUDED", "NOT_SUPPORTED,ERA", "NOT_SUPPORTED,REF", "NOT_SUPPORTED,KNOWLEDGE", "NOT_SUPPORTED,ALIAS", "NOT_SUPPORTED,OTHER"];
                let mut v = s[rng.random_range(0..s.len())].to_string();
                if rng.random_bool(0.7) {
                    v.push_str("\nEVIDENCE a#00000 born in the third year of Chongzhen (1630)");
                }
                if rng.random_bool(0.5) {
                    v.push_str("\nEVIDENCE b#00000 born in the fourth year of Chongzhen (1631)");
                }
                v
            }
            _ => pick(&mut rng),
        };
        Some(MockReply::text(text))
    };
    Gateway::new(MockTransport::new(MockScript::default()).with_handler(handler), RetryPolicy::immediate(0))
}

#[test]
fn provisional_sentences_carry_tickets_and_references_are_consulted_chunks() {
    let g = graph();
    for seed in 0..120 {
        let dir = tempfile::tempdir().unwrap();
        let review = ReviewStore::new(dir.path().join("reviews.jsonl"));
        let lookup = SnapshotLookup::new(vec![KnowledgeSnippet {
            id: "shaoxing".into(),
            title: "Shaoxing".into(),
            text: "Yuyao was a county of Shaoxing Prefecture.".into(),
        }]);
        let config = PipelineConfig {
            max_sentences: 6,
            ..PipelineConfig::default()
        };
        let remediator = Remediator::new(config.solver.clone(), EraTable::builtin(), Verifier::default(), review)
            .with_lookup(Box::new(lookup));
        let p = Pipeline::new(config, remediator);
        let run = dir.path().join("run");
        let out = p
            .generate_biography(&BiographyQuery::new("Zhuo'an"), &g, &random_model(seed), Some(&run))
            .unwrap();
        out.write(&run).unwrap();

        let pending: Vec<String> = p.remediator.review.pending().unwrap().into_iter().map(|t| t.id).collect();
        for s in &out.biography.sentences {
            match s.status {
                SentenceStatus::Provisional => {
                    let t = s.ticket.as_ref().expect("provisional sentence without a ticket");
                    assert!(pending.contains(t), "seed {seed}: ticket {t} is not pending");
                }
                SentenceStatus::Accepted => assert!(s.ticket.is_none()),
            }
        }
        let external: Vec<String> = out.trail.fixes().flat_map(|f| f.resolution.external_refs.clone()).collect();
        for r in &out.biography.references {
            assert!(
                out.trail.retrieval.chunk_ids.contains(r) || external.contains(r),
                "seed {seed}: reference {r} was never consulted"
            );
        }
        let emitted = out.trail.sentences.iter().filter(|r| r.index.is_some()).count();
        assert_eq!(emitted, out.biography.sentences.len(), "seed {seed}");

        assert_eq!(read_trail(&run).unwrap(), out.trail);
        assert_eq!(read_biography(&run).unwrap(), out.biography);
        assert_eq!(AuditTrail::from_jsonl(&out.trail.to_jsonl()).unwrap(), out.trail);
    }
}

#[test]
fn concurrent_queries_share_one_graph() {
    let g = graph();
    let results: Vec<String> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..4)
            .map(|i| {
                let g = &g;
                s.spawn(move || {
                    let dir = tempfile::tempdir().unwrap();
                    let review = ReviewStore::new(dir.path().join("r.jsonl"));
                    let remediator = Remediator::new(Default::default(), EraTable::builtin(), Verifier::default(), review);
                    let p = Pipeline::new(PipelineConfig::default(), remediator);
                    let q = if i % 2 == 0 { "Hu E" } else { "Zhuo'an" };
                    let out = p.generate_biography(&BiographyQuery::new(q), g, &random_model(7), None).unwrap();
                    out.trail.to_jsonl()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    // same seed, same node: the trails differ only in the recorded query
    let strip = |t: &str| t.lines().skip(1).collect::<Vec<_>>().join("\n");
    assert!(results.iter().all(|t| strip(t) == strip(&results[0])));
}
