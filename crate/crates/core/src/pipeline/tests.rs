use std::sync::Arc;

use super::*;
use crate::corpus::ChunkKind;
use crate::extraction::{Provenance, Triple};
use crate::gateway::{Gateway, MockReply, MockScript, MockTransport, RetryPolicy};
use crate::kg::{build_graph, GraphConfig};
use crate::remediation::{Choice, EraTable, ReviewStore, SolverKind};
use crate::verifier::Verifier;

const HU_E: &str = "Hu E, styled Zhuo'an. Born on the thirteenth day of the second month in the third year of Chongzhen (1630) of the Ming dynasty, a native of Yuyao County. In the eighteenth year of Shunzhi (1661), appointed as the judicial officer of Songjiang Prefecture.";

fn graph() -> KnowledgeGraph {
    let chunk = Chunk {
        id: "hu#00000".into(),
        doc_id: "hu".into(),
        start: 0,
        end: HU_E.chars().count(),
        text: HU_E.into(),
        kind: ChunkKind::Biographical,
    };
    let t = |r: &str, tail: &str| Triple {
        head: "Hu E".into(),
        relation: r.into(),
        tail: tail.into(),
        chunk_id: "hu#00000".into(),
        provenance: Provenance::Regex,
    };
    let triples = [t("styled_name", "Zhuo'an"), t("hometown", "Yuyao County")];
    build_graph(&triples, &[chunk], &GraphConfig::default()).unwrap().0
}

fn section<'a>(prompt: &'a str, label: &str) -> &'a str {
    let start = prompt.rfind(label).map(|i| i + label.len()).unwrap_or(0);
    let rest = &prompt[start..];
    rest.split("\n\nReferences:").next().unwrap_or(rest).trim()
}

/// Drafts by prefix length; one fact per sentence; verdicts from `judge`.
fn model(
    drafts: Vec<&'static str>,
    regen: &'static str,
    judge: impl Fn(&str) -> String + Send + Sync + 'static,
) -> Gateway<MockTransport> {
    let handler = move |req: &ChatRequest| {
        let p = &req.turns[0].content;
        let reply = match req.tag.as_str() {
            tags::GENERATE => {
                let prefix = section(p, "Biography so far:\n");
                let n = if prefix == "(none)" { 0 } else { split_sentences(prefix).len() };
                drafts.get(n).copied().unwrap_or(END_MARKER).to_string()
            }
            tags::REGENERATE => regen.to_string(),
            tags::DECOMPOSE => section(p, "Sentence:\n").to_string(),
            tags::VERIFY => judge(section(p, "Atomic fact:\n")),
            _ => return None,
        };
        Some(MockReply::text(reply))
    };
    Gateway::new(
        MockTransport::new(MockScript::default()).with_handler(handler),
        RetryPolicy::immediate(0),
    )
}

fn pipeline(dir: &Path) -> Pipeline {
    let review = ReviewStore::new(dir.join("reviews.jsonl"));
    let remediator = Remediator::new(SolverConfig::default(), EraTable::builtin(), Verifier::default(), review);
    Pipeline::new(PipelineConfig::default(), remediator)
}

const S0: &str = "Hu E, styled Zhuo'an, was a native of Yuyao County.";
const S1: &str = "He was born in the third year of Chongzhen (1630).";
const S1_BAD: &str = "He was born in the fifth year of Chongzhen (1632).";
const S2: &str = "In the eighteenth year of Shunzhi (1661), he was appointed judicial officer of Songjiang Prefecture.";

fn truthful(fact: &str) -> String {
    if fact.contains("1632") {
        "NOT_SUPPORTED,ERA\nEVIDENCE hu#00000 the third year of Chongzhen (1630) of the Ming dynasty".into()
    } else if fact.contains("fond of") {
        "NOT_INCLUDED".into()
    } else {
        "SUPPORTED".into()
    }
}

#[test]
fn supported_text_needs_no_solver() {
    let dir = tempfile::tempdir().unwrap();
    let gw = model(vec![S0, S1, S2], "", truthful);
    let out = pipeline(dir.path())
        .generate_biography(&BiographyQuery::new("Hu E"), &graph(), &gw, None)
        .unwrap();
    assert_eq!(out.biography.sentences.len(), 3);
    assert!(out.biography.sentences.iter().all(|s| s.status == SentenceStatus::Accepted));
    assert_eq!(out.trail.fixes().count(), 0);
    assert_eq!(out.trail.sentences.last().unwrap().outcome, Outcome::End);
    assert_eq!(out.biography.references, vec!["hu#00000"]);
    assert_eq!(out.biography.text(), format!("{S0} {S1} {S2}"));
}

#[test]
fn era_error_is_corrected_in_place() {
    let dir = tempfile::tempdir().unwrap();
    let gw = model(vec![S0, S1_BAD, S2], "", truthful);
    let out = pipeline(dir.path())
        .generate_biography(&BiographyQuery::new("Zhuo'an"), &graph(), &gw, None)
        .unwrap();
    assert_eq!(out.biography.sentences[1].text, S1);
    let fixes: Vec<_> = out.trail.fixes().collect();
    assert_eq!(fixes.len(), 1);
    assert_eq!(fixes[0].route, SolverKind::Era);
    assert_eq!(out.trail.sentences[1].attempts.len(), 2);
    assert_eq!(out.trail.sentences[1].prefix_digest, digest(S0));
}

#[test]
fn unknown_figure_gets_suggestions() {
    let dir = tempfile::tempdir().unwrap();
    let gw = model(vec![], "", truthful);
    match pipeline(dir.path()).generate_biography(&BiographyQuery::new("Hu F"), &graph(), &gw, None) {
        Err(PipelineError::NoSuchFigure { suggestions, .. }) => assert_eq!(suggestions[0], "Hu E"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn persistent_fabrication_is_dropped_after_g_regenerations() {
    let dir = tempfile::tempdir().unwrap();
    let gw = model(vec![S0, "He was fond of learning."], "He was fond of poetry.", truthful);
    let p = pipeline(dir.path());
    let out = p.generate_biography(&BiographyQuery::new("Hu E"), &graph(), &gw, None).unwrap();
    assert_eq!(out.biography.sentences.len(), 1);
    // the next slot sees the same prefix and repeats the draft: stop there
    assert_eq!(out.trail.sentences.len(), 3);
    assert_eq!(out.trail.sentences[2].outcome, Outcome::End);
    let rec = &out.trail.sentences[1];
    assert_eq!(rec.regenerations, p.config.solver.max_regenerations);
    assert!(matches!(rec.outcome, Outcome::Dropped { .. }));
    assert!(rec.calls.len() <= p.config.sentence_work_bound());
}

#[test]
fn regeneration_replaces_fabrication_and_keeps_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let gw = model(vec![S0, "He was fond of learning.", S2], S1, truthful);
    let out = pipeline(dir.path())
        .generate_biography(&BiographyQuery::new("Hu E"), &graph(), &gw, None)
        .unwrap();
    assert_eq!(out.biography.sentences[0].text, S0);
    assert_eq!(out.biography.sentences[1].text, S1);
    assert_eq!(out.trail.regenerations(), 1);
    let req = gw
        .transport()
        .transcript()
        .into_iter()
        .find(|r| r.tag == tags::REGENERATE)
        .unwrap();
    assert!(req.turns[0].content.contains("- He was fond of learning."));
    assert!(req.turns[0].content.contains(S0));
}

#[test]
fn partly_supported_sentence_is_rebuilt() {
    let dir = tempfile::tempdir().unwrap();
    let handler = |req: &ChatRequest| {
        let p = &req.turns[0].content;
        Some(MockReply::text(match req.tag.as_str() {
            tags::GENERATE if p.contains("(none)") => "Hu E was from Yuyao and fond of wine.".to_string(),
            tags::GENERATE => END_MARKER.to_string(),
            tags::REGENERATE => "Hu E was from Yuyao and fond of wine.".to_string(),
            tags::DECOMPOSE => "Hu E was from Yuyao.\nHu E was fond of wine.".to_string(),
            tags::VERIFY => truthful(section(p, "Atomic fact:\n")),
            _ => return None,
        }))
    };
    let gw = Gateway::new(MockTransport::new(MockScript::default()).with_handler(handler), RetryPolicy::immediate(0));
    let out = pipeline(dir.path())
        .generate_biography(&BiographyQuery::new("Hu E"), &graph(), &gw, None)
        .unwrap();
    assert_eq!(out.biography.text(), "Hu E was from Yuyao.");
    assert_eq!(
        out.trail.sentences[0].outcome,
        Outcome::Rebuilt {
            dropped_facts: vec!["Hu E was fond of wine.".into()]
        }
    );
}

#[test]
fn gateway_failure_keeps_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut script = MockScript::default();
    script.push(tags::GENERATE, S0);
    script.push(tags::DECOMPOSE, S0);
    script.push(tags::VERIFY, "SUPPORTED");
    script.push_reply(tags::GENERATE, MockReply::Fault { fault: crate::gateway::Fault::Unavailable });
    let gw = Gateway::new(MockTransport::new(script), RetryPolicy::immediate(0));
    match pipeline(dir.path()).generate_biography(&BiographyQuery::new("Hu E"), &graph(), &gw, None) {
        Err(PipelineError::GatewayFailure { partial, .. }) => {
            assert_eq!(partial.biography.sentences.len(), 1);
            assert!(partial.trail.failure.is_some());
            let out_dir = dir.path().join("run");
            partial.write(&out_dir).unwrap();
            assert!(read_trail(&out_dir).unwrap().failure.is_some());
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn conflict_goes_to_review_and_resolution_patches_the_biography() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let judge = |fact: &str| {
        if fact.contains("born") {
            "NOT_SUPPORTED,REF\nEVIDENCE hu#00000 third year of Chongzhen (1630)\nEVIDENCE hu#00001 born in 1631".into()
        } else {
            "SUPPORTED".into()
        }
    };
    let gw = model(vec![S0, S1], "", judge);
    let mut g = graph();
    let mut other = g.chunks["hu#00000"].clone();
    other.id = "hu#00001".into();
    other.text = "Hu E was born in 1631.".into();
    g.chunks.insert(other.id.clone(), other);
    g.nodes.get_mut("Hu E").unwrap().chunk_ids.insert("hu#00001".into());
    let g = KnowledgeGraph::from_parts(g.nodes, g.edges, g.chunks, g.orphan_chunks);
    let p = pipeline(dir.path());
    let out = p.generate_biography(&BiographyQuery::new("Hu E"), &g, &gw, Some(&run)).unwrap();
    out.write(&run).unwrap();
    let s = &out.biography.sentences[1];
    assert_eq!(s.status, SentenceStatus::Provisional);
    let ticket = s.ticket.clone().unwrap();
    let pending = p.remediator.review.pending().unwrap();
    assert_eq!(pending.len(), 1);
    assert_eq!(pending[0].options.len(), 2);

    p.remediator.review.resolve(&ticket, &Choice::Option("B".into())).unwrap();
    let patched = read_biography(&run).unwrap();
    assert_eq!(patched.sentences[1].text, "He was born in the third year of Chongzhen (1631).".replace("third", "fourth"));
    assert_eq!(patched.sentences[1].status, SentenceStatus::Accepted);
    assert_eq!(patched.sentences[1].resolved_by.as_deref(), Some(ticket.as_str()));
    assert_eq!(patched.sentences[0], out.biography.sentences[0]);
    assert!(fs::read_to_string(run.join(BIOGRAPHY_TXT)).unwrap().contains("(1631)"));
}

#[test]
fn always_failing_model_stays_within_the_work_bound() {
    let dir = tempfile::tempdir().unwrap();
    let gw = model(vec![S1_BAD; 3], "x", |_| "NOT_SUPPORTED,OTHER".into());
    let p = pipeline(dir.path());
    let out = p.generate_biography(&BiographyQuery::new("Hu E"), &graph(), &gw, None).unwrap();
    let bound = p.config.sentence_work_bound();
    for rec in &out.trail.sentences {
        assert!(rec.calls.len() <= bound, "{} > {bound}", rec.calls.len());
    }
    assert!(out.biography.sentences.iter().all(|s| s.status == SentenceStatus::Provisional));
}

#[test]
fn concurrent_queries_share_one_graph() {
    let dir = tempfile::tempdir().unwrap();
    let g = Arc::new(graph());
    let p = Arc::new(pipeline(dir.path()));
    let texts: Vec<String> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..2)
            .map(|_| {
                let (g, p) = (g.clone(), p.clone());
                s.spawn(move || {
                    let gw = model(vec![S0, S1], "", truthful);
                    p.generate_biography(&BiographyQuery::new("Hu E"), &g, &gw, None)
                        .unwrap()
                        .biography
                        .text()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(texts[0], texts[1]);
}
