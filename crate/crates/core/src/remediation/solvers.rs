use std::collections::BTreeSet;

use regex::Regex;

use super::era_text::{DateMention, DateParser};
use super::lookup::KnowledgeSnippet;
use super::review::{option_label, Ticket, TicketKind, TicketOption};
use super::{Action, RemediationError, Remediator, Resolution, SolveContext, SolverKind};
use crate::corpus::Chunk;
use crate::gateway::{strip_code_fence, tags, ChatRequest, LlmGateway};
use crate::text::{is_mostly_cjk, normalize_name, token_set, tokenize};
use crate::verifier::{jaccard, split_sentences, Verdict, VerdictStatus};

/// Result of a specialised solver.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Done(Resolution),
    /// The solver cannot act; the generic solver takes over.
    Escalate(String),
}

fn all_supported(verdicts: &[Verdict]) -> bool {
    verdicts.iter().all(|v| v.status == VerdictStatus::Supported)
}

/// Picks the evidence date whose surrounding sentence shares most words
/// with the fact (dates themselves excluded); ties keep the first.
fn pick_evidence_date(fact: &str, snippets: &[String], dates: &DateParser) -> Option<(i32, Option<String>)> {
    let context: BTreeSet<String> = tokenize(fact)
        .into_iter()
        .filter(|t| !t.chars().all(|c| c.is_ascii_digit()))
        .collect();
    let mut best: Option<(f64, i32, Option<String>)> = None;
    for snippet in snippets {
        let mut offset = 0;
        for sentence in split_sentences(snippet) {
            let end = offset + sentence.len();
            for m in dates.find(snippet) {
                if m.span.0 < offset || m.span.0 >= end {
                    continue;
                }
                let Some(year) = m.year(dates.table()) else { continue };
                let score = jaccard(&context, &token_set(&sentence));
                if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                    best = Some((score, year, m.era.as_ref().map(|e| e.era_name.clone())));
                }
            }
            offset = end;
        }
    }
    best.map(|(_, y, e)| (y, e))
}

/// Date correction: converts the fact's date and the evidence's date
/// independently and compares the Gregorian years.
pub fn solve_era_conflict(ctx: &SolveContext, dates: &DateParser) -> Step {
    let table = dates.table();
    let fact_year = dates
        .find(&ctx.verdict.fact.text)
        .iter()
        .find_map(|m| m.year(table))
        .or_else(|| dates.find(ctx.sentence).iter().find_map(|m| m.year(table)));
    let Some(fact_year) = fact_year else {
        return Step::Escalate("no date found in the fact".into());
    };
    let mut snippets: Vec<String> = ctx.verdict.evidence.iter().map(|e| e.snippet.clone()).collect();
    let mut picked = pick_evidence_date(&ctx.verdict.fact.text, &snippets, dates);
    if picked.is_none() {
        let cited: BTreeSet<&str> = ctx.verdict.evidence.iter().map(|e| e.chunk_id.as_str()).collect();
        snippets = ctx
            .refs
            .iter()
            .filter(|c| cited.contains(c.id.as_str()))
            .map(|c| c.text.clone())
            .collect();
        picked = pick_evidence_date(&ctx.verdict.fact.text, &snippets, dates);
    }
    let Some((ref_year, ref_era)) = picked else {
        return Step::Escalate("no date found in the evidence".into());
    };
    if ref_year == fact_year {
        return Step::Done(Resolution::new(
            Action::Accept,
            SolverKind::Era,
            format!("fact and evidence both resolve to {fact_year}; verifier false alarm"),
        ));
    }
    let mentions = dates.find(ctx.sentence);
    let target: Option<&DateMention> = mentions
        .iter()
        .filter(|m| m.year(table) == Some(fact_year))
        .max_by_key(|m| m.era.is_some());
    let Some(target) = target else {
        return Step::Escalate(format!("sentence does not state {fact_year}"));
    };
    let mut text = dates.rewrite(ctx.sentence, target, ref_year, ref_era.as_deref());
    // stray restatements of the wrong year, e.g. "(that is, 1632)"
    for _ in 0..8 {
        let stray = dates
            .find(&text)
            .into_iter()
            .find(|m| m.era.is_none() && m.stated_year == Some(fact_year));
        match stray {
            Some(m) => text = dates.rewrite(&text, &m, ref_year, None),
            None => break,
        }
    }
    if text == ctx.sentence {
        return Step::Escalate("rewrite left the sentence unchanged".into());
    }
    Step::Done(Resolution::new(
        Action::ReplaceSentence { text },
        SolverKind::Era,
        format!("sentence year {fact_year} corrected to {ref_year} from the references"),
    ))
}

fn latin_claims() -> Regex {
    Regex::new(r"(?:,\s*)?\b(?:also styled|styled|courtesy name|nicknamed|art name|also known as)\s+([A-Z][\w'’\-]*(?:\s+[A-Z][\w'’\-]*)*)")
        .expect("claim pattern compiles")
}

fn cjk_claims() -> Regex {
    Regex::new(r"[，,]?(?:字|号|號)(\p{Han}{1,4}?)(?:[，。；,;]|$)").expect("claim pattern compiles")
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '’'
}

/// First standalone occurrence of `needle` outside `skip` spans.
fn find_standalone(hay: &str, needle: &str, skip: &[(usize, usize)]) -> Option<usize> {
    let cjk = needle.chars().any(crate::text::is_cjk);
    hay.match_indices(needle).map(|(i, _)| i).find(|&i| {
        let end = i + needle.len();
        if skip.iter().any(|&(s, e)| i < e && end > s) {
            return false;
        }
        cjk || (!hay[..i].chars().next_back().is_some_and(is_word_char)
            && !hay[end..].chars().next().is_some_and(is_word_char))
    })
}

/// Alias reconciliation against the subject's graph node: unattested alias
/// claims are removed; a bare attested alias is expanded to
/// "NAME, styled ALIAS".
pub fn solve_alias_conflict(ctx: &SolveContext) -> Step {
    let Some(node) = ctx.subject else {
        return Step::Escalate("subject has no graph node".into());
    };
    let attested: BTreeSet<String> = node.names().map(normalize_name).collect();
    let sentence = ctx.sentence;
    let mut claims: Vec<(usize, usize, String)> = Vec::new();
    for caps in latin_claims().captures_iter(sentence) {
        let m = caps.get(0).unwrap();
        claims.push((m.start(), m.end(), caps[1].to_string()));
    }
    for caps in cjk_claims().captures_iter(sentence) {
        let m = caps.get(0).unwrap();
        let name = caps.get(1).unwrap();
        claims.push((m.start(), name.end(), name.as_str().to_string()));
    }
    claims.sort();

    let unattested: Vec<&(usize, usize, String)> = claims
        .iter()
        .filter(|(_, _, n)| !attested.contains(&normalize_name(n)))
        .collect();
    if !unattested.is_empty() {
        let mut text = String::new();
        let mut pos = 0;
        for (s, e, _) in &unattested {
            text.push_str(&sentence[pos..*s]);
            pos = *e;
        }
        text.push_str(&sentence[pos..]);
        let dropped: Vec<&str> = unattested.iter().map(|(_, _, n)| n.as_str()).collect();
        return Step::Done(Resolution::new(
            Action::ReplaceSentence { text },
            SolverKind::Alias,
            format!("removed unattested alias(es) {dropped:?}"),
        ));
    }

    let canonical = &node.canonical_name;
    let spans: Vec<(usize, usize)> = claims.iter().map(|(s, e, _)| (*s, *e)).collect();
    if find_standalone(sentence, canonical, &[]).is_some() {
        return Step::Done(Resolution::new(
            Action::Accept,
            SolverKind::Alias,
            "sentence already uses the canonical name with attested aliases",
        ));
    }
    for alias in &node.aliases {
        let Some(at) = find_standalone(sentence, alias, &spans) else { continue };
        let relation = ctx.alias_relations.get(alias).map(String::as_str).unwrap_or("styled_name");
        let cjk = is_mostly_cjk(sentence);
        let phrase = match (cjk, relation) {
            (true, "nickname") => format!("{canonical}，号{alias}"),
            (true, _) => format!("{canonical}，字{alias}"),
            (false, "nickname") => format!("{canonical}, nicknamed {alias}"),
            (false, _) => format!("{canonical}, styled {alias}"),
        };
        let text = format!("{}{}{}", &sentence[..at], phrase, &sentence[at + alias.len()..]);
        return Step::Done(Resolution::new(
            Action::ReplaceSentence { text },
            SolverKind::Alias,
            format!("presented alias {alias} with the canonical name {canonical}"),
        ));
    }
    Step::Escalate("no name of the subject found in the sentence".into())
}

fn first_line(reply: &str) -> String {
    strip_code_fence(reply)
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("")
        .trim_matches(|c| c == '"' || c == '“' || c == '”')
        .trim()
        .to_string()
}

fn evidence_text(verdict: &Verdict) -> String {
    if verdict.evidence.is_empty() {
        return "(none)".into();
    }
    verdict
        .evidence
        .iter()
        .map(|e| format!("[{}] {}", e.chunk_id, e.snippet))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Remediator {
    fn ticket(&self, ctx: &SolveContext, kind: TicketKind, options: Vec<TicketOption>, note: &str) -> Result<String, RemediationError> {
        Ok(self.review.open(Ticket {
            id: String::new(),
            kind,
            figure: ctx.figure.to_string(),
            run_dir: ctx.run_dir.to_string(),
            sentence_index: ctx.sentence_index,
            sentence: ctx.sentence.to_string(),
            fact: ctx.verdict.fact.text.clone(),
            options,
            note: note.to_string(),
        })?)
    }

    /// Sentence rewritten to the year stated in `snippet`, when both have one.
    fn option_sentence(&self, ctx: &SolveContext, snippet: &str) -> Option<String> {
        let table = self.dates.table();
        let fact_year = self
            .dates
            .find(&ctx.verdict.fact.text)
            .iter()
            .find_map(|m| m.year(table))?;
        let (year, era) = pick_evidence_date(&ctx.verdict.fact.text, &[snippet.to_string()], &self.dates)?;
        let mentions = self.dates.find(ctx.sentence);
        let m = mentions.iter().find(|m| m.year(table) == Some(fact_year))?;
        Some(self.dates.rewrite(ctx.sentence, m, year, era.as_deref()))
    }

    /// Conflicting references: always a human decision.
    pub(super) fn solve_ref_conflict(&self, ctx: &SolveContext) -> Result<Step, RemediationError> {
        let mut seen = BTreeSet::new();
        let distinct: Vec<_> = ctx
            .verdict
            .evidence
            .iter()
            .filter(|e| seen.insert(e.chunk_id.clone()))
            .collect();
        if distinct.len() < 2 {
            return Ok(Step::Escalate(format!(
                "reference conflict cites {} chunk(s); two are needed",
                distinct.len()
            )));
        }
        let options = distinct
            .iter()
            .enumerate()
            .map(|(i, e)| TicketOption {
                label: option_label(i),
                chunk_id: e.chunk_id.clone(),
                snippet: e.snippet.clone(),
                replacement: self.option_sentence(ctx, &e.snippet),
            })
            .collect();
        let id = self.ticket(ctx, TicketKind::RefConflict, options, "references disagree")?;
        Ok(Step::Done(Resolution::new(
            Action::PendingHuman { ticket: id.clone() },
            SolverKind::HumanReview,
            format!("conflicting references sent to review as {id}"),
        )))
    }

    /// Rewrite with external background knowledge; the rewrite is accepted
    /// only if the whole sentence re-verifies.
    pub(super) fn solve_knowledge_lack(&self, ctx: &SolveContext, gateway: &dyn LlmGateway) -> Result<Step, RemediationError> {
        let Some(lookup) = &self.lookup else {
            return Ok(Step::Escalate("no knowledge source configured".into()));
        };
        let snippets: Vec<KnowledgeSnippet> = match lookup.search(&ctx.verdict.fact.text, self.config.lookup_limit) {
            Ok(s) if !s.is_empty() => s,
            Ok(_) => return Ok(Step::Escalate("knowledge lookup returned nothing".into())),
            Err(e) => return Ok(Step::Escalate(format!("knowledge lookup failed: {e}"))),
        };
        let knowledge = snippets
            .iter()
            .map(|s| format!("[ext:{}] {} {}", s.id, s.title, s.text).trim().to_string())
            .collect::<Vec<_>>()
            .join("\n");
        let mut refs: Vec<Chunk> = ctx.refs.to_vec();
        refs.extend(snippets.iter().map(KnowledgeSnippet::as_chunk));
        let ext_ids: Vec<String> = snippets.iter().map(|s| format!("ext:{}", s.id)).collect();
        let mut attempts = Vec::new();
        for round in 1..=self.config.rounds {
            let prompt = self
                .templates
                .render_with(
                    "solve_knowledge",
                    &[("sentence", ctx.sentence), ("fact", &ctx.verdict.fact.text), ("knowledge", &knowledge)],
                )
                .unwrap_or_default();
            let req = ChatRequest::new(tags::SOLVE_KNOWLEDGE, "You correct historical biographies.", prompt);
            let rewritten = match gateway.chat(&req) {
                Ok(r) => first_line(&r.content),
                Err(e) => return Ok(Step::Escalate(format!("gateway failure during correction: {e}"))),
            };
            if rewritten.is_empty() {
                continue;
            }
            let verdicts = self.verifier.verify_sentence(&rewritten, ctx.sentence_index, &refs, gateway);
            if all_supported(&verdicts) {
                let mut r = Resolution::new(
                    Action::ReplaceSentence { text: rewritten },
                    SolverKind::KnowledgeLookup,
                    format!("rewritten with background knowledge, verified in round {round}"),
                );
                r.rounds = round;
                r.external_refs = ext_ids;
                r.verified = Some(verdicts);
                return Ok(Step::Done(r));
            }
            attempts.push(rewritten);
        }
        let id = self.ticket(ctx, TicketKind::Unverified, rewrite_options(attempts), "knowledge rewrites failed verification")?;
        let mut r = Resolution::new(
            Action::PendingHuman { ticket: id },
            SolverKind::KnowledgeLookup,
            "no rewrite passed re-verification",
        );
        r.rounds = self.config.rounds;
        Ok(Step::Done(r))
    }

    /// Generic correction: re-prompt with the verdict and evidence for at
    /// most `rounds` rounds, then hand the sentence to a reviewer.
    pub(super) fn solve_other(
        &self,
        ctx: &SolveContext,
        gateway: &dyn LlmGateway,
        escalated: Option<(SolverKind, String)>,
    ) -> Result<Resolution, RemediationError> {
        let escalated_from = escalated.as_ref().map(|(k, _)| *k);
        let prefix = escalated
            .as_ref()
            .map(|(k, why)| format!("escalated from {k:?} ({why}); "))
            .unwrap_or_default();
        let finish = |mut r: Resolution| {
            r.escalated_from = escalated_from;
            r.rationale = format!("{prefix}{}", r.rationale);
            r
        };
        let mut fact = ctx.verdict.fact.text.clone();
        let mut status = ctx.verdict.status.wire();
        let mut evidence = evidence_text(ctx.verdict);
        let mut attempts = Vec::new();
        for round in 1..=self.config.rounds {
            let prompt = self
                .templates
                .render_with(
                    "solve_other",
                    &[
                        ("sentence", ctx.sentence),
                        ("fact", &fact),
                        ("status", &status),
                        ("evidence", &evidence),
                    ],
                )
                .unwrap_or_default();
            let req = ChatRequest::new(tags::SOLVE_OTHER, "You correct historical biographies.", prompt);
            let rewritten = match gateway.chat(&req) {
                Ok(r) => first_line(&r.content),
                Err(e) => {
                    let id = self.ticket(ctx, TicketKind::Unverified, rewrite_options(attempts), &format!("gateway failure: {e}"))?;
                    let mut r = Resolution::new(
                        Action::PendingHuman { ticket: id },
                        SolverKind::Generic,
                        format!("gateway failure during correction: {e}"),
                    );
                    r.rounds = round;
                    return Ok(finish(r));
                }
            };
            if rewritten.is_empty() {
                continue;
            }
            let verdicts = self.verifier.verify_sentence(&rewritten, ctx.sentence_index, ctx.refs, gateway);
            if all_supported(&verdicts) {
                let mut r = Resolution::new(
                    Action::ReplaceSentence { text: rewritten },
                    SolverKind::Generic,
                    format!("rewrite verified in round {round}"),
                );
                r.rounds = round;
                r.verified = Some(verdicts);
                return Ok(finish(r));
            }
            if let Some(bad) = verdicts.iter().find(|v| v.status != VerdictStatus::Supported) {
                fact = bad.fact.text.clone();
                status = bad.status.wire();
                evidence = evidence_text(bad);
            }
            attempts.push(rewritten);
        }
        let id = self.ticket(ctx, TicketKind::Unverified, rewrite_options(attempts), "rewrites failed verification")?;
        let mut r = Resolution::new(
            Action::PendingHuman { ticket: id },
            SolverKind::Generic,
            format!("no rewrite passed re-verification in {} round(s)", self.config.rounds),
        );
        r.rounds = self.config.rounds;
        Ok(finish(r))
    }
}

fn rewrite_options(attempts: Vec<String>) -> Vec<TicketOption> {
    attempts
        .into_iter()
        .enumerate()
        .map(|(i, text)| TicketOption {
            label: option_label(i),
            chunk_id: String::new(),
            snippet: text.clone(),
            replacement: Some(text),
        })
        .collect()
}


#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::corpus::ChunkKind;
    use crate::gateway::{Gateway, MockReply, MockScript};
    use crate::kg::{EntityNode, NodeKind};
    use crate::remediation::{EraTable, ReviewStore, SnapshotLookup, SolverConfig};
    use crate::verifier::{AtomicFact, ErrorKind, Evidence, Verifier};

    const BIRTH: &str = "Hu E, styled Zhuo'an. Born on the thirteenth day of the second month in the third year of Chongzhen (1630) of the Ming dynasty, a native of Yuyao County. In the eighteenth year of Shunzhi (1661), appointed as the judicial officer of Songjiang Prefecture in Jiangsu Province.";

    fn chunk(id: &str, text: &str) -> Chunk {
        Chunk {
            id: id.into(),
            doc_id: "d".into(),
            start: 0,
            end: text.chars().count(),
            text: text.into(),
            kind: ChunkKind::Biographical,
        }
    }

    fn verdict(fact: &str, kind: ErrorKind, evidence: &[(&str, &str)]) -> Verdict {
        Verdict {
            fact: AtomicFact {
                text: fact.into(),
                sentence_index: 1,
            },
            status: VerdictStatus::NotSupported(kind),
            evidence: evidence
                .iter()
                .map(|(c, s)| Evidence {
                    chunk_id: c.to_string(),
                    snippet: s.to_string(),
                })
                .collect(),
            jaccard_scores: BTreeMap::new(),
            low_confidence: false,
            raw: None,
        }
    }

    fn hu_e() -> EntityNode {
        EntityNode {
            id: "Hu E".into(),
            canonical_name: "Hu E".into(),
            aliases: ["Zhuo'an".to_string()].into_iter().collect(),
            chunk_ids: BTreeSet::new(),
            kind: NodeKind::Person,
        }
    }

    struct Fixture {
        _dir: tempfile::TempDir,
        remediator: Remediator,
        refs: Vec<Chunk>,
        aliases: BTreeMap<String, String>,
    }

    fn fixture() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let review = ReviewStore::new(dir.path().join("reviews.jsonl"));
        Fixture {
            remediator: Remediator::new(SolverConfig::default(), EraTable::builtin(), Verifier::default(), review),
            _dir: dir,
            refs: vec![chunk("a#00000", BIRTH)],
            aliases: [("Zhuo'an".to_string(), "styled_name".to_string())].into_iter().collect(),
        }
    }

    fn ctx<'a>(f: &'a Fixture, sentence: &'a str, v: &'a Verdict, node: Option<&'a EntityNode>) -> SolveContext<'a> {
        SolveContext {
            figure: "Hu E",
            run_dir: "",
            sentence_index: 1,
            sentence,
            verdict: v,
            refs: &f.refs,
            subject: node,
            alias_relations: &f.aliases,
        }
    }

    #[test]
    fn era_conflict_replaces_1632_with_1630() {
        let f = fixture();
        let s = "He was born on the thirteenth day of the second month in the fifth year of Chongzhen in the Ming dynasty (1632).";
        let v = verdict(
            "Hu E was born in the fifth year of Chongzhen (1632).",
            ErrorKind::EraConflict,
            &[("a#00000", "in the third year of Chongzhen (1630) of the Ming dynasty")],
        );
        let Step::Done(r) = solve_era_conflict(&ctx(&f, s, &v, None), &f.remediator.dates) else {
            panic!("expected a resolution")
        };
        assert_eq!(
            r.action,
            Action::ReplaceSentence {
                text: "He was born on the thirteenth day of the second month in the third year of Chongzhen in the Ming dynasty (1630).".into()
            }
        );
    }

    #[test]
    fn era_evidence_chosen_by_context() {
        let f = fixture();
        let s = "He was born in 1632.";
        let v = verdict("He was born in 1632.", ErrorKind::EraConflict, &[("a#00000", "")]);
        let Step::Done(r) = solve_era_conflict(&ctx(&f, s, &v, None), &f.remediator.dates) else { panic!() };
        assert_eq!(r.action, Action::ReplaceSentence { text: "He was born in 1630.".into() });
    }

    #[test]
    fn era_agreement_is_accept() {
        let f = fixture();
        let s = "In the eighteenth year of Shunzhi (1661), he was appointed.";
        let v = verdict(s, ErrorKind::EraConflict, &[("a#00000", "In the eighteenth year of Shunzhi (1661), appointed")]);
        let Step::Done(r) = solve_era_conflict(&ctx(&f, s, &v, None), &f.remediator.dates) else { panic!() };
        assert_eq!(r.action, Action::Accept);
    }

    #[test]
    fn era_without_dates_escalates() {
        let f = fixture();
        let v = verdict("He was learned.", ErrorKind::EraConflict, &[("a#00000", "learned man")]);
        assert!(matches!(
            solve_era_conflict(&ctx(&f, "He was learned.", &v, None), &f.remediator.dates),
            Step::Escalate(_)
        ));
    }

    #[test]
    fn alias_cases() {
        let f = fixture();
        let node = hu_e();
        let v = verdict("x", ErrorKind::AliasConflict, &[]);
        let s = "Zhuo'an was a native of Yuyao County.";
        let Step::Done(r) = solve_alias_conflict(&ctx(&f, s, &v, Some(&node))) else { panic!() };
        assert_eq!(
            r.action,
            Action::ReplaceSentence {
                text: "Hu E, styled Zhuo'an was a native of Yuyao County.".into()
            }
        );
        let s = "Hu E, styled Boyu, was a native of Yuyao County.";
        let Step::Done(r) = solve_alias_conflict(&ctx(&f, s, &v, Some(&node))) else { panic!() };
        assert_eq!(r.action, Action::ReplaceSentence { text: "Hu E, was a native of Yuyao County.".into() });
        let s = "Hu E, styled Zhuo'an, was a native of Yuyao County.";
        let Step::Done(r) = solve_alias_conflict(&ctx(&f, s, &v, Some(&node))) else { panic!() };
        assert_eq!(r.action, Action::Accept);
        assert!(matches!(solve_alias_conflict(&ctx(&f, s, &v, None)), Step::Escalate(_)));
    }

    #[test]
    fn alias_cjk() {
        let f = fixture();
        let node = EntityNode {
            id: "胡鄂".into(),
            canonical_name: "胡鄂".into(),
            aliases: ["卓庵".to_string()].into_iter().collect(),
            chunk_ids: BTreeSet::new(),
            kind: NodeKind::Person,
        };
        let aliases: BTreeMap<String, String> = [("卓庵".to_string(), "styled_name".to_string())].into();
        let v = verdict("x", ErrorKind::AliasConflict, &[]);
        let mut c = ctx(&f, "卓庵，余姚人。", &v, Some(&node));
        c.alias_relations = &aliases;
        let Step::Done(r) = solve_alias_conflict(&c) else { panic!() };
        assert_eq!(r.action, Action::ReplaceSentence { text: "胡鄂，字卓庵，余姚人。".into() });
        let mut c = ctx(&f, "胡鄂，字伯玉，余姚人。", &v, Some(&node));
        c.alias_relations = &aliases;
        let Step::Done(r) = solve_alias_conflict(&c) else { panic!() };
        assert_eq!(r.action, Action::ReplaceSentence { text: "胡鄂，余姚人。".into() });
    }

    #[test]
    fn ref_conflict_opens_ticket_with_both_snippets() {
        let f = fixture();
        let s = "He was born in 1630.";
        let v = verdict(
            "He was born in 1630.",
            ErrorKind::RefConflict,
            &[("a#00000", "born in 1630"), ("b#00000", "born in 1631")],
        );
        let gw = Gateway::mock(MockScript::default());
        let r = f.remediator.solve(&ctx(&f, s, &v, None), &gw).unwrap();
        assert_eq!(r.action, Action::PendingHuman { ticket: "T000001".into() });
        let t = &f.remediator.review.pending().unwrap()[0];
        assert_eq!(t.options.len(), 2);
        assert_eq!(t.options[1].replacement.as_deref(), Some("He was born in 1631."));
    }

    #[test]
    fn single_chunk_ref_conflict_escalates_to_generic() {
        let f = fixture();
        let s = "He was born in 1630.";
        let v = verdict(s, ErrorKind::RefConflict, &[("a#00000", "born in 1630")]);
        let mut script = MockScript::default();
        script.push(tags::SOLVE_OTHER, "Hu E was born in 1630.");
        script.push(tags::DECOMPOSE, "Hu E was born in 1630.");
        script.push(tags::VERIFY, "SUPPORTED\nEVIDENCE a#00000 (1630)");
        let gw = Gateway::mock(script);
        let r = f.remediator.solve(&ctx(&f, s, &v, None), &gw).unwrap();
        assert_eq!(r.solver, SolverKind::Generic);
        assert_eq!(r.escalated_from, Some(SolverKind::HumanReview));
        assert_eq!(r.action, Action::ReplaceSentence { text: "Hu E was born in 1630.".into() });
    }

    #[test]
    fn knowledge_lack_rewrite_is_reverified() {
        let f = fixture();
        let remediator = Remediator {
            lookup: Some(Box::new(SnapshotLookup::new(vec![KnowledgeSnippet {
                id: "songjiang".into(),
                title: "Songjiang Prefecture".into(),
                text: "Under the Qing, Songjiang Prefecture belonged to Jiangsu Province.".into(),
            }]))),
            ..f.remediator
        };
        let s = "E was appointed as the judicial officer of Songjiang Prefecture in Jiangnan.";
        let v = verdict(s, ErrorKind::KnowledgeLack, &[]);
        let mut script = MockScript::default();
        script.push(tags::SOLVE_KNOWLEDGE, "E was appointed as the judicial officer of Songjiang Prefecture in Jiangsu Province.");
        script.push(tags::DECOMPOSE, "E was appointed judicial officer of Songjiang Prefecture in Jiangsu Province.");
        script.push(tags::VERIFY, "SUPPORTED\nEVIDENCE ext:songjiang Songjiang Prefecture belonged to Jiangsu Province.");
        let gw = Gateway::mock(script);
        let c = SolveContext {
            figure: "Hu E",
            run_dir: "",
            sentence_index: 1,
            sentence: s,
            verdict: &v,
            refs: &f.refs,
            subject: None,
            alias_relations: &f.aliases,
        };
        let r = remediator.solve(&c, &gw).unwrap();
        assert!(matches!(r.action, Action::ReplaceSentence { .. }));
        assert_eq!(r.external_refs, vec!["ext:songjiang"]);
        assert!(r.verified.unwrap().iter().all(|v| v.status == VerdictStatus::Supported));
    }

    #[test]
    fn knowledge_lack_without_hits_escalates() {
        let f = fixture();
        let remediator = Remediator {
            lookup: Some(Box::new(SnapshotLookup::default())),
            ..f.remediator
        };
        let v = verdict("x", ErrorKind::KnowledgeLack, &[]);
        let c = SolveContext {
            figure: "Hu E",
            run_dir: "",
            sentence_index: 1,
            sentence: "x",
            verdict: &v,
            refs: &f.refs,
            subject: None,
            alias_relations: &f.aliases,
        };
        assert!(matches!(remediator.solve_knowledge_lack(&c, &Gateway::mock(MockScript::default())).unwrap(), Step::Escalate(_)));
    }

    #[test]
    fn generic_gives_up_after_rounds_and_on_gateway_failure() {
        let f = fixture();
        let v = verdict("x", ErrorKind::Other, &[]);
        let mut script = MockScript::default();
        script.push(tags::SOLVE_OTHER, "still wrong").repeat(tags::SOLVE_OTHER);
        script.push(tags::DECOMPOSE, "still wrong").repeat(tags::DECOMPOSE);
        script.push(tags::VERIFY, "NOT_SUPPORTED,OTHER").repeat(tags::VERIFY);
        let gw = Gateway::mock(script);
        let r = f.remediator.solve(&ctx(&f, "x", &v, None), &gw).unwrap();
        assert!(matches!(r.action, Action::PendingHuman { .. }));
        assert_eq!(gw.transport().transcript().iter().filter(|q| q.tag == tags::SOLVE_OTHER).count(), 2);

        let gw = Gateway::mock(MockScript::ordered_replies(vec![MockReply::Fault {
            fault: crate::gateway::Fault::Status(500)
        }; 3]));
        let r = f.remediator.solve(&ctx(&f, "x", &v, None), &gw).unwrap();
        assert!(matches!(r.action, Action::PendingHuman { .. }));
    }

    #[test]
    fn supported_verdict_is_a_routing_error() {
        let f = fixture();
        let mut v = verdict("x", ErrorKind::Other, &[]);
        v.status = VerdictStatus::Supported;
        let gw = Gateway::mock(MockScript::default());
        assert!(matches!(
            f.remediator.solve(&ctx(&f, "x", &v, None), &gw),
            Err(RemediationError::Route(_))
        ));
    }
}
