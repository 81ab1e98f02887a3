//! Online generation: retrieve references for a figure, generate the
//! biography one sentence at a time, verify each sentence before the next
//! is requested, and repair failures through the remediation router.
//!
//! Accepted sentences form a frozen prefix. Nothing after acceptance
//! rewrites them except a reviewer resolving a ticket ([`patch_sentence`]).

mod trail;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use trail::{
    digest, join_sentences, stage_timings, Attempt, AuditTrail, BioSentence, Biography, DraftOrigin, Outcome,
    RetrievalRecord, RoutedFix, RunTimings, SentenceRecord, SentenceStatus, SentenceTimings, StageRow,
};

use crate::corpus::Chunk;
use crate::gateway::{strip_code_fence, tags, ChatRequest, GatewayError, LlmGateway, RecordingGateway, TemplateStore};
use crate::kg::{KgError, KnowledgeGraph};
use crate::remediation::{route, Action, RemediationError, Remediator, SolveContext, SolverConfig};
use crate::verifier::{render_references, split_sentences, Verdict, VerdictStatus, VerifierConfig};

pub const END_MARKER: &str = "<END>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiographyQuery {
    pub figure_name: String,
    pub hops: usize,
    /// Prompt template used for first drafts.
    pub style: String,
    pub temperature: f64,
}

impl BiographyQuery {
    pub fn new(figure_name: impl Into<String>) -> Self {
        Self {
            figure_name: figure_name.into(),
            hops: 1,
            style: "generate".into(),
            temperature: 0.0,
        }
    }

    pub fn hops(mut self, hops: usize) -> Self {
        self.hops = hops;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub max_sentences: usize,
    pub verifier: VerifierConfig,
    pub solver: SolverConfig,
    /// Edge relations whose tails are aliases of the head.
    pub alias_relations: BTreeSet<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_sentences: 40,
            verifier: VerifierConfig::default(),
            solver: SolverConfig::default(),
            alias_relations: crate::kg::GraphConfig::default().alias_relations,
        }
    }
}

impl PipelineConfig {
    /// Logical chat calls one verification of a sentence may make.
    pub fn verification_bound(&self) -> usize {
        let f = self.verifier.max_facts.max(1);
        1 + f * (1 + self.verifier.malformed_retries as usize)
    }

    /// Upper bound on logical chat calls spent on one sentence slot:
    /// drafts, verifications of every draft and rewrite, and solver rounds
    /// (a specialised solver may escalate to the generic one, hence 2R).
    pub fn sentence_work_bound(&self) -> usize {
        let v = self.verification_bound();
        let g = self.solver.max_regenerations as usize;
        let p = self.solver.max_solver_passes as usize;
        let r = self.solver.rounds as usize;
        (1 + g) + (1 + p + g) * v + p * 2 * r * (1 + v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub biography: Biography,
    pub trail: AuditTrail,
    pub timings: RunTimings,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no figure named `{name}`")]
    NoSuchFigure { name: String, suggestions: Vec<String> },
    #[error(transparent)]
    Graph(#[from] KgError),
    /// Generation could not continue; `partial` holds what was produced.
    #[error("gateway failure: {message}")]
    GatewayFailure { message: String, partial: Box<RunOutput> },
    #[error(transparent)]
    Remediation(#[from] RemediationError),
    #[error("run directory {path}: {message}")]
    Io { path: String, message: String },
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub templates: TemplateStore,
    pub remediator: Remediator,
}

/// First sentence of a generation reply; `None` ends the biography.
fn first_sentence(reply: &str) -> Option<String> {
    let t = strip_code_fence(reply).trim();
    if t.is_empty() || t.starts_with(END_MARKER) {
        return None;
    }
    let s = split_sentences(t).into_iter().next()?.trim().to_string();
    (!s.is_empty()).then_some(s)
}

fn all_supported(verdicts: &[Verdict]) -> bool {
    verdicts.iter().all(|v| v.status == VerdictStatus::Supported)
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}

/// State of one sentence slot while it is being worked on.
struct Slot {
    record: SentenceRecord,
    timings: SentenceTimings,
}

enum Emit {
    Sentence(BioSentence),
    Nothing,
    Stop,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, remediator: Remediator) -> Self {
        Self {
            templates: remediator.templates.clone(),
            config,
            remediator,
        }
    }

    fn draft(
        &self,
        template: &str,
        query: &BiographyQuery,
        refs_text: &str,
        prefix: &str,
        avoid: &str,
        gateway: &dyn LlmGateway,
    ) -> Result<Option<String>, GatewayError> {
        let prompt = self
            .templates
            .render_with(
                template,
                &[
                    ("figure", query.figure_name.as_str()),
                    ("references", refs_text),
                    ("prefix", if prefix.is_empty() { "(none)" } else { prefix }),
                    ("avoid", avoid),
                ],
            )
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let tag = if template == "regenerate" { tags::REGENERATE } else { tags::GENERATE };
        let mut req = ChatRequest::new(tag, "You write faithful historical biographies.", prompt);
        req.temperature = query.temperature;
        Ok(first_sentence(&gateway.chat(&req)?.content))
    }

    /// Generates, verifies and repairs a biography of `query.figure_name`.
    /// `run_dir` is recorded in review tickets so that resolving one can
    /// patch the stored biography.
    pub fn generate_biography(
        &self,
        query: &BiographyQuery,
        graph: &KnowledgeGraph,
        gateway: &dyn LlmGateway,
        run_dir: Option<&Path>,
    ) -> Result<RunOutput, PipelineError> {
        let started = Instant::now();
        let t = Instant::now();
        let retrieved = graph.retrieve(&query.figure_name, query.hops)?;
        let Some(node_id) = retrieved.matched_node.clone() else {
            return Err(PipelineError::NoSuchFigure {
                name: query.figure_name.clone(),
                suggestions: graph.suggest(&query.figure_name, 5),
            });
        };
        let mut timings = RunTimings {
            retrieval_ms: ms(t),
            ..RunTimings::default()
        };
        let refs: Vec<Chunk> = retrieved.chunks.clone();
        let refs_text = render_references(&refs);
        let subject = graph.node(&node_id);
        let alias_relations: BTreeMap<String, String> = graph
            .edges
            .iter()
            .filter(|e| e.head == node_id && self.config.alias_relations.contains(&e.relation))
            .map(|e| (e.tail_surface.clone(), e.relation.clone()))
            .collect();
        let run_dir_text = run_dir.map(|p| p.display().to_string()).unwrap_or_default();

        let mut biography = Biography {
            figure: node_id.clone(),
            sentences: Vec::new(),
            references: retrieved.chunk_ids(),
        };
        let mut trail = AuditTrail {
            retrieval: RetrievalRecord {
                query: query.figure_name.clone(),
                matched_node: node_id,
                match_kind: retrieved.match_kind,
                hops: query.hops,
                neighbor_nodes: retrieved.neighbor_nodes.clone(),
                chunk_ids: retrieved.chunk_ids(),
            },
            sentences: Vec::new(),
            failure: None,
        };

        let mut dropped: BTreeSet<String> = BTreeSet::new();
        for slot_no in 0..self.config.max_sentences {
            let prefix = join_sentences(biography.sentences.iter().map(|s| s.text.as_str()));
            let recorder = RecordingGateway::new(gateway);
            let mut slot = Slot {
                record: SentenceRecord {
                    slot: slot_no,
                    index: None,
                    prefix_digest: digest(&prefix),
                    attempts: Vec::new(),
                    outcome: Outcome::End,
                    text: None,
                    regenerations: 0,
                    solver_passes: 0,
                    calls: Vec::new(),
                    notes: Vec::new(),
                },
                timings: SentenceTimings::default(),
            };
            let ctx = SlotCtx {
                query,
                refs: &refs,
                refs_text: &refs_text,
                prefix: &prefix,
                index: biography.sentences.len(),
                subject,
                alias_relations: &alias_relations,
                run_dir: &run_dir_text,
                dropped: &dropped,
            };
            let result = self.run_slot(&ctx, &mut slot, &recorder);
            slot.record.calls = recorder.calls().into_iter().map(|c| c.tag).collect();
            timings.sentences.push(slot.timings);
            match result {
                Ok(Emit::Sentence(s)) => {
                    slot.record.index = Some(biography.sentences.len());
                    slot.record.text = Some(s.text.clone());
                    biography.sentences.push(s);
                    trail.sentences.push(slot.record);
                }
                Ok(Emit::Nothing) => {
                    dropped.extend(slot.record.attempts.iter().map(|a| a.text.clone()));
                    trail.sentences.push(slot.record);
                }
                Ok(Emit::Stop) => {
                    trail.sentences.push(slot.record);
                    break;
                }
                Err(SlotError::Gateway(e)) => {
                    let message = e.to_string();
                    slot.record.notes.push(format!("gateway failure: {message}"));
                    trail.sentences.push(slot.record);
                    trail.failure = Some(message.clone());
                    self.add_external_refs(&mut biography, &trail);
                    timings.total_ms = ms(started);
                    return Err(PipelineError::GatewayFailure {
                        message,
                        partial: Box::new(RunOutput {
                            biography,
                            trail,
                            timings,
                        }),
                    });
                }
                Err(SlotError::Remediation(e)) => return Err(e.into()),
            }
        }
        self.add_external_refs(&mut biography, &trail);
        timings.total_ms = ms(started);
        Ok(RunOutput {
            biography,
            trail,
            timings,
        })
    }

    fn add_external_refs(&self, biography: &mut Biography, trail: &AuditTrail) {
        for fix in trail.fixes() {
            for id in &fix.resolution.external_refs {
                if !biography.references.contains(id) {
                    biography.references.push(id.clone());
                }
            }
        }
    }

    fn verify(&self, slot: &mut Slot, text: &str, index: usize, refs: &[Chunk], gw: &dyn LlmGateway) -> Vec<Verdict> {
        let t = Instant::now();
        let v = self.remediator.verifier.verify_sentence(text, index, refs, gw);
        slot.timings.verification_ms += ms(t);
        v
    }

    /// Works one sentence slot to an outcome. Per slot there are at most
    /// `max_solver_passes` solver invocations and `max_regenerations`
    /// redrafts, so the loop always terminates.
    fn run_slot(&self, c: &SlotCtx, slot: &mut Slot, gw: &dyn LlmGateway) -> Result<Emit, SlotError> {
        let cfg = &self.config.solver;
        let t = Instant::now();
        let first = self.draft(&c.query.style, c.query, c.refs_text, c.prefix, "", gw);
        slot.timings.generation_ms += ms(t);
        let Some(mut text) = first.map_err(SlotError::Gateway)? else {
            slot.record.outcome = Outcome::End;
            return Ok(Emit::Stop);
        };
        if c.dropped.contains(&text) {
            slot.record.notes.push("draft repeats a dropped sentence; generation stopped".into());
            return Ok(Emit::Stop);
        }
        let mut verdicts = self.verify(slot, &text, c.index, c.refs, gw);
        slot.record.attempts.push(Attempt {
            origin: DraftOrigin::Generated,
            text: text.clone(),
            verdicts: verdicts.clone(),
            fixes: Vec::new(),
        });
        let mut avoid: Vec<String> = Vec::new();

        loop {
            if all_supported(&verdicts) {
                slot.record.outcome = Outcome::Accepted;
                return Ok(Emit::Sentence(BioSentence {
                    text,
                    status: SentenceStatus::Accepted,
                    ticket: None,
                    resolved_by: None,
                }));
            }
            let failing = verdicts
                .iter()
                .position(|v| matches!(v.status, VerdictStatus::NotSupported(_)))
                .or_else(|| verdicts.iter().position(|v| v.status != VerdictStatus::Supported))
                .expect("some verdict fails");
            let bad = verdicts[failing].clone();
            let solve_ctx = SolveContext {
                figure: &c.query.figure_name,
                run_dir: c.run_dir,
                sentence_index: c.index,
                sentence: &text,
                verdict: &bad,
                refs: c.refs,
                subject: c.subject,
                alias_relations: c.alias_relations,
            };
            let kind = route(&bad).expect("failing verdicts always route");

            if bad.status == VerdictStatus::NotIncluded {
                if slot.record.regenerations >= cfg.max_regenerations {
                    return Ok(self.rebuild(slot, &verdicts));
                }
                let resolution = self.remediator.solve(&solve_ctx, gw)?;
                self.push_fix(slot, &bad, kind, resolution);
                slot.record.regenerations += 1;
                for v in verdicts.iter().filter(|v| v.status == VerdictStatus::NotIncluded) {
                    if !avoid.contains(&v.fact.text) {
                        avoid.push(v.fact.text.clone());
                    }
                }
                let avoid_text = avoid.iter().map(|a| format!("- {a}")).collect::<Vec<_>>().join("\n");
                let t = Instant::now();
                let redraft = self.draft("regenerate", c.query, c.refs_text, c.prefix, &avoid_text, gw);
                slot.timings.generation_ms += ms(t);
                let Some(new_text) = redraft.map_err(SlotError::Gateway)? else {
                    slot.record.outcome = Outcome::Dropped {
                        reason: "regeneration found nothing supported to say".into(),
                    };
                    return Ok(Emit::Nothing);
                };
                text = new_text;
                verdicts = self.verify(slot, &text, c.index, c.refs, gw);
                slot.record.attempts.push(Attempt {
                    origin: DraftOrigin::Regenerated,
                    text: text.clone(),
                    verdicts: verdicts.clone(),
                    fixes: Vec::new(),
                });
                continue;
            }

            if slot.record.solver_passes >= cfg.max_solver_passes {
                let ticket = self
                    .remediator
                    .open_unresolved(&solve_ctx, "solver passes exhausted")?;
                slot.record.notes.push(format!("solver passes exhausted; sent to review as {ticket}"));
                return Ok(self.provisional(slot, text, ticket));
            }
            slot.record.solver_passes += 1;
            let t = Instant::now();
            let resolution = self.remediator.solve(&solve_ctx, gw);
            slot.timings.remediation_ms += ms(t);
            let resolution = resolution?;
            let action = resolution.action.clone();
            let checked = resolution.verified.clone();
            self.push_fix(slot, &bad, kind, resolution);
            match action {
                Action::Accept => {
                    // false alarm: the solver found the fact consistent
                    verdicts[failing].status = VerdictStatus::Supported;
                    slot.record
                        .notes
                        .push(format!("{kind:?} solver accepted `{}` as consistent", bad.fact.text));
                }
                Action::ReplaceSentence { text: new_text } => {
                    text = new_text;
                    verdicts = match checked {
                        Some(v) => v,
                        None => self.verify(slot, &text, c.index, c.refs, gw),
                    };
                    slot.record.attempts.push(Attempt {
                        origin: DraftOrigin::SolverRewrite,
                        text: text.clone(),
                        verdicts: verdicts.clone(),
                        fixes: Vec::new(),
                    });
                }
                Action::PendingHuman { ticket } => return Ok(self.provisional(slot, text, ticket)),
                Action::Regenerate { .. } => unreachable!("not-supported facts never route to regeneration"),
            }
        }
    }

    fn push_fix(&self, slot: &mut Slot, bad: &Verdict, route: crate::remediation::SolverKind, mut resolution: crate::remediation::Resolution) {
        // the rewrite's verdicts live on the next attempt, not in the fix
        resolution.verified = None;
        let fix = RoutedFix {
            fact: bad.fact.text.clone(),
            status: bad.status.wire(),
            route,
            resolution,
        };
        slot.record.attempts.last_mut().expect("a draft exists").fixes.push(fix);
    }

    fn provisional(&self, slot: &mut Slot, text: String, ticket: String) -> Emit {
        slot.record.outcome = Outcome::Provisional { ticket: ticket.clone() };
        Emit::Sentence(BioSentence {
            text,
            status: SentenceStatus::Provisional,
            ticket: Some(ticket),
            resolved_by: None,
        })
    }

    /// Regeneration ran out: keep the supported facts, drop the rest.
    fn rebuild(&self, slot: &mut Slot, verdicts: &[Verdict]) -> Emit {
        let kept: Vec<&str> = verdicts
            .iter()
            .filter(|v| v.status == VerdictStatus::Supported)
            .map(|v| v.fact.text.as_str())
            .collect();
        let dropped: Vec<String> = verdicts
            .iter()
            .filter(|v| v.status != VerdictStatus::Supported)
            .map(|v| v.fact.text.clone())
            .collect();
        slot.record
            .notes
            .push(format!("regeneration budget spent; dropped {} unsupported fact(s)", dropped.len()));
        if kept.is_empty() {
            slot.record.outcome = Outcome::Dropped {
                reason: "no supported fact left after regeneration".into(),
            };
            return Emit::Nothing;
        }
        let text = join_sentences(kept);
        slot.record.outcome = Outcome::Rebuilt { dropped_facts: dropped };
        Emit::Sentence(BioSentence {
            text,
            status: SentenceStatus::Accepted,
            ticket: None,
            resolved_by: None,
        })
    }
}

struct SlotCtx<'a> {
    query: &'a BiographyQuery,
    refs: &'a [Chunk],
    refs_text: &'a str,
    prefix: &'a str,
    index: usize,
    subject: Option<&'a crate::kg::EntityNode>,
    alias_relations: &'a BTreeMap<String, String>,
    run_dir: &'a str,
    /// Drafts of earlier slots that were dropped.
    dropped: &'a BTreeSet<String>,
}

enum SlotError {
    Gateway(GatewayError),
    Remediation(RemediationError),
}

impl From<RemediationError> for SlotError {
    fn from(e: RemediationError) -> Self {
        SlotError::Remediation(e)
    }
}

pub const BIOGRAPHY_JSON: &str = "biography.json";
pub const BIOGRAPHY_TXT: &str = "biography.txt";
pub const TRAIL_JSONL: &str = "trail.jsonl";
pub const TIMINGS_JSON: &str = "timings.json";

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn biography_json(b: &Biography) -> String {
    let mut s = serde_json::to_string_pretty(b).expect("biography serializes");
    s.push('\n');
    s
}

impl RunOutput {
    /// Writes biography.json, biography.txt, trail.jsonl and timings.json.
    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_file(&dir.join(BIOGRAPHY_JSON), &biography_json(&self.biography))?;
        write_file(&dir.join(BIOGRAPHY_TXT), &format!("{}\n", self.biography.text()))?;
        write_file(&dir.join(TRAIL_JSONL), &self.trail.to_jsonl())?;
        let report = serde_json::json!({
            "stages": stage_timings(&self.timings),
            "total_ms": self.timings.total_ms,
            "sentences": self.timings.sentences,
        });
        write_file(&dir.join(TIMINGS_JSON), &format!("{report:#}\n"))
    }
}

pub fn read_biography(dir: &Path) -> Result<Biography, PipelineError> {
    let path = dir.join(BIOGRAPHY_JSON);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(&path, e))
}

pub fn read_trail(dir: &Path) -> Result<AuditTrail, PipelineError> {
    let path = dir.join(TRAIL_JSONL);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    AuditTrail::from_jsonl(&text).map_err(|e| io_err(&path, e))
}

/// Replaces sentence `index` of a stored biography with a reviewer's choice
/// and marks it accepted. The trail is left as generated.
pub fn patch_sentence(run_dir: &Path, index: usize, text: &str, ticket: &str) -> Result<(), String> {
    let mut bio = read_biography(run_dir).map_err(|e| e.to_string())?;
    let n = bio.sentences.len();
    let s = bio
        .sentences
        .get_mut(index)
        .ok_or_else(|| format!("biography has {n} sentences, no index {index}"))?;
    s.text = text.to_string();
    s.status = SentenceStatus::Accepted;
    s.ticket = None;
    s.resolved_by = Some(ticket.to_string());
    write_file(&run_dir.join(BIOGRAPHY_JSON), &biography_json(&bio)).map_err(|e| e.to_string())?;
    write_file(&run_dir.join(BIOGRAPHY_TXT), &format!("{}\n", bio.text())).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests;
