//! Error routing and correction.
//!
//! [`route`] maps a failed verdict to a solver. Date errors are fixed
//! deterministically with the era table, conflicting references go to a
//! human review queue, knowledge gaps are filled from an external source,
//! alias errors are reconciled against the graph node, and anything else is
//! re-prompted with the verdict. Facts missing from the references are
//! handled by regeneration in the pipeline.

pub mod era;
pub mod era_text;
pub mod lookup;
pub mod review;
mod solvers;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Chunk;
use crate::gateway::{LlmGateway, TemplateStore};
use crate::kg::EntityNode;
use crate::verifier::{Verdict, VerdictStatus, Verifier, ErrorKind};

pub use era::{EraDate, EraEntry, EraError, EraTable};
pub use era_text::{DateMention, DateParser, Script};
pub use lookup::{ExternalLookup, HttpLookup, KnowledgeSnippet, LookupError, SnapshotLookup};
pub use review::{Choice, ResolveOutcome, ReviewError, ReviewStore, Ticket, TicketKind, TicketOption, TicketState};
pub use solvers::{solve_alias_conflict, solve_era_conflict, Step};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Regenerator,
    Era,
    HumanReview,
    KnowledgeLookup,
    Alias,
    Generic,
}

#[derive(Debug, Error, PartialEq)]
pub enum RouteError {
    #[error("supported facts are not routed")]
    Supported,
}

/// Router: one solver per non-supported status.
pub fn route(verdict: &Verdict) -> Result<SolverKind, RouteError> {
    Ok(match verdict.status {
        VerdictStatus::Supported => return Err(RouteError::Supported),
        VerdictStatus::NotIncluded => SolverKind::Regenerator,
        VerdictStatus::NotSupported(kind) => match kind {
            ErrorKind::EraConflict => SolverKind::Era,
            ErrorKind::RefConflict => SolverKind::HumanReview,
            ErrorKind::KnowledgeLack => SolverKind::KnowledgeLookup,
            ErrorKind::AliasConflict => SolverKind::Alias,
            ErrorKind::Other => SolverKind::Generic,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action")]
pub enum Action {
    ReplaceSentence { text: String },
    Regenerate { from_sentence: usize },
    PendingHuman { ticket: String },
    Accept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    #[serde(flatten)]
    pub action: Action,
    pub rationale: String,
    pub solver: SolverKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escalated_from: Option<SolverKind>,
    /// Correction rounds spent (LLM rewrites plus re-verifications).
    pub rounds: u32,
    /// External snippet ids the accepted rewrite was checked against.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub external_refs: Vec<String>,
    /// Verdicts of the rewrite when the solver already re-verified it.
    #[serde(skip)]
    pub verified: Option<Vec<Verdict>>,
}

impl Resolution {
    pub fn new(action: Action, solver: SolverKind, rationale: impl Into<String>) -> Self {
        Self {
            action,
            rationale: rationale.into(),
            solver,
            escalated_from: None,
            rounds: 0,
            external_refs: Vec::new(),
            verified: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum RemediationError {
    #[error(transparent)]
    Route(#[from] RouteError),
    /// Human-gated fixes cannot be skipped, so this aborts the run.
    #[error("review store unavailable: {0}")]
    Review(#[from] ReviewError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Rewrite/re-verify rounds for the LLM-backed solvers.
    pub rounds: u32,
    /// Solver passes per sentence before it is sent to review.
    pub max_solver_passes: u32,
    /// Regeneration attempts per sentence before unsupported facts are dropped.
    pub max_regenerations: u32,
    pub lookup_limit: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rounds: 2,
            max_solver_passes: 2,
            max_regenerations: 3,
            lookup_limit: 3,
        }
    }
}

/// Everything a solver may look at for one failed fact.
#[derive(Debug, Clone, Copy)]
pub struct SolveContext<'a> {
    pub figure: &'a str,
    /// Run directory recorded in review tickets.
    pub run_dir: &'a str,
    pub sentence_index: usize,
    pub sentence: &'a str,
    pub verdict: &'a Verdict,
    pub refs: &'a [Chunk],
    pub subject: Option<&'a EntityNode>,
    /// Alias string to the relation that attests it (styled_name, nickname).
    pub alias_relations: &'a BTreeMap<String, String>,
}

pub struct Remediator {
    pub config: SolverConfig,
    pub dates: DateParser,
    pub verifier: Verifier,
    pub templates: TemplateStore,
    pub lookup: Option<Box<dyn ExternalLookup>>,
    pub review: ReviewStore,
}

impl Remediator {
    pub fn new(config: SolverConfig, table: EraTable, verifier: Verifier, review: ReviewStore) -> Self {
        let templates = verifier.templates.clone();
        Self {
            config,
            dates: DateParser::new(table),
            verifier,
            templates,
            lookup: None,
            review,
        }
    }

    pub fn with_lookup(mut self, lookup: Box<dyn ExternalLookup>) -> Self {
        self.lookup = Some(lookup);
        self
    }

    /// Routes the verdict and runs the chosen solver, escalating to the
    /// generic solver when a specialised one cannot act.
    pub fn solve(&self, ctx: &SolveContext, gateway: &dyn LlmGateway) -> Result<Resolution, RemediationError> {
        let kind = route(ctx.verdict)?;
        let step = match kind {
            SolverKind::Regenerator => {
                return Ok(Resolution::new(
                    Action::Regenerate {
                        from_sentence: ctx.sentence_index,
                    },
                    kind,
                    "fact not found in the references",
                ))
            }
            SolverKind::Era => solve_era_conflict(ctx, &self.dates),
            SolverKind::HumanReview => self.solve_ref_conflict(ctx)?,
            SolverKind::KnowledgeLookup => self.solve_knowledge_lack(ctx, gateway)?,
            SolverKind::Alias => solve_alias_conflict(ctx),
            SolverKind::Generic => return self.solve_other(ctx, gateway, None),
        };
        match step {
            Step::Done(r) => Ok(r),
            Step::Escalate(reason) => {
                log::info!("{kind:?} solver escalated sentence {}: {reason}", ctx.sentence_index);
                self.solve_other(ctx, gateway, Some((kind, reason)))
            }
        }
    }

    /// Opens a ticket for a sentence that used up its solver passes.
    pub fn open_unresolved(&self, ctx: &SolveContext, note: &str) -> Result<String, RemediationError> {
        Ok(self.review.open(Ticket {
            id: String::new(),
            kind: TicketKind::Unresolved,
            figure: ctx.figure.to_string(),
            run_dir: ctx.run_dir.to_string(),
            sentence_index: ctx.sentence_index,
            sentence: ctx.sentence.to_string(),
            fact: ctx.verdict.fact.text.clone(),
            options: Vec::new(),
            note: note.to_string(),
        })?)
    }
}
