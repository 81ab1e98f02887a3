//! Pending-review store: an append-only JSON Lines ledger of ticket openings
//! and resolutions. Resolving a ticket patches the stored biography.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TicketKind {
    /// References disagree with each other.
    RefConflict,
    /// A solver's rewrite never passed re-verification.
    Unverified,
    /// The sentence ran out of solver passes.
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketOption {
    pub label: String,
    pub chunk_id: String,
    pub snippet: String,
    /// Sentence to use when this option is chosen, if one could be derived.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replacement: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ticket {
    pub id: String,
    pub kind: TicketKind,
    pub figure: String,
    pub run_dir: String,
    pub sentence_index: usize,
    pub sentence: String,
    pub fact: String,
    pub options: Vec<TicketOption>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Entry {
    Open(Ticket),
    Resolve { id: String, choice: String, text: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolved {
    pub choice: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketState {
    pub ticket: Ticket,
    pub resolved: Option<Resolved>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Choice {
    /// One of the ticket's option labels (`A`, `B`, ...).
    Option(String),
    /// Free replacement text from the reviewer.
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResolveOutcome {
    Resolved { text: String },
    /// The ticket was already closed; nothing changed.
    AlreadyResolved { text: String },
}

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("review store {path}: {message}")]
    Io { path: String, message: String },
    #[error("review store line {line} is corrupt: {message}")]
    Corrupt { line: usize, message: String },
    #[error("no ticket `{0}`")]
    UnknownTicket(String),
    #[error("ticket {id} has no option `{label}`")]
    UnknownOption { id: String, label: String },
    #[error("option {label} of ticket {id} has no derived sentence; resolve with explicit text")]
    NoReplacement { id: String, label: String },
    #[error("cannot patch biography: {0}")]
    Patch(String),
}

/// Option labels: A, B, ... Z, AA, AB ...
pub fn option_label(i: usize) -> String {
    let mut n = i;
    let mut s = Vec::new();
    loop {
        s.push((b'A' + (n % 26) as u8) as char);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    s.iter().rev().collect()
}

#[derive(Debug)]
pub struct ReviewStore {
    path: PathBuf,
    lock: Mutex<()>,
}

impl ReviewStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            lock: Mutex::new(()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn io(&self, e: std::io::Error) -> ReviewError {
        ReviewError::Io {
            path: self.path.display().to_string(),
            message: e.to_string(),
        }
    }

    fn entries(&self) -> Result<Vec<Entry>, ReviewError> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(self.io(e)),
        };
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| ReviewError::Corrupt {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    fn append(&self, entry: &Entry) -> Result<(), ReviewError> {
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| self.io(e))?;
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| self.io(e))?;
        let line = serde_json::to_string(entry).expect("review entries always serialize");
        writeln!(f, "{line}").map_err(|e| self.io(e))?;
        f.sync_data().map_err(|e| self.io(e))
    }

    /// Opens a ticket; the id in `draft` is replaced by the next sequential id.
    pub fn open(&self, mut draft: Ticket) -> Result<String, ReviewError> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let opened = self
            .entries()?
            .iter()
            .filter(|e| matches!(e, Entry::Open(_)))
            .count();
        draft.id = format!("T{:06}", opened + 1);
        self.append(&Entry::Open(draft.clone()))?;
        Ok(draft.id)
    }

    pub fn list(&self) -> Result<Vec<TicketState>, ReviewError> {
        let mut states: Vec<TicketState> = Vec::new();
        for e in self.entries()? {
            match e {
                Entry::Open(ticket) => states.push(TicketState { ticket, resolved: None }),
                Entry::Resolve { id, choice, text } => {
                    if let Some(s) = states.iter_mut().find(|s| s.ticket.id == id) {
                        s.resolved.get_or_insert(Resolved { choice, text });
                    }
                }
            }
        }
        Ok(states)
    }

    pub fn pending(&self) -> Result<Vec<Ticket>, ReviewError> {
        Ok(self
            .list()?
            .into_iter()
            .filter(|s| s.resolved.is_none())
            .map(|s| s.ticket)
            .collect())
    }

    /// Closes a ticket and patches its biography. Resolving a closed ticket
    /// again changes nothing and logs a warning.
    pub fn resolve(&self, id: &str, choice: &Choice) -> Result<ResolveOutcome, ReviewError> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let state = self
            .list()?
            .into_iter()
            .find(|s| s.ticket.id == id)
            .ok_or_else(|| ReviewError::UnknownTicket(id.to_string()))?;
        if let Some(r) = state.resolved {
            log::warn!("ticket {id} was already resolved with {}; nothing to do", r.choice);
            return Ok(ResolveOutcome::AlreadyResolved { text: r.text });
        }
        let t = &state.ticket;
        let (label, text) = match choice {
            Choice::Text(s) => ("text".to_string(), s.trim().to_string()),
            Choice::Option(label) => {
                let opt = t
                    .options
                    .iter()
                    .find(|o| o.label.eq_ignore_ascii_case(label))
                    .ok_or_else(|| ReviewError::UnknownOption {
                        id: id.to_string(),
                        label: label.clone(),
                    })?;
                let text = opt.replacement.clone().ok_or_else(|| ReviewError::NoReplacement {
                    id: id.to_string(),
                    label: opt.label.clone(),
                })?;
                (opt.label.clone(), text)
            }
        };
        if !t.run_dir.is_empty() {
            crate::pipeline::patch_sentence(Path::new(&t.run_dir), t.sentence_index, &text, id)
                .map_err(ReviewError::Patch)?;
        }
        self.append(&Entry::Resolve {
            id: id.to_string(),
            choice: label,
            text: text.clone(),
        })?;
        Ok(ResolveOutcome::Resolved { text })
    }
}
