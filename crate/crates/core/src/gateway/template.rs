//! Prompt templates with `{name}` placeholders.
//!
//! `{{` and `}}` produce literal braces, and a `{` that does not open a
//! well-formed placeholder is copied through unchanged, so regex quantifiers
//! such as `{2,4}` in a template body need no escaping. Substituted values are
//! never re-scanned.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("no prompt template named `{0}`")]
    MissingTemplate(String),
    #[error("template `{template}` uses `{{{name}}}` but no value was bound")]
    UnboundPlaceholder { template: String, name: String },
    #[error("cannot read prompt directory {path}: {message}")]
    Io { path: String, message: String },
}

const BUILTIN: &[(&str, &str)] = &[
    ("chunk", include_str!("../../prompts/chunk.txt")),
    ("extract_regex", include_str!("../../prompts/extract_regex.txt")),
    ("extract_direct", include_str!("../../prompts/extract_direct.txt")),
    ("generate", include_str!("../../prompts/generate.txt")),
    ("regenerate", include_str!("../../prompts/regenerate.txt")),
    ("decompose", include_str!("../../prompts/decompose.txt")),
    ("verify", include_str!("../../prompts/verify.txt")),
    ("solve_knowledge", include_str!("../../prompts/solve_knowledge.txt")),
    ("solve_other", include_str!("../../prompts/solve_other.txt")),
];

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateStore {
    templates: BTreeMap<String, String>,
}

impl Default for TemplateStore {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateStore {
    /// The templates shipped with the crate.
    pub fn builtin() -> Self {
        Self {
            templates: BUILTIN
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    pub fn empty() -> Self {
        Self {
            templates: BTreeMap::new(),
        }
    }

    /// Built-in templates overridden by every `<name>.txt` in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut store = Self::builtin();
        let io = |e: std::io::Error| TemplateError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        };
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        entries.sort();
        for path in entries {
            let name = path.file_stem().unwrap().to_string_lossy().into_owned();
            let body = std::fs::read_to_string(&path).map_err(io)?;
            store.templates.insert(name, body);
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: &str, body: &str) {
        self.templates.insert(name.to_string(), body.to_string());
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.templates.get(name).map(String::as_str)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn render(&self, name: &str, vars: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        let body = self
            .get(name)
            .ok_or_else(|| TemplateError::MissingTemplate(name.to_string()))?;
        render_prompt(body, vars).map_err(|e| match e {
            TemplateError::UnboundPlaceholder { name: ph, .. } => TemplateError::UnboundPlaceholder {
                template: name.to_string(),
                name: ph,
            },
            other => other,
        })
    }

    /// Convenience wrapper over [`TemplateStore::render`].
    pub fn render_with(&self, name: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        let map = vars
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        self.render(name, &map)
    }
}

fn is_ident(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Substitutes `{name}` placeholders in `template`.
pub fn render_prompt(template: &str, vars: &BTreeMap<String, String>) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if tail.starts_with("{{") {
            out.push('{');
            rest = &tail[2..];
        } else if tail.starts_with("}}") {
            out.push('}');
            rest = &tail[2..];
        } else if tail.starts_with('}') {
            out.push('}');
            rest = &tail[1..];
        } else {
            let body = &tail[1..];
            let ident_len = body.find(|c: char| !is_ident(c)).unwrap_or(body.len());
            let ident = &body[..ident_len];
            let starts_alpha = ident.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
            if starts_alpha && body[ident_len..].starts_with('}') {
                match vars.get(ident) {
                    Some(v) => out.push_str(v),
                    None => {
                        return Err(TemplateError::UnboundPlaceholder {
                            template: String::new(),
                            name: ident.to_string(),
                        })
                    }
                }
                rest = &body[ident_len + 1..];
            } else {
                out.push('{');
                rest = body;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}
