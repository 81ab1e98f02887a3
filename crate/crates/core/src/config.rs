//! One TOML file holds every tunable of a run.
//!
//! Relative paths are resolved against the directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Chunker, Demonstration, WritingPattern};
use crate::extraction::{ExtractionRegex, Extractor, RegexBudget, RegexDemonstration, RegexOrigin};
use crate::gateway::{
    Gateway, HttpConfig, HttpTransport, LlmGateway, MockScript, MockTransport, RetryPolicy, StageParams, TemplateStore,
};
use crate::kg::GraphConfig;
use crate::pipeline::{Pipeline, PipelineConfig};
use crate::remediation::{EraTable, HttpLookup, Remediator, ReviewStore, SnapshotLookup, SolverConfig};
use crate::synth::{ENTRY_BOUNDARY, ENTRY_PATTERN, ENTRY_ROLES};
use crate::verifier::{Verifier, VerifierConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("{field}: path {path} does not exist")]
    MissingPath { field: String, path: String },
    #[error("{field} must be positive")]
    NotPositive { field: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GatewayMode {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewaySettings {
    pub mode: GatewayMode,
    /// Scripted replies for mock mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mock_script: Option<PathBuf>,
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the API key. The key itself never
    /// appears in the config.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    /// Sampling parameters per stage tag.
    pub stages: BTreeMap<String, StageParams>,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        let policy = RetryPolicy::default();
        Self {
            mode: GatewayMode::Mock,
            mock_script: None,
            endpoint: "http://localhost:8000/v1".into(),
            model: "default".into(),
            api_key_env: "CHRONICLE_API_KEY".into(),
            timeout_secs: 60,
            max_retries: policy.max_retries,
            backoff_ms: policy.backoff_ms,
            stages: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkingSettings {
    pub description: String,
    pub fallback_regex: String,
    pub retries: u32,
    pub demonstrations: Vec<Demonstration>,
}

/// Builds a demonstration from whole entries; the boundaries are the
/// entries' own character spans.
pub fn demonstration_from_entries(entries: &[&str]) -> Demonstration {
    let mut excerpt = String::new();
    let mut boundaries = Vec::new();
    for e in entries {
        let start = excerpt.chars().count();
        excerpt.push_str(e);
        boundaries.push((start, excerpt.chars().count()));
    }
    Demonstration { excerpt, boundaries }
}

impl Default for ChunkingSettings {
    fn default() -> Self {
        Self {
            description: "Every entry introduces one person. It begins with the name, \
                          followed by the styled name and the nickname, then the hometown \
                          and dated events."
                .into(),
            fallback_regex: ENTRY_BOUNDARY.into(),
            retries: 2,
            demonstrations: vec![
                demonstration_from_entries(&[
                    "胡鄂，字卓庵，号松江。余姚人。崇祯五年（1632）生。\n",
                    "陈瑚，字言夏，号确庵。太仓人。万历四十一年（1613）生。\n",
                ]),
                demonstration_from_entries(&["顾炎武，字宁人，号亭林。昆山人。万历四十一年（1613）生。\n"]),
                demonstration_from_entries(&[
                    "Hu E, styled Zhuo'an, nicknamed Songjiang. A native of Yuyao.\n",
                    "Chen Hu, styled Yanxia, nicknamed Que'an. A native of Taicang.\n",
                ]),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionSettings {
    pub head_role: String,
    pub retries: u32,
    pub budget: RegexBudget,
    pub demonstrations: Vec<RegexDemonstration>,
}

impl Default for ExtractionSettings {
    fn default() -> Self {
        Self {
            head_role: "name".into(),
            retries: 2,
            budget: RegexBudget::default(),
            demonstrations: vec![
                RegexDemonstration {
                    excerpt: "胡鄂，字卓庵，号松江。余姚人。".into(),
                    regex: ExtractionRegex::new(ENTRY_PATTERN, &ENTRY_ROLES, RegexOrigin::Handcrafted),
                },
                RegexDemonstration {
                    excerpt: "Hu E, styled Zhuo'an, nicknamed Songjiang.".into(),
                    regex: ExtractionRegex::new(
                        r"([^,]+), styled ([^,]+), nicknamed ([^,.]+)",
                        &["name", "styled_name", "nickname"],
                        RegexOrigin::Handcrafted,
                    ),
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSettings {
    pub max_sentences: usize,
    pub hops: usize,
    pub style: String,
    pub temperature: f64,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            max_sentences: PipelineConfig::default().max_sentences,
            hops: 1,
            style: "generate".into(),
            temperature: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct KnowledgeSettings {
    /// Local JSON snapshot of knowledge snippets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<PathBuf>,
    /// Search endpoint, used when no snapshot is set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub corpus_root: PathBuf,
    pub index_path: PathBuf,
    pub review_store: PathBuf,
    /// Parent directory for run directories.
    pub runs_dir: PathBuf,
    /// Era table file; the shipped table when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub era_table: Option<PathBuf>,
    /// Prompt overrides; the shipped prompts when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_dir: Option<PathBuf>,
    pub gateway: GatewaySettings,
    pub chunking: ChunkingSettings,
    pub extraction: ExtractionSettings,
    pub graph: GraphConfig,
    pub verifier: VerifierConfig,
    pub solver: SolverConfig,
    pub generation: GenerationSettings,
    pub knowledge: KnowledgeSettings,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus_root: "corpus".into(),
            index_path: "index.kg".into(),
            review_store: "review.jsonl".into(),
            runs_dir: "runs".into(),
            era_table: None,
            prompt_dir: None,
            gateway: GatewaySettings::default(),
            chunking: ChunkingSettings::default(),
            extraction: ExtractionSettings::default(),
            graph: GraphConfig::default(),
            verifier: VerifierConfig::default(),
            solver: SolverConfig::default(),
            generation: GenerationSettings::default(),
            knowledge: KnowledgeSettings::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

fn positive(field: &str, ok: bool) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::NotPositive { field: field.into() })
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: base_dir.display().to_string(),
            message: e.to_string(),
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let cfg = Self::from_toml(&text, base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let must_exist = |field: &str, p: &Path| -> Result<(), ConfigError> {
            let r = self.resolve(p);
            if r.exists() {
                Ok(())
            } else {
                Err(ConfigError::MissingPath {
                    field: field.into(),
                    path: r.display().to_string(),
                })
            }
        };
        must_exist("corpus_root", &self.corpus_root)?;
        if let Some(p) = &self.era_table {
            must_exist("era_table", p)?;
        }
        if let Some(p) = &self.prompt_dir {
            must_exist("prompt_dir", p)?;
        }
        if let Some(p) = &self.knowledge.snapshot {
            must_exist("knowledge.snapshot", p)?;
        }
        match self.gateway.mode {
            GatewayMode::Mock => match &self.gateway.mock_script {
                Some(p) => must_exist("gateway.mock_script", p)?,
                None => return Err(ConfigError::Invalid("gateway.mock_script is required in mock mode".into())),
            },
            GatewayMode::Http => {
                if self.gateway.endpoint.trim().is_empty() {
                    return Err(ConfigError::Invalid("gateway.endpoint is empty".into()));
                }
            }
        }
        if self.chunking.demonstrations.is_empty() {
            return Err(ConfigError::Invalid("chunking needs at least one demonstration".into()));
        }
        if self.extraction.demonstrations.is_empty() {
            return Err(ConfigError::Invalid("extraction needs at least one demonstration".into()));
        }
        positive("gateway.timeout_secs", self.gateway.timeout_secs > 0)?;
        positive("extraction.budget.max_pattern_len", self.extraction.budget.max_pattern_len > 0)?;
        positive("extraction.budget.size_limit", self.extraction.budget.size_limit > 0)?;
        positive("extraction.budget.max_matches", self.extraction.budget.max_matches > 0)?;
        positive("extraction.budget.time_budget_ms", self.extraction.budget.time_budget_ms > 0)?;
        positive("verifier.top_k", self.verifier.top_k > 0)?;
        positive("verifier.max_facts", self.verifier.max_facts > 0)?;
        positive("solver.rounds", self.solver.rounds > 0)?;
        positive("solver.max_solver_passes", self.solver.max_solver_passes > 0)?;
        positive("solver.lookup_limit", self.solver.lookup_limit > 0)?;
        positive("generation.max_sentences", self.generation.max_sentences > 0)?;
        Ok(())
    }

    pub fn templates(&self) -> Result<TemplateStore, ConfigError> {
        match &self.prompt_dir {
            Some(p) => TemplateStore::with_overrides(&self.resolve(p)).map_err(|e| ConfigError::Invalid(e.to_string())),
            None => Ok(TemplateStore::builtin()),
        }
    }

    pub fn era_table(&self) -> Result<EraTable, ConfigError> {
        match &self.era_table {
            Some(p) => EraTable::load(&self.resolve(p)).map_err(|e| ConfigError::Invalid(e.to_string())),
            None => Ok(EraTable::builtin()),
        }
    }

    pub fn chunker(&self) -> Result<Chunker, ConfigError> {
        let mut c = Chunker::new(
            WritingPattern {
                description: self.chunking.description.clone(),
                demonstrations: self.chunking.demonstrations.clone(),
            },
            self.chunking.fallback_regex.clone(),
        );
        c.retries = self.chunking.retries;
        c.templates = self.templates()?;
        Ok(c)
    }

    pub fn extractor(&self) -> Result<Extractor, ConfigError> {
        let mut x = Extractor::new(self.extraction.demonstrations.clone());
        x.templates = self.templates()?;
        x.budget = self.extraction.budget;
        x.retries = self.extraction.retries;
        x.head_role = self.extraction.head_role.clone();
        Ok(x)
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.gateway.max_retries,
            backoff_ms: self.gateway.backoff_ms,
        }
    }

    /// The configured gateway. `script_override` replaces the mock script
    /// path and forces mock mode.
    pub fn gateway(&self, script_override: Option<&Path>) -> Result<Box<dyn LlmGateway>, ConfigError> {
        let stages = self.gateway.stages.clone();
        if script_override.is_some() || self.gateway.mode == GatewayMode::Mock {
            let path = match script_override {
                Some(p) => p.to_path_buf(),
                None => self.resolve(
                    self.gateway
                        .mock_script
                        .as_deref()
                        .ok_or_else(|| ConfigError::Invalid("gateway.mock_script is required in mock mode".into()))?,
                ),
            };
            let script = MockScript::load(&path).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            return Ok(Box::new(
                Gateway::new(MockTransport::new(script), self.retry_policy()).with_stage_params(stages),
            ));
        }
        let http = HttpConfig {
            endpoint: self.gateway.endpoint.clone(),
            model: self.gateway.model.clone(),
            api_key: std::env::var(&self.gateway.api_key_env).ok(),
            timeout_secs: self.gateway.timeout_secs,
        };
        Ok(Box::new(
            Gateway::new(HttpTransport::new(http), self.retry_policy()).with_stage_params(stages),
        ))
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            max_sentences: self.generation.max_sentences,
            verifier: self.verifier.clone(),
            solver: self.solver.clone(),
            alias_relations: self.graph.alias_relations.clone(),
        }
    }

    pub fn review(&self) -> ReviewStore {
        ReviewStore::new(self.resolve(&self.review_store))
    }

    pub fn pipeline(&self) -> Result<Pipeline, ConfigError> {
        let templates = self.templates()?;
        let verifier = Verifier::new(self.verifier.clone(), templates);
        let mut remediator = Remediator::new(self.solver.clone(), self.era_table()?, verifier, self.review());
        if let Some(p) = &self.knowledge.snapshot {
            let lookup = SnapshotLookup::load(&self.resolve(p)).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            remediator = remediator.with_lookup(Box::new(lookup));
        } else if let Some(url) = &self.knowledge.url {
            remediator = remediator.with_lookup(Box::new(HttpLookup::new(url, self.gateway.timeout_secs)));
        }
        Ok(Pipeline::new(self.pipeline_config(), remediator))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::CharIndex;

    fn ready(dir: &Path) -> RunConfig {
        std::fs::create_dir_all(dir.join("corpus")).unwrap();
        std::fs::write(dir.join("script.json"), MockScript::default().to_json()).unwrap();
        RunConfig {
            gateway: GatewaySettings {
                mock_script: Some("script.json".into()),
                ..GatewaySettings::default()
            },
            base_dir: dir.to_path_buf(),
            ..RunConfig::default()
        }
    }

    #[test]
    fn default_demonstrations_slice_whole_entries() {
        let c = ChunkingSettings::default();
        assert_eq!(c.demonstrations.len(), 3);
        for d in &c.demonstrations {
            for &(s, e) in &d.boundaries {
                let entry = CharIndex::new(&d.excerpt).slice(&d.excerpt, s, e).unwrap();
                assert!(entry.ends_with('\n'));
                assert!(regex::Regex::new(ENTRY_BOUNDARY).unwrap().is_match(entry) || entry.contains(", styled"));
            }
        }
        let d = demonstration_from_entries(&["甲，字乙。\n", "丙丁，字戊。\n"]);
        assert_eq!(d.boundaries, vec![(0, 6), (6, 13)]);
    }

    #[test]
    fn toml_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ready(dir.path());
        cfg.era_table = Some("eras.tsv".into());
        cfg.gateway.stages.insert(
            "verify".into(),
            StageParams {
                temperature: Some(0.0),
                max_tokens: Some(256),
            },
        );
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text, dir.path()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn partial_file_takes_defaults() {
        let cfg = RunConfig::from_toml("corpus_root = \"c\"\n[solver]\nrounds = 5\n", Path::new("/x")).unwrap();
        assert_eq!(cfg.solver.rounds, 5);
        assert_eq!(cfg.solver.max_solver_passes, SolverConfig::default().max_solver_passes);
        assert_eq!(cfg.resolve(&cfg.corpus_root), PathBuf::from("/x/c"));
        assert_eq!(cfg.chunking.demonstrations.len(), 3);
    }

    #[test]
    fn validation_rejects_missing_paths_and_zero_budgets() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ready(dir.path());
        cfg.validate().unwrap();

        let missing = RunConfig {
            corpus_root: "nope".into(),
            ..cfg.clone()
        };
        assert!(matches!(missing.validate(), Err(ConfigError::MissingPath { field, .. }) if field == "corpus_root"));

        let mut zero = cfg.clone();
        zero.solver.rounds = 0;
        assert!(matches!(zero.validate(), Err(ConfigError::NotPositive { field }) if field == "solver.rounds"));

        let mut no_script = cfg.clone();
        no_script.gateway.mock_script = None;
        assert!(matches!(no_script.validate(), Err(ConfigError::Invalid(_))));

        let bad = RunConfig::from_toml("[solver]\nrounds = \"many\"\n", dir.path());
        assert!(matches!(bad, Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn load_resolves_against_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ready(dir.path());
        let path = dir.path().join("run.toml");
        std::fs::write(&path, cfg.to_toml()).unwrap();
        let loaded = RunConfig::load(&path).unwrap();
        assert_eq!(loaded.resolve(&loaded.corpus_root), dir.path().join("corpus"));
        assert!(loaded.gateway(None).is_ok());
        assert!(loaded.pipeline().is_ok());
        assert_eq!(loaded.chunker().unwrap().retries, 2);
    }
}
