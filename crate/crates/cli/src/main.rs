//! `chronicle`: index a corpus, retrieve, generate verified biographies,
//! review tickets, evaluate, and produce synthetic corpora.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage, 3 configuration,
//! 4 unknown figure, 5 gateway failure, 6 review store or ticket.
//! Failures print one JSON object on standard error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use chronicle_core::config::{GatewayMode, RunConfig};
use chronicle_core::corpus::{Chunk, ChunkKind};
use chronicle_core::eval::{
    avg_atomic_fact_error, hallucination_rate, load_gold, load_labels, retrieval_metrics, rouge_text,
};
use chronicle_core::extraction::{validate_regex, ExtractionRegex, RegexDemonstration, RegexOrigin, Validation};
use chronicle_core::indexer::build_and_save;
use chronicle_core::kg::{load_graph, NodeKind, FORMAT_NAME, FORMAT_VERSION};
use chronicle_core::pipeline::{read_trail, BiographyQuery, PipelineError, TRAIL_JSONL};
use chronicle_core::remediation::{Choice, ResolveOutcome, ReviewError};
use chronicle_core::synth::{SynthConfig, SynthCorpus};

#[derive(Parser)]
#[command(name = "chronicle", version, about = "Knowledge-graph indexed biography generation")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, short, global = true, env = "CHRONICLE_CONFIG")]
    config: Option<PathBuf>,
    /// Log to standard error (repeat for more detail).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or inspect the knowledge-graph index.
    #[command(subcommand)]
    Index(IndexCmd),
    /// Show the chunks retrieved for a name.
    Retrieve {
        name: String,
        #[arg(long)]
        hops: Option<usize>,
    },
    /// Generate a verified biography into a run directory.
    Generate(GenerateArgs),
    /// List or resolve pending review tickets.
    #[command(subcommand)]
    Review(ReviewCmd),
    /// Score outputs.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Write a seeded synthetic corpus with gold files and a ready config.
    Synth(SynthArgs),
    /// Add a regex to the extraction demonstrations of the config file.
    PromoteRegex(PromoteArgs),
}

#[derive(Subcommand)]
enum IndexCmd {
    /// Chunk, extract, build and save the index; prints the build report.
    Build {
        /// Scripted gateway replies, overriding the configured gateway.
        #[arg(long)]
        mock: Option<PathBuf>,
    },
    /// Summarize a saved index.
    Inspect {
        /// Index file; defaults to the configured one.
        #[arg(long)]
        index: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GenerateArgs {
    /// Figure name, alias or node id.
    name: String,
    /// Neighbor expansion depth; defaults to the configured value.
    #[arg(long)]
    hops: Option<usize>,
    /// Run directory; defaults to `<runs_dir>/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scripted gateway replies, overriding the configured gateway.
    #[arg(long)]
    mock: Option<PathBuf>,
    /// Prompt template for first drafts.
    #[arg(long)]
    style: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Subcommand)]
enum ReviewCmd {
    /// Print pending tickets as JSON lines.
    List {
        /// Include resolved tickets.
        #[arg(long)]
        all: bool,
    },
    /// Pick an option or supply a sentence; the run is patched in place.
    Resolve {
        ticket: String,
        /// Option label (A, B, ...).
        #[arg(long, conflicts_with = "text", required_unless_present = "text")]
        choose: Option<String>,
        /// Replacement sentence written by the reviewer.
        #[arg(long)]
        text: Option<String>,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// ROUGE-1, ROUGE-2 and ROUGE-L of a candidate against a reference.
    Rouge {
        #[arg(long)]
        cand: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Hallucination rate, atomic-fact error and retrieval scores.
    Report {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// A run directory or a directory of run directories.
        #[arg(long)]
        results: PathBuf,
    },
    /// Retrieval scores of the configured index against a gold file.
    Retrieval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value_t = 0)]
        hops: usize,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    figures: usize,
    #[arg(long, default_value_t = 5)]
    distractors: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    per_document: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PromoteArgs {
    #[arg(long)]
    pattern: String,
    /// Comma-separated relation per capture group.
    #[arg(long, value_delimiter = ',')]
    roles: Vec<String>,
    /// Text the pattern must match.
    #[arg(long)]
    excerpt: String,
}

struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
    extra: Value,
}

impl Failure {
    fn new(code: u8, kind: &'static str, message: impl ToString) -> Self {
        Self {
            code,
            kind,
            message: message.to_string(),
            extra: Value::Null,
        }
    }

    fn other(message: impl ToString) -> Self {
        Self::new(1, "error", message)
    }

    fn config(message: impl ToString) -> Self {
        Self::new(3, "config", message)
    }
}

type Outcome = Result<(), Failure>;

fn print_out(text: &str) {
    use std::io::Write;
    // a closed pipe (`| head`) is not an error worth reporting
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn print_json(v: &impl serde::Serialize) {
    print_out(&serde_json::to_string_pretty(v).expect("output serializes"));
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::config("no config file: pass --config or set CHRONICLE_CONFIG"))?;
    RunConfig::load(path).map_err(Failure::config)
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::other(format!("{}: {e}", path.display())))
}

fn cmd_index(cli: &Cli, cmd: &IndexCmd) -> Outcome {
    let cfg = load_config(cli)?;
    match cmd {
        IndexCmd::Build { mock } => {
            let gw = cfg.gateway(mock.as_deref()).map_err(Failure::config)?;
            let (_, report) = build_and_save(
                &cfg.resolve(&cfg.corpus_root),
                &cfg.resolve(&cfg.index_path),
                &cfg.chunker().map_err(Failure::config)?,
                &cfg.extractor().map_err(Failure::config)?,
                &cfg.graph,
                gw.as_ref(),
            )
            .map_err(Failure::other)?;
            print_json(&report);
        }
        IndexCmd::Inspect { index } => {
            let path = index.clone().unwrap_or_else(|| cfg.resolve(&cfg.index_path));
            let g = load_graph(&path).map_err(Failure::other)?;
            let persons = g.nodes.values().filter(|n| n.kind == NodeKind::Person).count();
            let relations: BTreeMap<&str, usize> = g.edges.iter().fold(BTreeMap::new(), |mut m, e| {
                *m.entry(e.relation.as_str()).or_default() += 1;
                m
            });
            print_json(&json!({
                "format": FORMAT_NAME,
                "version": FORMAT_VERSION,
                "chunks": g.chunks.len(),
                "nodes": g.nodes.len(),
                "person_nodes": persons,
                "edges": g.edges.len(),
                "relations": relations,
                "orphan_chunks": g.orphan_chunks.len(),
                "integrity": g.check_integrity().err().unwrap_or_else(|| "ok".into()),
            }));
        }
    }
    Ok(())
}

fn cmd_retrieve(cli: &Cli, name: &str, hops: Option<usize>) -> Outcome {
    let cfg = load_config(cli)?;
    let g = load_graph(&cfg.resolve(&cfg.index_path)).map_err(Failure::other)?;
    let r = g
        .retrieve(name, hops.unwrap_or(cfg.generation.hops))
        .map_err(|e| Failure::new(4, "ambiguous_name", e))?;
    print_json(&r);
    Ok(())
}

fn slug(name: &str) -> String {
    let s: String = name
        .trim()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .collect();
    if s.is_empty() {
        "run".into()
    } else {
        s
    }
}

fn cmd_generate(cli: &Cli, a: &GenerateArgs) -> Outcome {
    let cfg = load_config(cli)?;
    let graph = load_graph(&cfg.resolve(&cfg.index_path)).map_err(Failure::other)?;
    let gw = cfg.gateway(a.mock.as_deref()).map_err(Failure::config)?;
    let pipeline = cfg.pipeline().map_err(Failure::config)?;
    let run_dir = a
        .out
        .clone()
        .unwrap_or_else(|| cfg.resolve(&cfg.runs_dir).join(slug(&a.name)));
    let mut query = BiographyQuery::new(a.name.clone()).hops(a.hops.unwrap_or(cfg.generation.hops));
    query.style = a.style.clone().unwrap_or_else(|| cfg.generation.style.clone());
    query.temperature = a.temperature.unwrap_or(cfg.generation.temperature);

    let capture = |dir: &Path| -> Outcome {
        std::fs::create_dir_all(dir).map_err(|e| Failure::other(format!("{}: {e}", dir.display())))?;
        std::fs::write(dir.join("config.toml"), cfg.to_toml()).map_err(|e| Failure::other(e.to_string()))
    };
    match pipeline.generate_biography(&query, &graph, gw.as_ref(), Some(&run_dir)) {
        Ok(out) => {
            out.write(&run_dir).map_err(Failure::other)?;
            capture(&run_dir)?;
            print_json(&json!({
                "run_dir": run_dir.display().to_string(),
                "sentences": out.biography.sentences.len(),
                "provisional": out.biography.provisional().count(),
                "references": out.biography.references,
                "text": out.biography.text(),
            }));
            Ok(())
        }
        Err(PipelineError::NoSuchFigure { name, suggestions }) => Err(Failure {
            extra: json!({ "suggestions": suggestions }),
            ..Failure::new(4, "no_such_figure", format!("no figure named `{name}` in the index"))
        }),
        Err(PipelineError::GatewayFailure { message, partial }) => {
            partial.write(&run_dir).map_err(Failure::other)?;
            capture(&run_dir)?;
            Err(Failure {
                extra: json!({ "run_dir": run_dir.display().to_string(), "partial_sentences": partial.biography.sentences.len() }),
                ..Failure::new(5, "gateway", message)
            })
        }
        Err(PipelineError::Remediation(e)) => Err(Failure::new(6, "review", e)),
        Err(e) => Err(Failure::other(e)),
    }
}

fn review_failure(e: ReviewError) -> Failure {
    Failure::new(6, "review", e)
}

fn cmd_review(cli: &Cli, cmd: &ReviewCmd) -> Outcome {
    let cfg = load_config(cli)?;
    let store = cfg.review();
    match cmd {
        ReviewCmd::List { all } => {
            let tickets = store.list().map_err(review_failure)?;
            let shown: Vec<_> = tickets.iter().filter(|t| *all || t.resolved.is_none()).collect();
            if shown.is_empty() {
                print_out("no pending tickets");
            } else {
                print_json(&shown);
            }
        }
        ReviewCmd::Resolve { ticket, choose, text } => {
            let choice = match (choose, text) {
                (Some(label), _) => Choice::Option(label.clone()),
                (None, Some(t)) => Choice::Text(t.clone()),
                (None, None) => return Err(Failure::new(2, "usage", "pass --choose or --text")),
            };
            match store.resolve(ticket, &choice).map_err(review_failure)? {
                ResolveOutcome::Resolved { text } => print_json(&json!({ "ticket": ticket, "resolved": text })),
                ResolveOutcome::AlreadyResolved { text } => print_json(&json!({
                    "ticket": ticket,
                    "resolved": text,
                    "warning": "ticket was already resolved; nothing changed",
                })),
            }
        }
    }
    Ok(())
}

/// Run directories under `root` (or `root` itself), in path order.
fn run_dirs(root: &Path) -> Result<Vec<PathBuf>, Failure> {
    if root.join(TRAIL_JSONL).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Failure::other(format!("{}: {e}", root.display())))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join(TRAIL_JSONL).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn cmd_eval(cli: &Cli, cmd: &EvalCmd) -> Outcome {
    match cmd {
        EvalCmd::Rouge { cand, reference } => print_json(&rouge_text(&read(cand)?, &read(reference)?)),
        EvalCmd::Report { labels, gold, results } => {
            let labels = load_labels(labels).map_err(Failure::other)?;
            let gold = load_gold(gold).map_err(Failure::other)?;
            let mut retrieved = BTreeMap::new();
            for dir in run_dirs(results)? {
                let trail = read_trail(&dir).map_err(Failure::other)?;
                retrieved.insert(trail.retrieval.query.clone(), trail.retrieval.chunk_ids.clone());
            }
            let metrics = retrieval_metrics(&retrieved, &gold).map_err(Failure::other)?;
            print_json(&json!({
                "figures_labelled": labels.len(),
                "hallucination_rate": hallucination_rate(&labels).map_err(Failure::other)?,
                "avg_atomic_fact_error": avg_atomic_fact_error(&labels).map_err(Failure::other)?,
                "retrieval": metrics,
            }));
        }
        EvalCmd::Retrieval { gold, hops } => {
            let cfg = load_config(cli)?;
            let g = load_graph(&cfg.resolve(&cfg.index_path)).map_err(Failure::other)?;
            let gold = load_gold(gold).map_err(Failure::other)?;
            let mut retrieved = BTreeMap::new();
            for name in gold.keys() {
                let r = g.retrieve(name, *hops).map_err(Failure::other)?;
                retrieved.insert(name.clone(), r.chunk_ids());
            }
            print_json(&retrieval_metrics(&retrieved, &gold).map_err(Failure::other)?);
        }
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Outcome {
    let synth = SynthCorpus::generate(&SynthConfig {
        figures: a.figures,
        distractors: a.distractors,
        seed: a.seed,
        per_document: a.per_document,
    })
    .map_err(|e| Failure::new(2, "usage", e))?;
    synth.write(&a.out).map_err(Failure::other)?;
    let mut cfg = RunConfig::default();
    cfg.gateway.mode = GatewayMode::Mock;
    cfg.gateway.mock_script = Some("index_script.json".into());
    std::fs::write(a.out.join("chronicle.toml"), cfg.to_toml()).map_err(|e| Failure::other(e.to_string()))?;
    print_json(&json!({
        "out": a.out.display().to_string(),
        "documents": synth.documents.len(),
        "figures": synth.figures.len(),
        "config": a.out.join("chronicle.toml").display().to_string(),
    }));
    Ok(())
}

fn cmd_promote(cli: &Cli, a: &PromoteArgs) -> Outcome {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::config("no config file: pass --config or set CHRONICLE_CONFIG"))?;
    let mut cfg = load_config(cli)?;
    let roles: Vec<&str> = a.roles.iter().map(String::as_str).collect();
    let regex = ExtractionRegex::new(&a.pattern, &roles, RegexOrigin::LlmGenerated);
    let probe = Chunk {
        id: "excerpt#00000".into(),
        doc_id: "excerpt".into(),
        start: 0,
        end: a.excerpt.chars().count(),
        text: a.excerpt.clone(),
        kind: ChunkKind::Biographical,
    };
    match validate_regex(&regex, &probe, &cfg.extraction.budget) {
        Validation::Accepted => {}
        Validation::Rejected(why) => {
            return Err(Failure::new(1, "regex_rejected", format!("{why:?}")));
        }
    }
    if cfg.extraction.demonstrations.iter().any(|d| d.regex.pattern == regex.pattern) {
        print_json(&json!({ "promoted": false, "reason": "pattern already in the demonstration pool" }));
        return Ok(());
    }
    cfg.extraction.demonstrations.push(RegexDemonstration {
        excerpt: a.excerpt.clone(),
        regex,
    });
    std::fs::write(path, cfg.to_toml()).map_err(|e| Failure::other(e.to_string()))?;
    print_json(&json!({ "promoted": true, "demonstrations": cfg.extraction.demonstrations.len() }));
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Index(c) => cmd_index(cli, c),
        Command::Retrieve { name, hops } => cmd_retrieve(cli, name, *hops),
        Command::Generate(a) => cmd_generate(cli, a),
        Command::Review(c) => cmd_review(cli, c),
        Command::Eval(c) => cmd_eval(cli, c),
        Command::Synth(a) => cmd_synth(a),
        Command::PromoteRegex(a) => cmd_promote(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Off,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let mut line = json!({ "error": f.kind, "message": f.message, "exit_code": f.code });
            if let Value::Object(extra) = f.extra {
                line.as_object_mut().expect("object").extend(extra);
            }
            eprintln!("{line}");
            ExitCode::from(f.code)
        }
    }
}
