use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn chronicle(config: Option<&Path>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_chronicle"));
    cmd.env_remove("CHRONICLE_CONFIG").env_remove("RUST_LOG");
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.args(args).output().expect("binary runs")
}

fn ok(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.stderr.is_empty(), "success wrote to stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

fn err_line(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).expect("error line is JSON")
}

/// Synthetic corpus plus a built index; returns the config path.
fn synth_indexed(dir: &Path) -> PathBuf {
    let out = dir.to_str().unwrap();
    ok(&chronicle(None, &["synth", "--figures", "10", "--distractors", "5", "--out", out]));
    let cfg = dir.join("chronicle.toml");
    ok(&chronicle(Some(&cfg), &["index", "build"]));
    cfg
}

fn first_figure(dir: &Path) -> String {
    let figures: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("figures.json")).unwrap()).unwrap();
    figures[0]["name"].as_str().unwrap().to_string()
}

#[test]
fn synth_then_index_gives_one_person_node_per_figure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_indexed(dir.path());
    let first = std::fs::read(dir.path().join("index.kg")).unwrap();
    let report = ok(&chronicle(Some(&cfg), &["index", "build"]));
    assert_eq!(report["person_nodes"], 10);
    assert_eq!(report["regex_ratio"], 1.0);
    assert_eq!(std::fs::read(dir.path().join("index.kg")).unwrap(), first);
    let info = ok(&chronicle(Some(&cfg), &["index", "inspect"]));
    assert_eq!(info["person_nodes"], 10);
    assert_eq!(info["integrity"], "ok");
}

#[test]
fn empty_corpus_fails_with_an_error_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("corpus")).unwrap();
    std::fs::write(dir.path().join("s.json"), "{}").unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[gateway]\nmock_script = \"s.json\"\n").unwrap();
    let out = chronicle(Some(&cfg), &["index", "build"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(err_line(&out)["message"].as_str().unwrap().contains("no readable documents"));
}

#[test]
fn missing_config_is_a_config_error() {
    let out = chronicle(None, &["index", "build"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(err_line(&out)["error"], "config");
}

#[test]
fn generate_is_deterministic_and_absent_figures_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_indexed(dir.path());
    let name = first_figure(dir.path());
    let script = dir.path().join("generate_script.json");
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        ok(&chronicle(
            Some(&cfg),
            &["generate", &name, "--mock", script.to_str().unwrap(), "--out", out.to_str().unwrap()],
        ));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["biography.json", "biography.txt", "trail.jsonl"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(a.join("timings.json").is_file() && a.join("config.toml").is_file());
    let text = std::fs::read_to_string(a.join("biography.txt")).unwrap();
    assert!(text.starts_with(&name));

    let near: String = name.chars().take(1).collect::<String>() + "某某";
    let out = chronicle(Some(&cfg), &["generate", &near, "--mock", script.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    let e = err_line(&out);
    assert_eq!(e["error"], "no_such_figure");
    assert!(e["suggestions"].is_array());
}

#[test]
fn gateway_failure_exits_5_and_keeps_the_partial_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_indexed(dir.path());
    let name = first_figure(dir.path());
    let script = dir.path().join("down.json");
    std::fs::write(&script, json!({"default": [{"fault": "unavailable"}], "repeat_last": []}).to_string()).unwrap();
    let run = dir.path().join("run");
    let out = chronicle(
        Some(&cfg),
        &["generate", &name, "--mock", script.to_str().unwrap(), "--out", run.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(err_line(&out)["error"], "gateway");
    let trail = std::fs::read_to_string(run.join("trail.jsonl")).unwrap();
    assert!(trail.contains("\"failure\""));
}

#[test]
fn hops_zero_is_a_prefix_of_hops_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_indexed(dir.path());
    let name = first_figure(dir.path());
    let ids = |hops: &str| -> Vec<Value> {
        let r = ok(&chronicle(Some(&cfg), &["retrieve", &name, "--hops", hops]));
        r["chunks"].as_array().unwrap().iter().map(|c| c["id"].clone()).collect()
    };
    let (h0, h1) = (ids("0"), ids("1"));
    assert_eq!(h0.len(), 1);
    assert_eq!(&h1[..h0.len()], &h0[..]);
}

#[test]
fn review_ticket_resolution_patches_the_biography() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::create_dir(d.join("corpus")).unwrap();
    let a = "胡鄂，字卓庵，号松江。余姚人。崇祯三年（1630）生。\n";
    let b = "胡鄂，字卓庵，号松江。余姚人。崇祯四年（1631）生。\n";
    std::fs::write(d.join("corpus/a.txt"), a).unwrap();
    std::fs::write(d.join("corpus/b.txt"), b).unwrap();
    let regex = json!({
        "pattern": "([^，。\\s]+)，字([^，。\\s]+)，号([^，。\\s]+)。([^，。\\s]+)人。",
        "roles": ["name", "styled_name", "nickname", "hometown"]
    });
    let index_script = json!({
        "queues": {
            "chunk": [format!("[[0,{}]]", a.chars().count()), format!("[[0,{}]]", b.chars().count())],
            "extract.regex": [regex.to_string()],
        },
        "repeat_last": ["extract.regex"],
    });
    std::fs::write(d.join("index.json"), index_script.to_string()).unwrap();
    let sentence = "胡鄂，崇祯三年（1630）生。";
    let verdict = "NOT_SUPPORTED,REF\nEVIDENCE a#00000 崇祯三年（1630）生\nEVIDENCE b#00000 崇祯四年（1631）生";
    let gen_script = json!({
        "queues": {
            "generate": [sentence, "<END>"],
            "decompose": [sentence],
            "verify": [verdict],
        },
        "repeat_last": ["verify", "decompose", "generate"],
    });
    std::fs::write(d.join("gen.json"), gen_script.to_string()).unwrap();
    let cfg = d.join("c.toml");
    std::fs::write(&cfg, "[gateway]\nmock_script = \"index.json\"\n").unwrap();

    ok(&chronicle(Some(&cfg), &["index", "build"]));
    let run = d.join("run");
    let g = ok(&chronicle(
        Some(&cfg),
        &["generate", "胡鄂", "--mock", d.join("gen.json").to_str().unwrap(), "--out", run.to_str().unwrap()],
    ));
    assert_eq!(g["provisional"], 1, "{g}");

    let pending = ok(&chronicle(Some(&cfg), &["review", "list"]));
    let ticket = pending[0]["ticket"]["id"].as_str().unwrap().to_string();
    assert_eq!(pending[0]["ticket"]["kind"], "ref_conflict");

    let r = ok(&chronicle(Some(&cfg), &["review", "resolve", &ticket, "--choose", "B"]));
    assert!(r["resolved"].as_str().unwrap().contains("1631"));
    let text = std::fs::read_to_string(run.join("biography.txt")).unwrap();
    assert!(text.contains("1631") && !text.contains("1630"), "{text}");

    let again = ok(&chronicle(Some(&cfg), &["review", "resolve", &ticket, "--choose", "A"]));
    assert!(again["warning"].is_string());
    assert!(std::fs::read_to_string(run.join("biography.txt")).unwrap().contains("1631"));

    let out = chronicle(Some(&cfg), &["review", "list"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "no pending tickets");
    let out = chronicle(Some(&cfg), &["review", "resolve", "T-none", "--choose", "A"]);
    assert_eq!(out.status.code(), Some(6));
}

#[test]
fn eval_rouge_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.txt"), "the cat sat on the mat").unwrap();
    std::fs::write(d.join("r.txt"), "the cat is on the mat").unwrap();
    let r = ok(&chronicle(None, &["eval", "rouge", "--cand", d.join("c.txt").to_str().unwrap(), "--ref", d.join("r.txt").to_str().unwrap()]));
    assert_eq!(r["rouge_1"]["recall"].as_f64().unwrap(), 5.0 / 6.0);
    assert_eq!(r["rouge_l"]["precision"].as_f64().unwrap(), 5.0 / 6.0);

    let cfg = synth_indexed(d);
    let name = first_figure(d);
    let runs = d.join("runs");
    ok(&chronicle(
        Some(&cfg),
        &[
            "generate",
            &name,
            "--hops",
            "0",
            "--mock",
            d.join("generate_script.json").to_str().unwrap(),
            "--out",
            runs.join("one").to_str().unwrap(),
        ],
    ));
    let labels = format!(
        "{}\n{}\n",
        json!({"figure": name, "has_hallucination": false, "erroneous_atomic_fact_count": 0}),
        json!({"figure": "other", "has_hallucination": true, "erroneous_atomic_fact_count": 3})
    );
    std::fs::write(d.join("labels.jsonl"), labels).unwrap();
    let rep = ok(&chronicle(
        None,
        &[
            "eval",
            "report",
            "--labels",
            d.join("labels.jsonl").to_str().unwrap(),
            "--gold",
            d.join("gold_retrieval.json").to_str().unwrap(),
            "--results",
            runs.to_str().unwrap(),
        ],
    ));
    assert_eq!(rep["hallucination_rate"], 0.5);
    assert_eq!(rep["avg_atomic_fact_error"], 1.5);
    assert_eq!(rep["retrieval"]["f1"], 1.0);

    let all = ok(&chronicle(Some(&cfg), &["eval", "retrieval", "--gold", d.join("gold_retrieval.json").to_str().unwrap()]));
    assert_eq!(all["precision"], 1.0);
    assert_eq!(all["recall"], 1.0);
}

#[test]
fn promote_regex_appends_a_demonstration_once() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_indexed(dir.path());
    let args = [
        "promote-regex",
        "--pattern",
        "([^,]+), courtesy name ([^,.]+)",
        "--roles",
        "name,styled_name",
        "--excerpt",
        "Chen Hu, courtesy name Yanxia.",
    ];
    let r = ok(&chronicle(Some(&cfg), &args));
    assert_eq!(r["promoted"], true);
    assert_eq!(r["demonstrations"], 3);
    let r = ok(&chronicle(Some(&cfg), &args));
    assert_eq!(r["promoted"], false);
    let text = std::fs::read_to_string(&cfg).unwrap();
    assert!(text.contains("llm_generated"));

    let bad = chronicle(Some(&cfg), &["promote-regex", "--pattern", "(x)", "--roles", "a", "--excerpt", "nothing here"]);
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(err_line(&bad)["error"], "regex_rejected");
}

#[test]
fn synth_rejects_zero_figures() {
    let dir = tempfile::tempdir().unwrap();
    let out = chronicle(None, &["synth", "--figures", "0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
