//! End-to-end exercise of every subcommand through the compiled binary.

use std::path::Path;
use std::process::{Command, Output};

use hiersum::corpus::Document;
use hiersum::synthetic::{generate, write_jsonl, SyntheticConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hiersum"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn hiersum");
    assert!(
        out.status.success(),
        "`hiersum {}` failed with {:?}\nstdout: {}\nstderr: {}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    out
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Shared tiny-model flags so training steps stay fast.
const SMALL: &[&str] = &[
    "--hidden", "16", "--word-dim", "12", "--edge-dim", "6",
    "--hetero-heads", "2,2", "--hyper-heads", "2", "--ffn-inner", "24",
    "--vocab-size", "600", "--accumulate-docs", "8", "--learning-rate", "1e-3",
];

fn write_corpus(path: &Path, n_docs: usize, seed: u64) -> Vec<Document> {
    let cfg = SyntheticConfig {
        n_docs,
        seed,
        ..SyntheticConfig::default()
    };
    let docs: Vec<Document> = generate(&cfg).into_iter().map(|s| s.doc).collect();
    write_jsonl(path, &docs).expect("write corpus");
    docs
}

#[test]
fn full_pipeline_through_binary() {
    let dir = tempfile::tempdir().expect("tempdir");
    let raw = dir.path().join("raw.jsonl");
    let cache = dir.path().join("cache");
    let run = dir.path().join("run");
    let docs = write_corpus(&raw, 60, 7);

    let mut args = vec![
        "preprocess",
        "--input", raw.to_str().unwrap(),
        "--out", cache.to_str().unwrap(),
    ];
    args.extend_from_slice(SMALL);
    run_ok(&args);
    assert!(cache.join("docs.jsonl").exists());
    assert!(cache.join("vocab.json").exists());
    assert!(cache.join("idf.json").exists());
    assert!(cache.join("manifest.json").exists());

    let mut args = vec!["label", "--cache", cache.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    run_ok(&args);

    let text = stdout_of(&run_ok(&["stats", "--input", cache.to_str().unwrap()]));
    assert!(text.contains("documents"), "stats output: {text}");
    assert!(text.contains("(0,20]"), "missing length bucket: {text}");
    assert!(text.contains("(0,50]"), "missing count bucket: {text}");

    let json_line = stdout_of(&run_ok(&["stats", "--input", raw.to_str().unwrap(), "--json"]));
    let record: serde_json::Value = serde_json::from_str(json_line.trim()).expect("stats json");
    assert_eq!(record["n_docs"], serde_json::json!(docs.len()));

    let mut args = vec![
        "train",
        "--cache", cache.to_str().unwrap(),
        "--out", run.to_str().unwrap(),
        "--max-epochs", "2", "--patience", "2",
    ];
    args.extend_from_slice(SMALL);
    run_ok(&args);
    let ckpt = run.join("model.ckpt");
    assert!(ckpt.exists());
    assert!(run.join("manifest.json").exists());
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).expect("train log");
    let records: Vec<serde_json::Value> = log
        .lines()
        .map(|l| serde_json::from_str(l).expect("log line is json"))
        .collect();
    assert_eq!(records.len(), 2);
    assert!(records[0]["train_loss"].as_f64().unwrap() > 0.0);

    let report_path = dir.path().join("eval.json");
    let text = stdout_of(&run_ok(&[
        "eval",
        "--checkpoint", ckpt.to_str().unwrap(),
        "--cache", cache.to_str().unwrap(),
        "--k", "3",
        "--out", report_path.to_str().unwrap(),
    ]));
    for row in ["model", "lead-3", "oracle"] {
        assert!(text.contains(row), "eval output missing {row}: {text}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["k"], serde_json::json!(3));

    let sums = dir.path().join("summaries.jsonl");
    run_ok(&[
        "summarize",
        "--checkpoint", ckpt.to_str().unwrap(),
        "--input", raw.to_str().unwrap(),
        "--out", sums.to_str().unwrap(),
        "--k", "3",
    ]);
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&sums)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).expect("summary line is json"))
        .collect();
    assert_eq!(lines.len(), docs.len());
    for (line, doc) in lines.iter().zip(&docs) {
        assert_eq!(line["id"].as_str().unwrap(), doc.id);
        let indices = line["indices"].as_array().unwrap();
        assert!(!indices.is_empty() && indices.len() <= 3);
        let summary = line["summary"].as_array().unwrap();
        assert_eq!(summary.len(), indices.len());
    }
}

#[test]
fn ablate_reports_all_variants() {
    let dir = tempfile::tempdir().expect("tempdir");
    let raw = dir.path().join("raw.jsonl");
    let cache = dir.path().join("cache");
    let out = dir.path().join("ablation");
    write_corpus(&raw, 24, 11);

    let mut args = vec![
        "preprocess",
        "--input", raw.to_str().unwrap(),
        "--out", cache.to_str().unwrap(),
    ];
    args.extend_from_slice(SMALL);
    run_ok(&args);
    let mut args = vec!["label", "--cache", cache.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    run_ok(&args);

    let mut args = vec![
        "ablate",
        "--cache", cache.to_str().unwrap(),
        "--out", out.to_str().unwrap(),
        "--max-epochs", "1",
    ];
    args.extend_from_slice(SMALL);
    let text = stdout_of(&run_ok(&args));
    for variant in ["full", "no-hetero", "no-hyper", "parallel"] {
        assert!(text.contains(variant), "ablation table missing {variant}: {text}");
    }
    let rows: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 4);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn gradcheck_prints_per_suite_lines() {
    let text = stdout_of(&run_ok(&["gradcheck", "--seed", "3"]));
    for suite in [
        "hetero-attention-block",
        "hypergraph-self-attention",
        "hypergraph-additive-baseline",
        "full-pass",
    ] {
        assert!(text.contains(suite), "gradcheck output missing {suite}: {text}");
    }
    assert!(!text.contains("FAIL"), "gradcheck reported a failure: {text}");
}

#[test]
fn runtime_failures_exit_one_with_category() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = bin()
        .args([
            "eval",
            "--checkpoint", dir.path().join("missing.ckpt").to_str().unwrap(),
            "--cache", dir.path().to_str().unwrap(),
        ])
        .output()
        .expect("spawn hiersum");
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error ["), "stderr: {stderr}");
}

#[test]
fn usage_errors_exit_two() {
    let out = bin().args(["preprocess"]).output().expect("spawn hiersum");
    assert_eq!(out.status.code(), Some(2));

    let out = bin().args(["no-such-command"]).output().expect("spawn hiersum");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().expect("tempdir");
    let raw = dir.path().join("raw.jsonl");
    let cache = dir.path().join("cache");
    write_corpus(&raw, 8, 3);

    let config_path = dir.path().join("config.toml");
    std::fs::write(&config_path, "vocab_size = 50\noracle_max = 2\n").unwrap();

    run_ok(&[
        "preprocess",
        "--input", raw.to_str().unwrap(),
        "--out", cache.to_str().unwrap(),
        "--config", config_path.to_str().unwrap(),
        "--vocab-size", "90",
    ]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(cache.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config"]["vocab_size"], serde_json::json!(90));
    assert_eq!(manifest["config"]["oracle_max"], serde_json::json!(2));
}
