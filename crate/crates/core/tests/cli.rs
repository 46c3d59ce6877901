use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn sample(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../sample")
        .join(name)
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

fn chatmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chatmt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn filter_micro_corpus_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.tsv");
    let report = dir.path().join("r.json");
    let run = chatmt(&[
        "filter",
        "--in",
        s(&sample("bitext.tsv")),
        "--out",
        s(&out),
        "--report",
        s(&report),
    ]);
    assert_eq!(
        run.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );

    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let by_rule = &r["report"]["dropped_by_rule"];
    assert_eq!(by_rule["length"], 1);
    assert_eq!(by_rule["dedup"], 1);
    assert_eq!(by_rule["ratio"], 1);
    assert_eq!(r["report"]["kept_count"], 7);
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 7);
}

#[test]
fn unknown_flag_is_usage_error() {
    let run = chatmt(&["filter", "--bogus"]);
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(chatmt(&["--help"]).status.code(), Some(0));
    let v = chatmt(&["--version"]);
    assert_eq!(v.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&v.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn zero_ensemble_size_is_usage_error() {
    let run = chatmt(&[
        "bsce-select",
        "--scores",
        s(&sample("scores.json")),
        "--ensemble-size",
        "0",
    ]);
    assert_eq!(run.status.code(), Some(1));
    let run = chatmt(&[
        "bsce-select",
        "--scores",
        s(&sample("scores.json")),
        "--ensemble-size",
        "4",
    ]);
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn bsce_select_writes_selection() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sel.json");
    let run = chatmt(&[
        "bsce-select",
        "--scores",
        s(&sample("scores.json")),
        "--ensemble-size",
        "2",
        "--out",
        s(&out),
    ]);
    assert_eq!(run.status.code(), Some(0));
    let sel: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(sel["selected"], serde_json::json!(["m3", "m1"]));
}

#[test]
fn missing_input_is_usage_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.tsv");
    let run = chatmt(&["filter", "--in", "/nonexistent/in.tsv", "--out", s(&out)]);
    assert_eq!(run.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn malformed_row_is_data_error_unless_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("a.tsv");
    fs::write(&input, "good\tgut\nno tab here\nfine\tfein\n").unwrap();
    let out = dir.path().join("b.tsv");
    let report = dir.path().join("r.json");

    let run = chatmt(&["filter", "--in", s(&input), "--out", s(&out)]);
    assert_eq!(run.status.code(), Some(2));
    assert!(!out.exists(), "no partial output on failure");

    let run = chatmt(&[
        "filter",
        "--in",
        s(&input),
        "--out",
        s(&out),
        "--fail-mode",
        "skip",
        "--report",
        s(&report),
    ]);
    assert_eq!(run.status.code(), Some(0));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["skipped_records"], 1);
    assert_eq!(r["report"]["kept_count"], 2);
}

#[test]
fn chatprep_rejects_n_prev_above_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.jsonl");
    let run = chatmt(&[
        "chatprep",
        "--in",
        s(&sample("chat.jsonl")),
        "--out",
        s(&out),
        "--n-prev",
        "4",
    ]);
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn chatprep_then_denoise_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = dir.path().join("p.jsonl");
    let noised = dir.path().join("n.jsonl");
    let run = chatmt(&[
        "chatprep",
        "--in",
        s(&sample("chat.jsonl")),
        "--out",
        s(&prepared),
        "--n-prev",
        "2",
    ]);
    assert_eq!(run.status.code(), Some(0));
    assert_eq!(
        fs::read(&prepared).unwrap(),
        fs::read(golden("chat.n2.prepared.jsonl")).unwrap()
    );

    let run = chatmt(&[
        "denoise",
        "--in",
        s(&prepared),
        "--out",
        s(&noised),
        "--seed",
        "42",
    ]);
    assert_eq!(run.status.code(), Some(0));
    assert_eq!(
        fs::read(&noised).unwrap(),
        fs::read(golden("chat.n2.seed42.jsonl")).unwrap()
    );
}

#[test]
fn pipeline_missing_input_fails_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("p.toml");
    fs::write(
        &cfg,
        "[filter]\ninput = \"here.tsv\"\n[chatprep]\ninput = \"missing.jsonl\"\n",
    )
    .unwrap();
    fs::write(dir.path().join("here.tsv"), "a\tb\n").unwrap();
    let run = chatmt(&["pipeline", "--config", s(&cfg)]);
    assert_eq!(run.status.code(), Some(1));
    assert!(!dir.path().join("out").exists(), "no stage should have run");
}

#[test]
fn kernels_check_passes() {
    let run = chatmt(&["kernels-check", "--instances", "10"]);
    assert_eq!(run.status.code(), Some(0));
    assert_eq!(
        String::from_utf8_lossy(&run.stdout).matches("PASS").count(),
        6
    );
}
