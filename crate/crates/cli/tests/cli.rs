use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn reversal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reversal")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = reversal(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_line(out: &Output) -> Value {
    assert!(!out.status.success());
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "{text}");
    let v: Value = serde_json::from_str(lines[0]).unwrap();
    assert!(v["error"]["kind"].is_string() && v["error"]["message"].is_string(), "{v}");
    v
}

#[test]
fn simulate_human_profile_gives_complete_runs() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs.jsonl");
    ok(&[
        "simulate", "--rule", "dual", "--eta-pos", "0.935", "--eta-neg", "0.755", "--beta", "1.326", "--runs", "200",
        "--schedule", "random", "--seed", "1", "--out", s(&runs),
    ]);
    let recs = reversal_core::storage::read_runs(&runs).unwrap();
    assert_eq!(recs.len(), 200);
    assert!(recs.iter().all(|r| r.status == reversal_core::RunStatus::Complete && r.trials.len() == 250));
}

#[test]
fn artifacts_are_byte_identical_across_invocations_and_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let base = ["simulate", "--rule", "kdu", "--kappa", "0.6", "--sd", "0.3", "--runs", "30", "--seed", "4"];
    ok(&[&base[..], &["--out", s(&p("a.jsonl"))]].concat());
    ok(&[&["--jobs", "1"], &base[..], &["--out", s(&p("b.jsonl"))]].concat());
    assert_eq!(std::fs::read(p("a.jsonl")).unwrap(), std::fs::read(p("b.jsonl")).unwrap());

    ok(&["metrics", "--in", s(&p("a.jsonl")), "--out", s(&p("cell1.csv"))]);
    ok(&["metrics", "--in", s(&p("a.jsonl")), "--out", s(&p("cell2.csv"))]);
    let c1 = std::fs::read(p("cell1.csv")).unwrap();
    assert!(!c1.is_empty());
    assert_eq!(c1, std::fs::read(p("cell2.csv")).unwrap());

    ok(&["export-curves", "--in", s(&p("a.jsonl")), "--out", s(&p("c1.csv"))]);
    ok(&["--jobs", "1", "export-curves", "--in", s(&p("a.jsonl")), "--out", s(&p("c2.csv"))]);
    assert_eq!(std::fs::read(p("c1.csv")).unwrap(), std::fs::read(p("c2.csv")).unwrap());
}

#[test]
fn fit_output_depends_only_on_seed_and_chains() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&["simulate", "--runs", "12", "--trials", "120", "--seed", "3", "--out", s(&p("r.jsonl"))]);
    let input = p("r.jsonl");
    let fit = ["fit", "--in", s(&input), "--chains", "2", "--warmup", "60", "--samples", "60", "--seed", "8"];
    ok(&[&fit[..], &["--out", s(&p("f1.json")), "--draws", s(&p("d1.csv"))]].concat());
    ok(&[&["--jobs", "1"], &fit[..], &["--out", s(&p("f2.json")), "--draws", s(&p("d2.csv"))]].concat());
    assert_eq!(std::fs::read(p("f1.json")).unwrap(), std::fs::read(p("f2.json")).unwrap());
    assert_eq!(std::fs::read(p("d1.csv")).unwrap(), std::fs::read(p("d2.csv")).unwrap());
}

#[test]
fn compare_prefers_dual_on_dual_data() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&[
        "simulate", "--rule", "dual", "--eta-pos", "0.202", "--eta-neg", "0.117", "--beta", "5.876", "--sd", "0.25",
        "--runs", "30", "--seed", "21", "--out", s(&p("runs.jsonl")),
    ]);
    ok(&[
        "compare", "--in", s(&p("runs.jsonl")), "--models", "dual,kdu", "--chains", "4", "--warmup", "1000",
        "--samples", "1000", "--seed", "5", "--out", s(&p("dic.json")),
    ]);
    let v: Value = serde_json::from_slice(&std::fs::read(p("dic.json")).unwrap()).unwrap();
    assert_eq!(v["preferred"], "dual", "{v}");
    assert_eq!(v["models"].as_array().unwrap().len(), 2);
}

#[test]
fn compare_refuses_nonconverged_fits_without_override() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&["simulate", "--runs", "8", "--trials", "60", "--seed", "2", "--out", s(&p("r.jsonl"))]);
    let input = p("r.jsonl");
    let args = ["compare", "--in", s(&input), "--chains", "2", "--warmup", "4", "--samples", "8", "--seed", "1"];
    let v = error_line(&reversal(&args));
    assert_eq!(v["error"]["kind"], "not_converged");
    ok(&[&args[..], &["--allow-nonconverged", "--out", s(&p("dic.json"))]].concat());
    let v: Value = serde_json::from_slice(&std::fs::read(p("dic.json")).unwrap()).unwrap();
    assert!(v["models"].as_array().unwrap().iter().any(|m| m["converged"] == false));
}

#[test]
fn errors_are_one_json_line_with_nonzero_exit() {
    assert_eq!(error_line(&reversal(&["simulate", "--bogus-flag"]))["error"]["kind"], "usage");
    assert_eq!(error_line(&reversal(&["frobnicate"]))["error"]["kind"], "usage");
    assert_eq!(error_line(&reversal(&["metrics", "--in", "/nonexistent/runs.jsonl"]))["error"]["kind"], "io");
    assert_eq!(error_line(&reversal(&["simulate", "--eta-pos", "1.5"]))["error"]["kind"], "invalid_input");
    assert_eq!(error_line(&reversal(&["simulate", "--schedule", "weekly"]))["error"]["kind"], "invalid_input");
    let v = error_line(&reversal(&["metrics"]));
    assert!(v["error"]["message"].as_str().unwrap().contains("--in"));
}

#[test]
fn run_llm_with_mock_and_import_human() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&[
        "run-llm", "--mock", "wsls", "--variant", "xy", "--runs", "3", "--trials", "40", "--seed", "9", "--out",
        s(&p("llm.jsonl")), "--log", s(&p("log.jsonl")), "--summary", s(&p("sum.json")),
    ]);
    let runs = reversal_core::storage::read_runs(p("llm.jsonl")).unwrap();
    assert_eq!(runs.len(), 3);
    assert!(runs.iter().all(|r| r.trials.len() == 40));
    let sum: Value = serde_json::from_slice(&std::fs::read(p("sum.json")).unwrap()).unwrap();
    assert_eq!(sum["n_complete"], 3);
    assert_eq!(std::fs::read_to_string(p("log.jsonl")).unwrap().lines().count(), 120);

    ok(&["run-llm", "--mock", "always-Q", "--runs", "1", "--trials", "10", "--max-retries", "2", "--out", s(&p("bad.jsonl"))]);
    let bad = reversal_core::storage::read_runs(p("bad.jsonl")).unwrap();
    assert_eq!(bad[0].status, reversal_core::RunStatus::Incomplete);
    assert!(bad[0].trials.is_empty());

    std::fs::write(
        p("human.csv"),
        "participant,trial,choice,outcome\np1,1,A,+100\np1,2,A,-100\np1,3,B,+100\np2,1,B,-100\n",
    )
    .unwrap();
    ok(&["import-human", "--in", s(&p("human.csv")), "--label-a0", "A", "--label-a1", "B", "--out", s(&p("h.jsonl"))]);
    let h = reversal_core::storage::read_runs(p("h.jsonl")).unwrap();
    assert_eq!(h.iter().map(|r| r.trials.len()).collect::<Vec<_>>(), vec![3, 1]);
    ok(&["metrics", "--in", s(&p("h.jsonl")), "--out", s(&p("hm.csv"))]);
}

#[test]
fn example_config_parses_and_flags_override_it() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/example.toml");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs.jsonl");
    ok(&["--config", s(&cfg), "simulate", "--runs", "3", "--trials", "20", "--out", s(&out)]);
    let runs = reversal_core::storage::read_runs(&out).unwrap();
    assert_eq!(runs.len(), 3);
    assert_eq!(runs[0].trials.len(), 20);
    match &runs[0].agent {
        reversal_core::storage::AgentDescriptor::Synthetic { rule, .. } => assert_eq!(*rule, reversal_core::UpdateRule::Kdu),
        other => panic!("{other:?}"),
    }

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[simulate]\nrunz = 3\n").unwrap();
    let v = error_line(&reversal(&["--config", s(&bad), "simulate"]));
    assert!(v["error"]["message"].as_str().unwrap().contains("simulate"));
}
