use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cardiosep"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON summary")
}

const SHORT: [&str; 6] = [
    "--set",
    "synth.duration_s=2",
    "--set",
    "synth.sample_rate=2000",
    "--set",
    "synth.lung_period_s=0.5",
];

#[test]
fn synth_then_cluster_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let summary = ok(d, &[&SHORT[..], &["--seed", "1", "synth"]].concat());
    assert_eq!(summary["outputs"].as_array().unwrap().len(), 4);
    fs::write(
        d.join("manifest.csv"),
        "File Name,Gender,Sound Type,Location\nheart_ref.wav,F,heart,apex\nlung_ref.wav,M,lung,base\nmixture.wav,F,mix,apex\n",
    )
    .unwrap();
    let manifest = d.join("manifest.csv");
    ok(
        d,
        &[
            "--set",
            "cluster.frame_s=0.5",
            "--set",
            "cluster.k=3",
            "cluster",
            "--manifest",
            manifest.to_str().unwrap(),
        ],
    );
    let labels = fs::read_to_string(d.join("labels.csv")).unwrap();
    assert!(labels.starts_with("file,frame,label,truth\n"));
    // Three files of 2 s in 0.5 s frames.
    assert_eq!(labels.lines().count(), 1 + 12);
    let scores: Value = serde_json::from_str(&fs::read_to_string(d.join("scores.json")).unwrap()).unwrap();
    let acc = scores["scores"]["acc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(scores["truth_classes"], serde_json::json!(["heart", "lung", "mix"]));
}

#[test]
fn convergence_report_from_file_and_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let small = [
        "--set",
        "convergence.trials=6",
        "--set",
        "convergence.ranks=[2,2]",
        "--set",
        "convergence.nmf.max_iter=50",
        "--set",
        "convergence.bootstrap_resamples=50",
    ];
    ok(d, &[&small[..], &["convergence-report"]].concat());
    let r: Value = serde_json::from_str(&fs::read_to_string(d.join("escape_report.json")).unwrap()).unwrap();
    assert_eq!(r["report"]["trials"], 6);
    assert_eq!(r["report"]["survival_curve"].as_array().unwrap().len(), 2);

    fs::write(d.join("y.json"), r#"{"rows": 2, "cols": 3, "data": [1, 2, 3, 4, 5, 6]}"#).unwrap();
    let y = d.join("y.json");
    ok(d, &[&small[..], &["convergence-report", "--input", y.to_str().unwrap()]].concat());
    let r: Value = serde_json::from_str(&fs::read_to_string(d.join("escape_report.json")).unwrap()).unwrap();
    assert_eq!(r["input"], "y.json");

    fs::write(d.join("bad.json"), r#"{"rows": 1, "cols": 2, "data": [1, -1]}"#).unwrap();
    let bad = d.join("bad.json");
    assert_eq!(run(d, &["convergence-report", "--input", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn evaluate_writes_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &[&SHORT[..], &["synth"]].concat());
    let p = |f: &str| d.join(f).to_str().unwrap().to_string();
    // The references scored against themselves are perfect.
    let (hr, lr) = (p("heart_ref.wav"), p("lung_ref.wav"));
    ok(d, &["evaluate", "--heart", &hr, "--lung", &lr, "--heart-ref", &hr, "--lung-ref", &lr]);
    let csv = fs::read_to_string(d.join("scores.csv")).unwrap();
    assert_eq!(csv, "source,sdr_db,sir_db,sar_db\nheart,inf,inf,inf\nlung,inf,inf,inf\n");
    let json: Value = serde_json::from_str(&fs::read_to_string(d.join("scores.json")).unwrap()).unwrap();
    assert_eq!(json["heart"]["sdr_db"], "inf");
}

#[test]
fn bad_invocations_exit_with_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(d, &["separate"]).status.code(), Some(1));
    assert_eq!(run(d, &["--set", "synth.snr_db=loud", "synth"]).status.code(), Some(1));
    assert_eq!(run(d, &["--advisor", "oracle", "separate", "x.wav"]).status.code(), Some(1));
    let missing = run(d, &["separate", "/nonexistent/mix.wav"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(missing.stdout.is_empty());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error"));
}
