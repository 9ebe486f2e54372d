use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mini() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/mini")
}

fn gesturekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gesturekit")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_report_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = mini().join("config.txt");
    let out = gesturekit(&["run", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("metrics/report.json").exists());
    let manifest = std::fs::read_to_string(tmp.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("\"metrics/report.json\""));
}

#[test]
fn stage_command_and_quantize_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let cfg = mini().join("config.txt");
    let out = gesturekit(&["refine", "--config", s(&cfg), "--out", s(&run), "--set", "stages=parse,refine", "--rules", "fingers"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(run.join("refine/seq_0.report.json")).unwrap();
    assert!(report.contains("\"fingers\""));

    let motion = run.join("refine/seq_0.motion.json");
    let cb = tmp.path().join("cb");
    let out = gesturekit(&["quantize", "learn", "--motion", s(&motion), "--out", s(&cb), "--segments", "hands", "--size", "16"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let book = cb.join("hands.codebook.json");
    let enc = tmp.path().join("enc");
    assert!(gesturekit(&["quantize", "encode", "--codebook", s(&book), "--motion", s(&motion), "--out", s(&enc)]).status.success());
    let dec = tmp.path().join("dec");
    let codes = enc.join("codes.json");
    assert!(gesturekit(&["quantize", "decode", "--codebook", s(&book), "--codes", s(&codes), "--base", s(&motion), "--out", s(&dec)])
        .status
        .success());
    assert!(dec.join("recon.motion.json").exists() && dec.join("manifest.json").exists());
    let out = gesturekit(&["quantize", "losses", "--codebook", s(&book), "--motion", s(&motion)]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["hands"]["rec"].as_f64().unwrap() >= 0.0);
}

#[test]
fn split_and_maskplan() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gesturekit(&["split", "--manifest", s(&mini().join("dataset.json")), "--out", s(tmp.path()), "--seed", "7"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "train 2 val 0 test 1");
    assert!(tmp.path().join("split.json").exists());

    let a = gesturekit(&["maskplan", "--epoch", "200", "--total-epochs", "400", "--frames", "40", "--seed", "3"]);
    let b = gesturekit(&["maskplan", "--epoch", "200", "--total-epochs", "400", "--frames", "40", "--seed", "3"]);
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["ratio"].as_f64(), Some(0.475));
    assert_eq!(v["masked_frames"].as_array().unwrap().len(), 19);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = mini().join("config.txt");
    let out = gesturekit(&["run", "--config", s(&cfg), "--out", s(tmp.path()), "--set", "stages=parse,dance"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dance"));
    let out = gesturekit(&["run", "--config", s(&cfg), "--out", s(tmp.path()), "--set", "dataset=nowhere.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(gesturekit(&["maskplan"]).status.code(), Some(2));
}
