use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hyperppg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyperppg")).args(args).output().unwrap()
}

fn error_object(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let v: Value = serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr not JSON ({e}): {text}"));
    v["error"].clone()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_are_json() {
    let out = hyperppg(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_object(&out)["kind"], "usage");
}

#[test]
fn bad_input_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "# fs=100,label=drowsy\n0.1\nnot-a-number\n").unwrap();
    let out = hyperppg(&["--out", s(&out_dir), "filter", "--input", s(&bad)]);
    assert!(!out.status.success());
    let err = error_object(&out);
    assert_eq!(err["kind"], "parse");
    assert!(err["message"].as_str().unwrap().contains("line 3"));
    assert!(!out_dir.exists());
}

#[test]
fn invalid_config_is_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let mut v: Value = serde_json::to_value(hyperppg::pipeline::PipelineConfig::default()).unwrap();
    v["dataset"]["stride"] = 0.into();
    std::fs::write(&cfg, v.to_string()).unwrap();
    let out_dir = dir.path().join("run");
    let out = hyperppg(&["--config", s(&cfg), "--out", s(&out_dir), "run"]);
    assert!(!out.status.success());
    assert_eq!(error_object(&out)["kind"], "invalid_argument");
    assert!(!out_dir.exists());
}

#[test]
fn salient_and_miou_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let boxes = dir.path().join("boxes.json");
    std::fs::write(&boxes, r#"[{"x":0,"y":0,"w":5,"h":40},{"x":2,"y":3,"w":4,"h":4},{"x":9,"y":1,"w":30,"h":2}]"#).unwrap();
    let out_dir = dir.path().join("o");
    let out = hyperppg(&[
        "--out",
        s(&out_dir),
        "salient",
        "--boxes",
        s(&boxes),
        "--frame-height",
        "200",
        "--frame-width",
        "400",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("salient.json")).unwrap()).unwrap();
    // Thresholds 30 (height) and 20 (width): the first and last boxes stay.
    let kept: Vec<f64> = v["boxes"].as_array().unwrap().iter().map(|b| b["x"].as_f64().unwrap()).collect();
    assert_eq!(kept, vec![0.0, 9.0]);

    let gt = dir.path().join("gt.pgm");
    let pred = dir.path().join("pred.json");
    std::fs::write(&gt, "P2\n4 1\n1\n1 1 0 0\n").unwrap();
    std::fs::write(&pred, r#"{"h":1,"w":4,"labels":[1,0,0,0]}"#).unwrap();
    let out = hyperppg(&["--out", s(&out_dir), "miou", "--pred", s(&pred), "--gt", s(&gt), "--n-classes", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("miou.json")).unwrap()).unwrap();
    // Background 2/3, foreground 1/2.
    assert!((v["miou"].as_f64().unwrap() - 7.0 / 12.0).abs() < 1e-15);

    let out = hyperppg(&["--out", s(&out_dir), "miou", "--pred", s(&pred), "--gt", s(&gt), "--n-classes", "1"]);
    assert!(!out.status.success());
}

#[test]
fn rcca_check_reports_cross_and_full_influence() {
    let dir = tempfile::tempdir().unwrap();
    let out = hyperppg(&["--out", s(dir.path()), "--seed", "9", "rcca-check", "--height", "3", "--width", "6", "--channels", "8"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("rcca_check.json")).unwrap()).unwrap();
    assert_eq!(v["r1_cross_only"], true);
    assert_eq!(v["r2_full"], true);
}
