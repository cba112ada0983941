use std::path::Path;
use std::process::{Command, Output};

fn seqbox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqbox")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate_small(root: &Path) -> Output {
    seqbox(&["generate", "--out", s(root), "--n-scenes", "2", "--frames", "12", "--clip-len", "6", "--stride", "3"])
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn stride_longer_than_clip_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqbox(&["generate", "--out", s(&dir.path().join("d")), "--clip-len", "3", "--stride", "5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stride"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.toml");
    std::fs::write(&cfg, "seed = 1\nn_scene = 4\n").unwrap();
    let out = seqbox(&["generate", "--out", s(&dir.path().join("d")), "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_scene"));
}

#[test]
fn missing_dataset_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqbox(&["export-gt", "--root", s(&dir.path().join("nowhere")), "--out", s(&dir.path().join("p.jsonl"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn missing_depth_raster_fails_annotation() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("d");
    assert!(generate_small(&root).status.success());
    let raw = std::fs::read_dir(root.join("raw")).unwrap().next().unwrap().unwrap().path();
    std::fs::remove_file(raw.join("depth_00000.bin")).unwrap();
    let out = seqbox(&["annotate", "--root", s(&root)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("depth"));
}

#[test]
fn ground_truth_scores_perfectly_and_report_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("d");
    assert!(generate_small(&root).status.success());
    let preds = dir.path().join("gt.jsonl");
    assert!(seqbox(&["export-gt", "--root", s(&root), "--out", s(&preds)]).status.success());
    let rep = dir.path().join("rep");
    let out = seqbox(&["eval", "--root", s(&root), "--predictions", s(&preds), "--out", s(&rep)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("ap3d_mean\t1.000000"), "{stdout}");
    assert!(stdout.contains("f1@0.50\t1.000000"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(rep.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["ap_mean"], 1.0);
    assert_eq!(std::fs::read_to_string(rep.join("metrics.tsv")).unwrap(), stdout);
}

#[test]
fn malformed_prediction_row_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("d");
    assert!(generate_small(&root).status.success());
    let preds = dir.path().join("gt.jsonl");
    assert!(seqbox(&["export-gt", "--root", s(&root), "--out", s(&preds)]).status.success());
    let mut text = std::fs::read_to_string(&preds).unwrap();
    text.push_str("{\"sequence_id\": \"x\", \"frame_index\": \"two\"}\n");
    let bad_line = text.lines().count();
    std::fs::write(&preds, text).unwrap();
    let out = seqbox(&["eval", "--root", s(&root), "--predictions", s(&preds)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!(":{bad_line}")), "{err}");
}

#[test]
fn losscheck_passes_and_detects_corrupted_gradients() {
    let ok = seqbox(&["losscheck", "--points", "10"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("result: PASS"));
    let bad = seqbox(&["losscheck", "--points", "3", "--loss", "iou3d", "--inject-gradient-error"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("result: FAIL"));
}

#[test]
fn unknown_loss_name_is_a_usage_error() {
    assert_eq!(seqbox(&["losscheck", "--loss", "nope"]).status.code(), Some(2));
}

#[test]
fn decoder_demo_passes() {
    let out = seqbox(&["decoder-demo", "--trials", "10", "--mask", "token-causal"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn generate_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(generate_small(&a).status.success());
    assert!(generate_small(&b).status.success());
    assert_eq!(tree(&a), tree(&b));
    let c = dir.path().join("c");
    assert!(seqbox(&["generate", "--out", s(&c), "--n-scenes", "2", "--frames", "12", "--clip-len", "6", "--stride", "3", "--seed", "99"])
        .status
        .success());
    assert_ne!(tree(&a), tree(&c));
}
