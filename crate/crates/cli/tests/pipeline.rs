use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use steglab::gfr::FeatureMatrix;
use steglab::jpeg::{compress, decompress_real, read_coefficients};
use steglab::manifest::RunManifest;
use steglab::net::{NetConfig, NetGraph, TluConfig, Variant};
use steglab::stego::ternary_entropy;
use steglab::train::PairedDataset;

fn steglab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_steglab")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = steglab(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> RunManifest {
    RunManifest::read(dir.join("manifest.txt")).unwrap()
}

/// synth → prepare → embed at 32×32.
fn dataset(root: &Path, count: usize, alpha: &str) -> PathBuf {
    let (raw, covers, stego) = (root.join("raw"), root.join("covers"), root.join("stego"));
    ok(&["synth", "--out", s(&raw), "--count", &count.to_string(), "--size", "32", "--seed", "3"]);
    ok(&["prepare", "--src", s(&raw), "--out", s(&covers), "--size", "32"]);
    ok(&["embed", "--covers", s(&covers), "--out", s(&stego), "--payload-bpnzac", alpha, "--seed", "5"]);
    stego.join("pairs.txt")
}

#[test]
fn prepare_writes_one_fixpoint_container_per_image() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, covers) = (dir.path().join("raw"), dir.path().join("covers"));
    ok(&["synth", "--out", s(&raw), "--count", "10", "--size", "40", "--seed", "1"]);
    ok(&["prepare", "--src", s(&raw), "--out", s(&covers), "--size", "32", "--quality-factor", "75"]);
    let files: Vec<_> = std::fs::read_dir(&covers)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "stgc"))
        .collect();
    assert_eq!(files.len(), 10);
    for f in files {
        let ci = read_coefficients(&f).unwrap();
        assert_eq!((ci.width(), ci.height()), (32, 32));
        let again = compress(&decompress_real(&ci).round_clamp(), ci.qtable()).unwrap();
        assert_eq!(again, ci, "{}", f.display());
    }
    assert_eq!(manifest(&covers).get("config.quality_factor"), Some("75"));
}

#[test]
fn prepare_skips_unreadable_files_and_fails_when_all_do() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    ok(&["synth", "--out", s(&raw), "--count", "2", "--size", "32"]);
    std::fs::write(raw.join("broken.pgm"), b"P5 not an image").unwrap();
    let out = steglab(&["prepare", "--src", s(&raw), "--out", s(&dir.path().join("a")), "--size", "32"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.pgm"));

    let bad = dir.path().join("bad");
    std::fs::create_dir(&bad).unwrap();
    std::fs::write(bad.join("x.pgm"), b"junk").unwrap();
    assert!(!steglab(&["prepare", "--src", s(&bad), "--out", s(&dir.path().join("b"))]).status.success());
}

#[test]
fn embed_records_change_rate_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dataset(dir.path(), 8, "0.4");
    let m = manifest(pairs.parent().unwrap());
    let beta: f64 = m.get("config.beta").unwrap().parse().unwrap();
    assert!((ternary_entropy(beta) - 0.4).abs() < 1e-9);
    assert!((beta - 0.0625).abs() < 1e-3, "{beta}");
    assert_eq!(m.section("changes").count(), 8);

    let again = dir.path().join("stego2");
    ok(&["embed", "--covers", s(&dir.path().join("covers")), "--out", s(&again), "--payload-bpnzac", "0.4", "--seed", "5"]);
    assert_eq!(manifest(&again).fingerprint(), m.fingerprint());
}

#[test]
fn zero_payload_copies_covers() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = PairedDataset::read(dataset(dir.path(), 4, "0")).unwrap();
    for e in &pairs.entries {
        assert_eq!(std::fs::read(&e.cover).unwrap(), std::fs::read(&e.stego).unwrap());
    }
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let pairs = dataset(root, 16, "0.8");
    let p = s(&pairs);
    let run = root.join("run");
    ok(&["train", "--pairs", p, "--out", s(&run), "--iters", "6", "--batch-pairs", "2", "--checkpoint-every", "2"]);
    let ckpts: Vec<PathBuf> = (1..=3).map(|k| run.join(format!("ckpt_{:07}.stgn", 2 * k))).collect();
    assert!(ckpts.iter().all(|c| c.exists()));
    let log = std::fs::read_to_string(run.join("log.csv")).unwrap();
    assert!(log.starts_with("# scale=") && log.lines().count() == 5, "{log}");

    // Same manifest inputs, same outputs.
    let rerun = root.join("rerun");
    ok(&["train", "--pairs", p, "--out", s(&rerun), "--iters", "6", "--batch-pairs", "2", "--checkpoint-every", "2"]);
    assert_eq!(manifest(&run).fingerprint(), manifest(&rerun).fingerprint());

    let c: Vec<&str> = ckpts.iter().map(|c| s(c)).collect();
    let eval = root.join("eval");
    let report = ok(&["eval", "--pairs", p, "--split", "val", "--out", s(&eval), "--checkpoints", c[0], c[1], c[2]]);
    assert!(report.contains("ensemble of 3") && report.contains("stego source"));
    let errors = std::fs::read_to_string(eval.join("errors.csv")).unwrap();
    assert_eq!(errors.lines().count(), 5);
    assert!(errors.lines().last().unwrap().starts_with("ensemble,,"));
    let curve = std::fs::read_to_string(eval.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().map(|l| l.split(',').next().unwrap()).collect::<Vec<_>>(), ["iteration", "2", "4", "6"]);

    for split in ["train", "val"] {
        let out = root.join(format!("feat_{split}"));
        ok(&["features", "--pairs", p, "--split", split, "--out", s(&out), "--gfr", "--checkpoints", c[0], c[1], c[2]]);
        let f = FeatureMatrix::read(out.join("cnn_2.stgf")).unwrap();
        assert_eq!(f.dim, 160);
        assert_eq!(FeatureMatrix::read(out.join("gfr.stgf")).unwrap().dim, 14_400);
    }
    let (fused, feat_train, feat_val) = (root.join("fused"), root.join("feat_train"), root.join("feat_val"));
    let args = [
        "fuse", "--train", s(&feat_train), "--test", s(&feat_val), "--out", s(&fused),
        "--models", "3", "--learners", "5", "--d-sub", "20",
    ];
    ok(&args);
    let csv = std::fs::read_to_string(fused.join("predictions.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "sample,P0,P1,P2,P3,P4,P5,P6,fused,label");
    assert_eq!(csv.lines().count(), 1 + 8);
    let first = manifest(&fused);
    ok(&args);
    assert_eq!(manifest(&fused).fingerprint(), first.fingerprint());
}

#[test]
fn frozen_variant_keeps_dct_kernels() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dataset(dir.path(), 8, "0.8");
    let run = dir.path().join("run");
    ok(&["train", "--pairs", s(&pairs), "--out", s(&run), "--variant", "4", "--iters", "3", "--batch-pairs", "2", "--seed", "2"]);
    let (trained, meta) =
        NetGraph::from_checkpoint_file(run.join("ckpt_0000003.stgn"), 32, 32, TluConfig::default()).unwrap();
    assert_eq!(meta.variant, Variant::FrozenDct);
    let fresh =
        NetGraph::build(&NetConfig { variant: Variant::FrozenDct, seed: 2, ..NetConfig::default() }, 32, 32).unwrap();
    assert_eq!(trained.dct_kernels(), fresh.dct_kernels());
    assert_ne!(trained, fresh);
}

#[test]
fn bad_arguments_fail() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!steglab(&["train", "--pairs", s(&dir.path().join("missing.txt")), "--out", s(dir.path())]).status.success());
    let pairs = dataset(dir.path(), 4, "0.4");
    let out = steglab(&["train", "--pairs", s(&pairs), "--out", s(&dir.path().join("r")), "--variant", "9"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("variant"));
    assert!(!steglab(&["embed", "--covers", s(dir.path()), "--out", s(dir.path()), "--payload-bpnzac", "2.0"]).status.success());
}
