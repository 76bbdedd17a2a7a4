use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn stwarp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stwarp"))
        .args(args)
        .env("RUST_LOG", "error")
        .env_remove("STWARP_DATA")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = stwarp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn tree_hashes(root: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let digest = Sha256::digest(fs::read(&p).unwrap());
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), format!("{digest:x}"));
            }
        }
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, seed: &str) {
    ok(&["synth", "--frames", "40", "--width", "32", "--height", "24", "--seed", seed, "--out", s(dir)]);
}

#[test]
fn synth_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    synth(&a, "3");
    synth(&b, "3");
    synth(&c, "4");
    let strip = |mut m: BTreeMap<PathBuf, String>| {
        m.remove(Path::new("manifest.json"));
        m
    };
    let (ha, hb, hc) = (strip(tree_hashes(&a)), strip(tree_hashes(&b)), strip(tree_hashes(&c)));
    assert!(ha.len() > 90);
    assert_eq!(ha, hb);
    assert_ne!(ha, hc);
}

#[test]
fn train_eval_ablate_round_trip() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "1");
    let before = tree_hashes(&data);

    let run = |name: &str| {
        let dir = tmp.path().join(name);
        ok(&[
            "train", "--variant", "st-atte", "--data", s(&data), "--epochs", "2", "--batch-size", "2",
            "--validate-every", "1", "--seed", "5", "--out", s(&dir),
        ]);
        dir
    };
    let (r1, r2) = (run("r1"), run("r2"));
    for d in [&r1, &r2] {
        for f in ["model.ckpt", "train_log.csv", "manifest.json"] {
            assert!(d.join(f).is_file(), "missing {f}");
        }
    }
    assert_eq!(fs::read(r1.join("model.ckpt")).unwrap(), fs::read(r2.join("model.ckpt")).unwrap());
    let log = fs::read_to_string(r1.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(r1.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert!(manifest["artifacts"].as_object().unwrap().contains_key("model.ckpt"));

    let ckpt = r1.join("model.ckpt");
    let report = tmp.path().join("report.json");
    ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--report", s(&report)]);
    let rep: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    let miou = rep["miou"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&miou));
    assert_eq!(rep["per_class_iou"].as_array().unwrap().len(), 3);

    let table = tmp.path().join("framerate.csv");
    ok(&["ablate", "--framerate", "--ckpt", s(&ckpt), "--data", s(&data), "--out", s(&table)]);
    let rows = fs::read_to_string(&table).unwrap();
    assert_eq!(rows.lines().count(), 3, "{rows}");
    assert!(rows.lines().next().unwrap().starts_with("variant,"));

    assert_eq!(before, tree_hashes(&data), "dataset was modified");
}

#[test]
fn register_and_refine_write_outputs() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--frames", "8", "--width", "64", "--height", "48", "--out", s(&data)]);
    let ppm = tmp.path().join("reg.ppm");
    ok(&["register", "--seq", s(&data), "--from", "2", "--to", "4", "--scale", "2", "--out", s(&ppm)]);
    let bytes = fs::read(&ppm).unwrap();
    let header: Vec<&[u8]> = bytes[..16].split(|b| b.is_ascii_whitespace()).take(4).collect();
    assert_eq!(header, [&b"P6"[..], b"32", b"24", b"255"]);
    assert_eq!(bytes.len(), 13 + 32 * 24 * 3);

    let traj = tmp.path().join("refined.txt");
    ok(&["refine-odom", "--seq", s(&data), "--out", s(&traj)]);
    let poses = fs::read_to_string(&traj).unwrap();
    assert_eq!(poses.lines().filter(|l| !l.starts_with('#')).count(), 8);
}

#[test]
fn gradcheck_primitives_exit_zero() {
    let out = ok(&["gradcheck"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("conv2d"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(stwarp(&["eval", "--data", "/nonexistent"]).status.code(), Some(2));
    assert_eq!(stwarp(&["ablate", "--ckpt", "x", "--data", "y"]).status.code(), Some(2));
    assert_eq!(stwarp(&["train", "--variant", "bl", "--data", "/nonexistent/data"]).status.code(), Some(2));
    assert_eq!(stwarp(&["frobnicate"]).status.code(), Some(2));
}
