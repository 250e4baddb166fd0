use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn radtrain(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radtrain"))
        .args(args)
        .env("RADTRAIN_OUT", out_root)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out_root: &Path) -> String {
    let out = radtrain(args, out_root);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthetic data, its split and a small training config in one directory.
struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(pipeline: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        ok(&["synth", "--out", p(&root.join("data")), "--n", "60", "--side", "32", "--seed", "1"], root);
        ok(&["split", "--manifest", p(&root.join("data/manifest.csv")), "--seed", "1", "--out", p(&root.join("splits.csv"))], root);
        let config = format!(r#"{{"dataset": "data", "splits": "splits.csv", "pipeline": {pipeline}}}"#);
        fs::write(root.join("config.json"), config).unwrap();
        Workspace { dir }
    }

    fn small() -> Self {
        Self::new(
            r#"{"sizes": [16, 32], "epochs_per_stage": 1, "batch_size": 10, "seed": 2,
                "model": {"stem_channels": 4, "stage_widths": [4, 8], "blocks_per_stage": 1}}"#,
        )
    }

    fn root(&self) -> &Path {
        self.dir.path()
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        radtrain(args, self.root())
    }

    fn ok(&self, args: &[&str]) -> String {
        ok(args, self.root())
    }
}

fn dir_contents(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_deterministic_and_refuses_to_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&["synth", "--out", p(d), "--n", "30", "--side", "32", "--seed", "4"], tmp.path());
    }
    let files = dir_contents(&a);
    assert_eq!(files.len(), 31);
    assert_eq!(files, dir_contents(&b));

    let again = radtrain(&["synth", "--out", p(&a), "--n", "10", "--side", "32"], tmp.path());
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    ok(&["synth", "--out", p(&a), "--n", "10", "--side", "32", "--force"], tmp.path());
    assert_eq!(dir_contents(&a).len(), 11);
}

#[test]
fn noiseless_zero_prior_synth_is_all_no_finding() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("blank");
    ok(&["synth", "--out", p(&d), "--n", "20", "--side", "32", "--noise", "0", "--priors", "0"], tmp.path());
    let manifest = fs::read_to_string(d.join("manifest.csv")).unwrap();
    let rows: Vec<&str> = manifest.lines().skip(1).collect();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r.ends_with(",No Finding")), "{manifest}");
    let bad = radtrain(&["synth", "--out", p(&tmp.path().join("x")), "--priors", "0.1,0.2"], tmp.path());
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn split_partitions_patients_deterministically() {
    let ws = Workspace::small();
    let manifest = fs::read_to_string(ws.path("data/manifest.csv")).unwrap();
    let patients: std::collections::BTreeSet<&str> =
        manifest.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    let splits = fs::read_to_string(ws.path("splits.csv")).unwrap();
    let assigned: Vec<&str> = splits.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(assigned.len(), patients.len());
    assert_eq!(assigned.iter().copied().collect::<std::collections::BTreeSet<_>>(), patients);

    ws.ok(&["split", "--manifest", p(&ws.path("data/manifest.csv")), "--seed", "1", "--out", p(&ws.path("again.csv"))]);
    assert_eq!(fs::read(ws.path("again.csv")).unwrap(), splits.as_bytes());

    let bad = ws.run(&["split", "--manifest", p(&ws.path("data/manifest.csv")), "--out", "x.csv", "--fractions", "0.5"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn train_eval_and_config_echo() {
    let ws = Workspace::small();
    let stdout = ws.ok(&["train", "--config", p(&ws.path("config.json")), "--out", p(&ws.path("run"))]);
    assert!(stdout.contains("stage 1/2: side 16"), "{stdout}");
    assert!(stdout.contains("stage 2/2: side 32"), "{stdout}");
    for f in ["config.json", "trace.csv", "metrics.json", "report.json", "schedule.svg", "sweep.csv", "model.ckpt"] {
        assert!(ws.path("run").join(f).exists(), "{f}");
    }

    ws.ok(&["eval", "--checkpoint", p(&ws.path("run/model.ckpt"))]);
    assert_eq!(
        fs::read(ws.path("run/metrics.eval.json")).unwrap(),
        fs::read(ws.path("run/metrics.json")).unwrap()
    );

    ws.ok(&["train", "--config", p(&ws.path("run/config.json")), "--out", p(&ws.path("echo"))]);
    assert_eq!(
        fs::read(ws.path("echo/trace.csv")).unwrap(),
        fs::read(ws.path("run/trace.csv")).unwrap()
    );

    let v1 = ws.ok(&["train", "--config", p(&ws.path("config.json")), "--variant", "v1", "--out", p(&ws.path("v1"))]);
    assert!(v1.contains("stage 1/1: side 32, 2 epochs"), "{v1}");

    let report = ws.ok(&["report", p(&ws.path("run")), p(&ws.path("v1/report.json"))]);
    assert_eq!(report.lines().count(), 16);
    assert!(report.lines().next().unwrap().contains("run"));
}

#[test]
fn stop_and_resume_reproduce_the_trace() {
    let ws = Workspace::small();
    let cfg = ws.path("config.json");
    ws.ok(&["train", "--config", p(&cfg), "--out", p(&ws.path("full"))]);
    let stopped = ws.ok(&["train", "--config", p(&cfg), "--out", p(&ws.path("part")), "--stop-after", "5"]);
    assert!(stopped.contains("stopped after step 5"), "{stopped}");
    ws.ok(&["train", "--config", p(&cfg), "--out", p(&ws.path("part")), "--resume", p(&ws.path("part/checkpoint.ckpt"))]);
    assert_eq!(
        fs::read(ws.path("part/trace.csv")).unwrap(),
        fs::read(ws.path("full/trace.csv")).unwrap()
    );
}

#[test]
fn divergence_exits_with_code_two() {
    let ws = Workspace::new(
        r#"{"variant": "V3", "sizes": [16, 32], "epochs_per_stage": 1, "batch_size": 10, "lr": 1e300,
            "model": {"stem_channels": 4, "stage_widths": [4, 8], "blocks_per_stage": 1}}"#,
    );
    let out = ws.run(&["train", "--config", p(&ws.path("config.json")), "--out", p(&ws.path("run"))]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("hint:"), "{stderr}");
}

#[test]
fn invalid_config_exits_with_code_one() {
    let ws = Workspace::small();
    fs::write(ws.path("bad.json"), r#"{"dataset": "data", "splits": "splits.csv", "lr_max": 1}"#).unwrap();
    assert_eq!(ws.run(&["train", "--config", p(&ws.path("bad.json"))]).status.code(), Some(1));
    assert_eq!(ws.run(&["train", "--config", p(&ws.path("missing.json"))]).status.code(), Some(1));
    assert_eq!(ws.run(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn ablate_writes_four_runs_and_the_table() {
    let ws = Workspace::small();
    let stdout = ws.ok(&["ablate", "--config", p(&ws.path("config.json")), "--out", p(&ws.path("ablation"))]);
    for v in ["Proposed", "V1", "V2", "V3"] {
        assert!(ws.path("ablation").join(v).join("metrics.json").exists(), "{v}");
    }
    let table = fs::read_to_string(ws.path("ablation/ablation_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 16);
    assert!(table.starts_with("Pathology,Proposed,V1,V2,V3\n"));
    assert!(stdout.contains("No Finding"));

    let lr = ws.ok(&["lr-find", "--config", p(&ws.path("config.json")), "--out", p(&ws.path("lr"))]);
    assert!(lr.contains("selected lr = "), "{lr}");
    assert!(ws.path("lr/sweep.csv").exists() && ws.path("lr/sweep.svg").exists());
}
