//! End-to-end runs of the `hudn` binary on a tiny world.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[run]
eval_events = 3

[scenario]
side_length = 60.0
n_macro = 1
n_small = 2
n_buildings = 1
grid_resolution = 10.0

[train]
steps = 4
batch = 2
window = 2
k_a = 3
srl_step_cap = 6
srl_lr = 1e-2

[train.model]
hidden = 8
head_hidden = 4
"#;

fn hudn(args: &[&str], cfg: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hudn"))
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out-dir")
        .arg(out)
        .env_remove("HUDN_OUT_DIR")
        .output()
        .unwrap()
}

fn setup() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("out");
    (dir, cfg, out)
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn full_pipeline() {
    let (_dir, cfg, out) = setup();
    ok(&hudn(&["gen-scenario"], &cfg, &out));
    ok(&hudn(&["build-radiomap", "--csv"], &cfg, &out));
    ok(&hudn(&["train-grl"], &cfg, &out));
    ok(&hudn(&["train-srl", "--event", "1"], &cfg, &out));
    ok(&hudn(&["baseline", "msuapc"], &cfg, &out));
    ok(&hudn(&["eval"], &cfg, &out));
    ok(&hudn(&["oracle"], &cfg, &out));
    let rep = hudn(&["report", "--algorithms", "grl,srl,oracle,maramp,juapcmwser"], &cfg, &out);
    ok(&rep);
    for f in [
        "scenario.toml",
        "radiomap.bin",
        "radiomap.csv",
        "grl.ckpt",
        "grl_log.csv",
        "srl/event0001.ckpt",
        "srl/event0001_log.csv",
        "reports/msuapc.csv",
        "reports/grl.csv",
        "reports/oracle.csv",
        "summary.csv",
        "cdf.csv",
        "manifests/gen-scenario.json",
        "manifests/train-grl.json",
        "manifests/report.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let summary = hudn::formats::read_summary(&out.join("summary.csv")).unwrap();
    let names: Vec<_> = summary.iter().map(|r| r.algorithm.as_str()).collect();
    assert_eq!(names, ["grl", "srl", "oracle", "maramp", "juapcmwser"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifests/train-grl.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train-grl");
    assert_eq!(manifest["config"]["train"]["steps"], 4);
    let log = std::fs::read_to_string(out.join("grl_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);
}

#[test]
fn out_dir_from_environment() {
    let (dir, cfg, _) = setup();
    let env_out = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_hudn"))
        .args(["gen-scenario", "--config"])
        .arg(&cfg)
        .env("HUDN_OUT_DIR", &env_out)
        .output()
        .unwrap();
    ok(&o);
    assert!(env_out.join("scenario.toml").is_file());
}

#[test]
fn exit_codes() {
    let (dir, cfg, out) = setup();
    // Missing or invalid config.
    assert_eq!(hudn(&["gen-scenario"], &dir.path().join("none.toml"), &out).status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[scenario]\nn_macros = 1\n").unwrap();
    assert_eq!(hudn(&["gen-scenario"], &bad, &out).status.code(), Some(2));
    let invalid = dir.path().join("invalid.toml");
    std::fs::write(&invalid, format!("{TINY}\n[baseline]\npower_grid_levels = 0\n")).unwrap();
    assert_eq!(hudn(&["gen-scenario"], &invalid, &out).status.code(), Some(2));
    assert_eq!(hudn(&["baseline", "nope"], &cfg, &out).status.code(), Some(2));

    // Missing inputs.
    assert_eq!(hudn(&["build-radiomap"], &cfg, &out).status.code(), Some(3));
    ok(&hudn(&["gen-scenario"], &cfg, &out));
    assert_eq!(hudn(&["eval"], &cfg, &out).status.code(), Some(3));
    ok(&hudn(&["build-radiomap"], &cfg, &out));
    assert_eq!(hudn(&["eval"], &cfg, &out).status.code(), Some(3));

    // Config no longer matches the scenario on disk.
    let moved = dir.path().join("moved.toml");
    std::fs::write(&moved, TINY.replace("n_small = 2", "n_small = 3")).unwrap();
    assert_eq!(hudn(&["baseline", "maramp"], &moved, &out).status.code(), Some(3));

    // Corrupt radio map.
    let map = out.join("radiomap.bin");
    let bytes = std::fs::read(&map).unwrap();
    std::fs::write(&map, &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(hudn(&["baseline", "maramp"], &cfg, &out).status.code(), Some(3));

    // Output directory is a file.
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, "").unwrap();
    assert_eq!(hudn(&["gen-scenario"], &cfg, &blocker.join("sub")).status.code(), Some(5));
}

#[test]
fn oracle_budget_is_a_config_error() {
    let (dir, _, out) = setup();
    let cfg = dir.path().join("big.toml");
    std::fs::write(&cfg, TINY.replace("k_a = 3", "k_a = 20")).unwrap();
    ok(&hudn(&["gen-scenario"], &cfg, &out));
    ok(&hudn(&["build-radiomap"], &cfg, &out));
    assert_eq!(hudn(&["oracle"], &cfg, &out).status.code(), Some(2));
}

#[test]
fn reruns_are_identical() {
    let (dir, cfg, out) = setup();
    let out2 = dir.path().join("out2");
    for o in [&out, &out2] {
        ok(&hudn(&["gen-scenario"], &cfg, o));
        ok(&hudn(&["build-radiomap"], &cfg, o));
        ok(&hudn(&["train-grl"], &cfg, o));
    }
    for f in ["scenario.toml", "radiomap.bin", "grl.ckpt", "grl_log.csv"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(out2.join(f)).unwrap(), "{f}");
    }
}
