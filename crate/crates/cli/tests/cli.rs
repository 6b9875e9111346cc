use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chanformer::config::Config;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_chanformer"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Tiny config written next to the test artifacts.
fn tiny_config(dir: &Path) -> PathBuf {
    let mut cfg = Config::load(&configs_dir().join("toy.toml")).unwrap();
    cfg.scene.n_antennas = 4;
    cfg.scene.n_subcarriers = 8;
    cfg.scene.bandwidth = 1.92e6;
    cfg.scene.frames = 4;
    cfg.adt.delay_taps = 4;
    cfg.model.depth = 1;
    cfg.model.embed_dim = 8;
    cfg.train.total_steps = 4;
    cfg.train.batch_size = 2;
    cfg.eval.past_frames = 3;
    cfg.eval.finetune_steps = 3;
    cfg.eval.calibration_size = 2;
    let path = dir.join("tiny.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    path
}

#[test]
fn shipped_defaults_match_builtin_config() {
    let cfg = Config::load(&configs_dir().join("default.toml")).unwrap();
    assert_eq!(cfg, Config::default());
    Config::load(&configs_dir().join("toy.toml")).unwrap().validate().unwrap();
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["generate"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[model]\nno_such_key = 1\n").unwrap();
    let out = run(&["--config", bad.to_str().unwrap(), "generate", "--out", "x.adtd"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    let truncated = dir.path().join("t.adtd");
    let cfg = tiny_config(dir.path());
    let c = cfg.to_str().unwrap();
    assert_eq!(code(&run(&["--config", c, "generate", "--out", truncated.to_str().unwrap(), "--n", "2"])), 0);
    let bytes = fs::read(&truncated).unwrap();
    fs::write(&truncated, &bytes[..bytes.len() - 3]).unwrap();
    let out = run(&["--config", c, "pretrain", "--dataset", truncated.to_str().unwrap(), "--out", dir.path().join("p").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("payload length mismatch"));

    let out = run(&["--config", c, "finetune", "--checkpoint", "missing.ckpt", "--dataset", "x", "--out", "y"]);
    assert_ne!(code(&out), 0);
    let out = run(&["--config", c, "finetune", "--checkpoint", "a", "--dataset", "b", "--out", "c", "--fractions", "150"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config(d);
    let c = cfg.to_str().unwrap();
    let p = |name: &str| d.join(name).to_str().unwrap().to_owned();

    for (name, seed) in [("train.adtd", "1"), ("test.adtd", "2")] {
        let out = run(&["--config", c, "--seed", seed, "generate", "--out", &p(name), "--n", "6"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let manifest = fs::read_to_string(d.join("train.adtd.manifest.csv")).unwrap();
    assert!(manifest.contains("index,speed"));

    // two deterministic runs agree; --steps 0 writes the initial checkpoint
    let mut hashes = Vec::new();
    for run_dir in ["run-a", "run-b"] {
        let out = run(&["--config", c, "--deterministic", "pretrain", "--dataset", &p("train.adtd"), "--out", &p(run_dir)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        hashes.push(String::from_utf8(out.stdout).unwrap().split_whitespace().next().unwrap().to_owned());
    }
    assert_eq!(hashes[0], hashes[1]);
    let metrics = fs::read_to_string(d.join("run-a/metrics.csv")).unwrap();
    assert!(metrics.contains("# config_hash=") && metrics.contains("step,loss,rho,lr,mode"));
    let out = run(&["--config", c, "pretrain", "--dataset", &p("train.adtd"), "--out", &p("init"), "--steps", "0"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("init/checkpoint-000000.ckpt").exists());

    let out = run(&[
        "--config", c, "finetune", "--checkpoint", &p("run-a/last.ckpt"), "--dataset", &p("train.adtd"),
        "--out", &p("ft"), "--fractions", "0,50", "--modes", "full",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("ft/finetune-full-0.ckpt").exists() && d.join("ft/finetune-full-50.ckpt").exists());

    let out = run(&[
        "--config", c, "eval", "--checkpoint", &p("ft/finetune-full-0.ckpt"), "--checkpoint", &p("ft/finetune-full-50.ckpt"),
        "--dataset", &p("test.adtd"), "--out", &p("report"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(d.join("report.csv")).unwrap();
    assert!(csv.contains("S&H") && csv.contains("full-50%"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    let expected = Config::load(&cfg).unwrap().hash();
    assert_eq!(json["config_hash"], expected.as_str());

    let out = run(&["--config", c, "eval", "--checkpoint", &p("run-a/last.ckpt"), "--dataset", &p("test.adtd"), "--out", &p("r2")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn bench_attn_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let out = run(&["bench-attn", "--frames", "1,2", "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.contains("ssta+routing,2,2049,"));
    assert!(text.lines().any(|l| l.starts_with("dense,1,") && !l.ends_with(',')));
}
