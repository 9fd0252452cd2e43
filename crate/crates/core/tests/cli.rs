mod common;

use std::path::Path;
use std::process::Command;

use cforge::compress::CompressionPlan;
use cforge::orchestrator::RunConfig;

fn cforge() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cforge"));
    c.env("RUST_LOG", "warn").env_remove("CFORGE_SEED");
    c
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let cfg = RunConfig {
        episodes: 4,
        warmup: 2,
        checkpoint_every: 2,
        ga: cforge::orchestrator::GaConfig {
            population: 2,
            ..Default::default()
        },
        ..common::fixture_config()
    };
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn compress_then_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("run");
    run_ok(cforge().args(["--threads", "1", "compress", "--config"]).arg(&cfg).arg("--out").arg(&out));
    for f in ["report.json", "curve.csv", "best_plan.json", "checkpoints/final", "checkpoints/episode_00002"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let plan = CompressionPlan::load(out.join("best_plan.json")).unwrap();
    assert_eq!(plan.len(), 6);

    let metrics = run_ok(cforge().args(["evaluate", "--config"]).arg(&cfg).arg("--plan").arg(out.join("best_plan.json")));
    let json: serde_json::Value = serde_json::from_str(&metrics).unwrap();
    assert_eq!(json["layers"].as_array().unwrap().len(), 6);
    assert_eq!(json["samples"], 1000);
}

#[test]
fn seed_override_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let report = |seed: &str, name: &str| {
        let out = tmp.path().join(name);
        run_ok(
            cforge()
                .env("CFORGE_SEED", seed)
                .args(["--threads", "1", "compress", "--config"])
                .arg(&cfg)
                .arg("--out")
                .arg(&out),
        );
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        v
    };
    let a = report("7", "a");
    let b = report("7", "b");
    assert_eq!(a["seed"], 7);
    assert_eq!(a["records"], b["records"]);
    let bad = cforge()
        .env("CFORGE_SEED", "seven")
        .args(["compress", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("c"))
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn ga_writes_both_searchers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("ga");
    run_ok(cforge().args(["ga", "--config"]).arg(&cfg).arg("--out").arg(&out));
    for f in ["ga_report.json", "ga_curve.csv", "ga_best_plan.json", "random_report.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}

#[test]
fn energy_report_and_sweep() {
    let model = common::fixture_dir().join("model");
    let text = run_ok(cforge().arg("energy-report").arg("--model").arg(&model));
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["layers"].as_array().unwrap().len(), 6);

    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    run_ok(
        cforge()
            .args(["sweep", "--experiment", "uniform-vs-mixed", "--samples", "3", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(tmp.path()),
    );
    assert!(tmp.path().join("uniform_vs_mixed.json").exists());
}

#[test]
fn missing_paths_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cforge().args(["compress", "--out"]).arg(tmp.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("paths.model"));
}
