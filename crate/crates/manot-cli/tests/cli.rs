//! End-to-end tests of the `manot` binary: exit codes, output files,
//! manifest hashes, and run-to-run determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn manot() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_manot"));
    cmd.env_remove("MANOT_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    manot().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const TORUS_RNOT: &str = r#"
schema_version = 1
manifold = { kind = "torus", dim = 2 }

[source]
kind = "uniform"

[target]
kind = "wrapped_normal"
sigma = 0.5

[model]
method = "rnot"
landmarks = 8
hidden = [16]

[train]
steps = 15
batch_size = 16
seed = 7

[eval]
n_samples = 64
n_batches = 4
residual_gate = 1e9
seed = 7

[transport]
n_points = 32

[diagnose]
schedule = [4, 8]
n_validation = 200
n_pairs = 500
seed = 7
"#;

fn read_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
}

/// Drops the wall-clock column so logs can be compared across runs.
fn no_ms(lines: &[String]) -> Vec<String> {
    lines
        .iter()
        .map(|l| l.rsplit_once(',').map(|(head, _)| head.to_owned()).unwrap_or_else(|| l.clone()))
        .collect()
}

#[test]
fn train_writes_outputs_with_matching_hashes_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "exp.toml", TORUS_RNOT);
    let out1 = tmp.path().join("run1");
    let out2 = tmp.path().join("run2");

    let r1 = run(&["train", "--config", config.to_str().unwrap(), "--out", out1.to_str().unwrap()]);
    assert_eq!(code(&r1), 0, "stderr: {}", stderr(&r1));
    for name in ["model.json", "train_log.csv", "manifest.json"] {
        assert!(out1.join(name).exists(), "{name} missing");
        assert!(!out1.join(format!("{name}.partial")).exists(), "{name}.partial left behind");
    }

    // The manifest records each output's sha256.
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out1.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["schema_version"], 1);
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 7);
    let outputs = manifest["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 2);
    for entry in outputs {
        let bytes = std::fs::read(out1.join(entry["path"].as_str().unwrap())).unwrap();
        let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(entry["sha256"].as_str().unwrap(), digest, "hash mismatch for {}", entry["path"]);
        assert_eq!(entry["bytes"].as_u64().unwrap(), bytes.len() as u64);
    }

    // The training log has one row per step.
    let log = read_lines(&out1.join("train_log.csv"));
    assert_eq!(log[0], "step,loss,mean_residual,mean_iters,ms");
    assert_eq!(log.len(), 16);

    // A rerun reproduces the checkpoint bit for bit and the log up to timing.
    let r2 = run(&["train", "--config", config.to_str().unwrap(), "--out", out2.to_str().unwrap()]);
    assert_eq!(code(&r2), 0);
    assert_eq!(
        std::fs::read(out1.join("model.json")).unwrap(),
        std::fs::read(out2.join("model.json")).unwrap(),
        "checkpoint differs between identical runs"
    );
    assert_eq!(
        no_ms(&read_lines(&out1.join("train_log.csv"))),
        no_ms(&read_lines(&out2.join("train_log.csv"))),
    );
}

#[test]
fn eval_reports_are_deterministic_and_exit_zero_under_relaxed_gate() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "exp.toml", TORUS_RNOT);
    let train_out = tmp.path().join("train");
    let r = run(&["train", "--config", config.to_str().unwrap(), "--out", train_out.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    let checkpoint = train_out.join("model.json");

    let eval1 = tmp.path().join("eval1");
    let eval2 = tmp.path().join("eval2");
    for out in [&eval1, &eval2] {
        let r = run(&[
            "eval",
            "--config",
            config.to_str().unwrap(),
            "--checkpoint",
            checkpoint.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    }
    assert_eq!(
        std::fs::read(eval1.join("eval_report.json")).unwrap(),
        std::fs::read(eval2.join("eval_report.json")).unwrap(),
        "evaluation is not deterministic"
    );

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval1.join("eval_report.json")).unwrap()).unwrap();
    assert!(report["kl_mean"].as_f64().unwrap().is_finite());
    assert!(report["gated_fraction"].as_f64().unwrap() <= 0.2);
    let csv = read_lines(&eval1.join("eval_report.csv"));
    assert_eq!(
        csv[0],
        "kl_mean,kl_ci,ess_mean,ess_ci,z_hat,mean_cost,monge_gap_rel,gated_fraction,mean_residual"
    );
    assert_eq!(csv.len(), 2);
}

#[test]
fn transport_endpoints_validation_and_identity() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "exp.toml", TORUS_RNOT);
    let train_out = tmp.path().join("train");
    let r = run(&["train", "--config", config.to_str().unwrap(), "--out", train_out.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    let checkpoint = train_out.join("model.json");
    let base = |out: &Path| {
        vec![
            "transport".to_owned(),
            "--config".to_owned(),
            config.to_str().unwrap().to_owned(),
            "--checkpoint".to_owned(),
            checkpoint.to_str().unwrap().to_owned(),
            "--out".to_owned(),
            out.to_str().unwrap().to_owned(),
        ]
    };

    // Full map: outputs exist and differ from a t=0 run of the same seed.
    let full = tmp.path().join("t1");
    let r = manot().args(base(&full)).args(["--t", "1"]).output().unwrap();
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    let moved = std::fs::read(full.join("transported.csv")).unwrap();
    assert_eq!(read_lines(&full.join("residuals.csv")).len(), 32);

    let id = tmp.path().join("t0");
    let r = manot().args(base(&id)).args(["--t", "0"]).output().unwrap();
    assert_eq!(code(&r), 0);
    let kept = std::fs::read(id.join("transported.csv")).unwrap();
    assert_ne!(moved, kept, "the trained map should move sampled points");

    // Feeding any output back at t = 0 reproduces it bit for bit.
    let echo = tmp.path().join("echo");
    let r = manot()
        .args(base(&echo))
        .args(["--points", full.join("transported.csv").to_str().unwrap(), "--t", "0"])
        .output()
        .unwrap();
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    assert_eq!(moved, std::fs::read(echo.join("transported.csv")).unwrap());

    // t outside [0, 1] and a missing checkpoint are usage errors.
    let bad = tmp.path().join("bad");
    let r = manot().args(base(&bad)).args(["--t", "1.5"]).output().unwrap();
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("outside [0, 1]"), "stderr: {}", stderr(&r));
    let r = run(&[
        "transport",
        "--config",
        config.to_str().unwrap(),
        "--checkpoint",
        tmp.path().join("nope.json").to_str().unwrap(),
        "--out",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 1);
}

#[test]
fn config_errors_name_the_problem() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");

    let bad_key = write_config(tmp.path(), "bad_key.toml", &TORUS_RNOT.replace("steps = 15", "stepz = 15"));
    let r = run(&["train", "--config", bad_key.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("stepz"), "stderr should name the unknown key: {}", stderr(&r));

    let bad_version =
        write_config(tmp.path(), "bad_version.toml", &TORUS_RNOT.replace("schema_version = 1", "schema_version = 99"));
    let r = run(&["train", "--config", bad_version.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("99"), "stderr should name the bad version: {}", stderr(&r));

    let r = run(&["train", "--config", tmp.path().join("absent.toml").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&r), 1);
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["no-such-command"])), 1);
    assert_eq!(code(&run(&[])), 1);
}

#[test]
fn diagnose_embedding_emits_one_row_per_selection_and_count() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "exp.toml", TORUS_RNOT);
    let out = tmp.path().join("diag");
    let r = run(&["diagnose-embedding", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    let rows = read_lines(&out.join("embedding_diagnostics.csv"));
    assert_eq!(rows[0], "selection,m,min_separation,near_collision_fraction,covering_radius");
    assert_eq!(rows.len(), 1 + 2 * 2, "two selections times two landmark counts");
    assert!(rows[1].starts_with("random,4,"));
    assert!(rows[4].starts_with("fps,8,"));
}

const SPHERE_RCPM: &str = r#"
schema_version = 1
manifold = { kind = "sphere", dim = 2 }

[source]
kind = "uniform"

[target]
kind = "wrapped_normal"
sigma = 0.4

[model]
method = "rcpm"
m = 6
gamma = 1e-3

[train]
steps = 10
batch_size = 16
seed = 3

[eval]
n_samples = 48
n_batches = 3
seed = 3

[sweep]
dims = [2]
seeds = [1, 2]
methods = ["rcpm"]
gamma = 1e-3

[quantize]
m_grid = [2, 4]
n_samples = 400
restarts = 1
seed = 5
"#;

#[test]
fn rcpm_training_writes_a_site_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "exp.toml", SPHERE_RCPM);
    let out = tmp.path().join("run");
    let r = run(&["train", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    let model: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    assert_eq!(model["sites"].as_array().unwrap().len(), 6);
    assert_eq!(model["alphas"].as_array().unwrap().len(), 6);
    assert_eq!(read_lines(&out.join("train_log.csv")).len(), 11);
}

#[test]
fn sweep_fills_every_cell_and_resume_skips_them() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "exp.toml", SPHERE_RCPM);
    let out = tmp.path().join("sweep");
    let r = run(&["sweep", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    let rows = read_lines(&out.join("sweep.csv"));
    assert_eq!(rows[0], "p,method,gamma,seed,kl,ess,seconds");
    assert_eq!(rows.len(), 3, "one row per (dim, method, seed) cell");
    assert!(rows[1].starts_with("2,rcpm,"));

    let r = run(&["sweep", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--resume"]);
    assert_eq!(code(&r), 0);
    assert!(String::from_utf8_lossy(&r.stdout).contains("skipped 2"), "resume should skip both cells");
    assert_eq!(read_lines(&out.join("sweep.csv")).len(), 3, "resume must not duplicate rows");
}

#[test]
fn quantize_writes_a_decreasing_table_and_a_slope() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "exp.toml", SPHERE_RCPM);
    let out = tmp.path().join("quant");
    let r = run(&["quantize", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));

    let rows = read_lines(&out.join("quantization.csv"));
    assert_eq!(rows[0], "m,distortion");
    let v: Vec<f64> = rows[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(v.len(), 2);
    assert!(v[1] < v[0], "more sites must not quantize worse: {v:?}");

    let slope: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("slope.json")).unwrap()).unwrap();
    assert!(slope["slope"].as_f64().unwrap() < 0.0);
    assert!(slope["ci95"].as_f64().unwrap() >= 0.0);
}

#[test]
fn diverged_training_aborts_with_exit_two_and_keeps_the_log() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        "exp.toml",
        &TORUS_RNOT.replace("batch_size = 16", "batch_size = 8\nouter_lr = 1e200"),
    );
    let out = tmp.path().join("run");
    let r = run(&["train", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&r), 2, "stderr: {}", stderr(&r));
    assert!(stderr(&r).contains("aborted"), "stderr: {}", stderr(&r));
    assert!(out.join("train_log.csv").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn seed_flag_overrides_the_config_seed() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "exp.toml", TORUS_RNOT);
    let out7 = tmp.path().join("seed7");
    let out9 = tmp.path().join("seed9");
    let r = run(&["train", "--config", config.to_str().unwrap(), "--out", out7.to_str().unwrap()]);
    assert_eq!(code(&r), 0);
    let r = run(&[
        "train", "--config", config.to_str().unwrap(), "--out", out9.to_str().unwrap(), "--seed", "9",
    ]);
    assert_eq!(code(&r), 0);
    assert_ne!(
        std::fs::read(out7.join("model.json")).unwrap(),
        std::fs::read(out9.join("model.json")).unwrap(),
        "a different seed must change the run"
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out9.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
}
