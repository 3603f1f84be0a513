//! Subcommand implementations. Each returns the process exit code:
//! `0` success, `2` training aborted, `3` evaluation gated beyond the
//! reliability threshold. Usage errors (bad config, missing files) raise
//! errors and exit `1`.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};

use manot::ctransform::{self, InnerSolverConfig};
use manot::embedding::{self, LandmarkSet};
use manot::eval::{self, SweepRow, TransportMap};
use manot::geometry::{exp_map, log_map_robust, ManifoldKind, ManifoldPoint};
use manot::io;
use manot::potential::PotentialModel;
use manot::rcpm::{self, RcpmModel};
use manot::rng;
use manot::semidual::{self, TrainReport};

use crate::config::{ExperimentConfig, Method, ModelConfig, SelectionConfig, SweepConfig};
use crate::util::{self, OutputTracker};

const MODEL_FILE: &str = "model.json";
const TRAIN_LOG_FILE: &str = "train_log.csv";
const EVAL_JSON_FILE: &str = "eval_report.json";
const EVAL_CSV_FILE: &str = "eval_report.csv";
const TRANSPORTED_FILE: &str = "transported.csv";
const RESIDUALS_FILE: &str = "residuals.csv";
const DIAGNOSTICS_FILE: &str = "embedding_diagnostics.csv";
const SWEEP_FILE: &str = "sweep.csv";
const QUANT_TABLE_FILE: &str = "quantization.csv";
const QUANT_SLOPE_FILE: &str = "slope.json";

const POOL_TAG: u64 = 0xc1_01;
const POINTS_TAG: u64 = 0xc1_02;
const VALIDATION_TAG: u64 = 0xc1_04;

fn config_snapshot(config: &ExperimentConfig) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(config)?)
}

fn landmarks_for(manifold: ManifoldKind, model: &ModelConfig, seed: u64) -> Result<LandmarkSet> {
    Ok(match model.selection {
        SelectionConfig::Fps => {
            embedding::select_landmarks_fps(manifold, model.landmarks, seed, None)?
        }
        SelectionConfig::Random => embedding::select_landmarks_rnd(manifold, model.landmarks, seed)?,
    })
}

fn train_log_bytes(report: &TrainReport) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    report.write_csv(&mut bytes)?;
    Ok(bytes)
}

fn rnot_model_bytes(model: &PotentialModel) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    model.save_checkpoint(&mut bytes)?;
    Ok(bytes)
}

fn rcpm_model_bytes(model: &RcpmModel) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    model.save(&mut bytes)?;
    Ok(bytes)
}

/// Trains the configured model; writes the checkpoint, the per-step
/// training log, and the manifest. Intermediate checkpoints land on the
/// same file atomically. Exit 2 when training aborted (outputs are still
/// written).
pub fn train(config: &ExperimentConfig, out: &Path, threads: usize) -> Result<i32> {
    let manifold = config.manifold;
    let model_cfg = config.model.clone().unwrap_or_default();
    let train_cfg = config.train.clone().unwrap_or_default();
    train_cfg.validate().context("invalid [train] section")?;
    let source = config.source.to_spec(manifold)?;
    let target = config.target.to_spec(manifold)?;
    let mut tracker = OutputTracker::new(out)?;
    let checkpoint_path = tracker.path_of(MODEL_FILE);

    let started = Instant::now();
    let (model_bytes, report) = match model_cfg.method {
        Method::Rnot => {
            let landmarks = landmarks_for(manifold, &model_cfg, train_cfg.seed)?;
            let init = semidual::init_model(
                landmarks,
                model_cfg.hidden.clone(),
                model_cfg.activation,
                train_cfg.seed,
            )?;
            let (model, mut report) =
                semidual::train(&source, &target, init, &train_cfg, |_, snapshot| {
                    let mut bytes = Vec::new();
                    snapshot.save_checkpoint(&mut bytes)?;
                    util::write_atomic(&checkpoint_path, &bytes).map_err(|e| {
                        manot::error::Error::Malformed(format!("checkpoint write failed: {e}"))
                    })
                })?;
            report.checkpoint_path = Some(MODEL_FILE.to_string());
            (rnot_model_bytes(&model)?, report)
        }
        Method::Rcpm => {
            let (model, mut report) = rcpm::rcpm_train(
                &source,
                &target,
                manifold,
                model_cfg.m,
                model_cfg.gamma,
                &train_cfg,
            )?;
            report.checkpoint_path = Some(MODEL_FILE.to_string());
            (rcpm_model_bytes(&model)?, report)
        }
    };
    tracker.record_time("train", started.elapsed());

    tracker.write(MODEL_FILE, &model_bytes)?;
    tracker.write(TRAIN_LOG_FILE, &train_log_bytes(&report)?)?;
    let aborted = report.aborted.clone();
    tracker.finish("train", train_cfg.seed, threads, config_snapshot(config)?)?;

    if let Some(reason) = aborted {
        eprintln!("training aborted: {reason}");
        return Ok(2);
    }
    println!(
        "trained {} for {} steps -> {}",
        model_cfg.method,
        report.records.len(),
        out.join(MODEL_FILE).display()
    );
    Ok(0)
}

/// A checkpoint of either model family, detected from its JSON shape.
pub enum LoadedModel {
    Rnot(PotentialModel),
    Rcpm(RcpmModel),
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("malformed checkpoint {}", path.display()))?;
    if value.get("network").is_some() {
        Ok(LoadedModel::Rnot(PotentialModel::load_checkpoint(text.as_bytes())?))
    } else if value.get("sites").is_some() {
        Ok(LoadedModel::Rcpm(RcpmModel::load(text.as_bytes())?))
    } else {
        bail!("checkpoint {} is neither a network nor a site model", path.display())
    }
}

/// Transport-quality solves use the evaluation solver, which runs to a
/// residual tolerance instead of the training iteration budget.
fn eval_solver(config: &ExperimentConfig) -> InnerSolverConfig {
    config.eval.clone().unwrap_or_default().solver
}

/// Evaluates a trained checkpoint; writes the report as JSON and CSV plus
/// the manifest. Exit 3 when more than a fifth of the points were gated
/// (the report is still written).
pub fn eval(config: &ExperimentConfig, checkpoint: &Path, out: &Path, threads: usize) -> Result<i32> {
    let manifold = config.manifold;
    let eval_cfg = config.eval.clone().unwrap_or_default();
    eval_cfg.validate().context("invalid [eval] section")?;
    let source = config.source.to_spec(manifold)?;
    let target = config.target.to_spec(manifold)?;
    let model = load_model(checkpoint)?;
    let mut tracker = OutputTracker::new(out)?;

    let pool = target.sample_batch(
        manifold,
        eval_cfg.n_samples,
        &mut rng::derive(eval_cfg.seed, &[POOL_TAG]),
    )?;
    let report = {
        let map = match &model {
            LoadedModel::Rnot(m) => {
                if m.manifold() != manifold {
                    bail!("checkpoint manifold {} does not match config {manifold}", m.manifold());
                }
                TransportMap::Conjugate { potential: m, pool: &pool, solver: eval_cfg.solver.clone() }
            }
            LoadedModel::Rcpm(m) => {
                if m.manifold != manifold {
                    bail!("checkpoint manifold {} does not match config {manifold}", m.manifold);
                }
                TransportMap::Explicit(m)
            }
        };
        tracker.time("eval", || Ok(eval::evaluate(&map, &source, &target, &eval_cfg)?))?
    };

    tracker.write(EVAL_JSON_FILE, &serde_json::to_vec_pretty(&report)?)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    tracker.write(EVAL_CSV_FILE, &csv)?;
    tracker.finish("eval", eval_cfg.seed, threads, config_snapshot(config)?)?;

    println!(
        "kl {:.4} +- {:.4}, ess {:.3}, gated {:.1}%",
        report.kl_mean,
        report.kl_ci,
        report.ess_mean,
        100.0 * report.gated_fraction
    );
    if report.unreliable() {
        eprintln!(
            "warning: {:.1}% of points gated; KL and ESS are unreliable",
            100.0 * report.gated_fraction
        );
        return Ok(3);
    }
    Ok(0)
}

/// Geodesic interpolation `exp_x(t log_x(y))`; exact endpoints at 0 and 1.
fn interpolate(x: &ManifoldPoint, y: &ManifoldPoint, t: f64) -> Result<ManifoldPoint> {
    if t == 0.0 {
        return Ok(x.clone());
    }
    if t == 1.0 {
        return Ok(y.clone());
    }
    Ok(exp_map(&log_map_robust(x, y)?.scale(t))?)
}

/// Pushes points through the transport map, interpolated by `t`; writes the
/// transported points, per-point inner residuals, and the manifest.
pub fn transport(
    config: &ExperimentConfig,
    checkpoint: &Path,
    points_file: Option<&Path>,
    t_flag: Option<f64>,
    out: &Path,
    threads: usize,
) -> Result<i32> {
    let manifold = config.manifold;
    let transport_cfg = config.transport.clone().unwrap_or_default();
    let t = t_flag.unwrap_or(transport_cfg.t);
    if !(0.0..=1.0).contains(&t) {
        bail!("interpolation parameter t = {t} is outside [0, 1]");
    }
    let seed = config.effective_seed();
    let model = load_model(checkpoint)?;
    let mut tracker = OutputTracker::new(out)?;

    let points = match points_file {
        Some(path) => io::read_points_file(path, manifold)
            .with_context(|| format!("cannot read points {}", path.display()))?,
        None => {
            let source = config.source.to_spec(manifold)?;
            source.sample_batch(
                manifold,
                transport_cfg.n_points,
                &mut rng::derive(seed, &[POINTS_TAG]),
            )?
        }
    };
    if points.is_empty() {
        bail!("no input points to transport");
    }

    let solver = eval_solver(config);
    let pool = match &model {
        LoadedModel::Rnot(_) => {
            let target = config.target.to_spec(manifold)?;
            target.sample_batch(manifold, 1024, &mut rng::derive(seed, &[POOL_TAG]))?
        }
        LoadedModel::Rcpm(_) => Vec::new(),
    };

    let mut transported = Vec::with_capacity(points.len());
    let mut residuals = Vec::with_capacity(points.len());
    tracker.time("transport", || {
        for x in &points {
            let (y, residual) = match &model {
                LoadedModel::Rnot(m) => {
                    if m.manifold() != manifold {
                        bail!("checkpoint manifold {} does not match config {manifold}", m.manifold());
                    }
                    let solved = ctransform::inner_solve(m, x, &pool, &solver)?;
                    (solved.y, solved.residual)
                }
                LoadedModel::Rcpm(m) => {
                    if m.manifold != manifold {
                        bail!("checkpoint manifold {} does not match config {manifold}", m.manifold);
                    }
                    (m.transport(x)?, 0.0)
                }
            };
            transported.push(interpolate(x, &y, t)?);
            residuals.push(residual);
        }
        Ok(())
    })?;

    let mut points_csv = Vec::new();
    io::write_points_csv(&mut points_csv, &transported)?;
    tracker.write(TRANSPORTED_FILE, &points_csv)?;
    let mut residuals_csv = String::new();
    for r in &residuals {
        writeln!(residuals_csv, "{r:.16e}").unwrap();
    }
    tracker.write(RESIDUALS_FILE, residuals_csv.as_bytes())?;
    tracker.finish("transport", seed, threads, config_snapshot(config)?)?;

    println!("transported {} points at t = {t}", transported.len());
    Ok(0)
}

/// Embedding diagnostics over a landmark-count schedule, for both random
/// and farthest-point selection: minimum pairwise feature separation,
/// near-collision fraction, and covering radius on a validation sample.
pub fn diagnose_embedding(config: &ExperimentConfig, out: &Path, threads: usize) -> Result<i32> {
    let manifold = config.manifold;
    let diag_cfg = config.diagnose.clone().unwrap_or_default();
    if diag_cfg.schedule.is_empty() {
        bail!("[diagnose] schedule is empty");
    }
    if diag_cfg.schedule.windows(2).any(|w| w[0] >= w[1]) {
        bail!("[diagnose] schedule must be strictly increasing");
    }
    let mut tracker = OutputTracker::new(out)?;

    let mut validation_rng = rng::derive(diag_cfg.seed, &[VALIDATION_TAG]);
    let validation: Vec<ManifoldPoint> = (0..diag_cfg.n_validation)
        .map(|_| manot::geometry::sample_uniform(manifold, &mut validation_rng))
        .collect();
    let max_m = *diag_cfg.schedule.last().unwrap();

    let mut csv = String::from("selection,m,min_separation,near_collision_fraction,covering_radius\n");
    tracker.time("diagnose", || {
        for selection in [SelectionConfig::Random, SelectionConfig::Fps] {
            let full = match selection {
                SelectionConfig::Fps => {
                    embedding::select_landmarks_fps(manifold, max_m, diag_cfg.seed, None)?
                }
                SelectionConfig::Random => {
                    embedding::select_landmarks_rnd(manifold, max_m, diag_cfg.seed)?
                }
            };
            for &m in &diag_cfg.schedule {
                let stats = embedding::diagnose(
                    &full.prefix(m),
                    &validation,
                    diag_cfg.eps,
                    diag_cfg.n_pairs,
                    diag_cfg.seed,
                )?;
                let name = match selection {
                    SelectionConfig::Fps => "fps",
                    SelectionConfig::Random => "random",
                };
                writeln!(
                    csv,
                    "{name},{m},{:.16e},{:.16e},{:.16e}",
                    stats.min_separation, stats.near_collision_fraction, stats.covering_radius
                )
                .unwrap();
            }
        }
        Ok(())
    })?;

    tracker.write(DIAGNOSTICS_FILE, csv.as_bytes())?;
    tracker.finish("diagnose-embedding", diag_cfg.seed, threads, config_snapshot(config)?)?;
    println!("diagnosed {} landmark counts", diag_cfg.schedule.len());
    Ok(0)
}

fn manifold_with_dim(family: ManifoldKind, dim: usize) -> ManifoldKind {
    match family {
        ManifoldKind::Sphere { .. } => ManifoldKind::Sphere { dim },
        ManifoldKind::Torus { .. } => ManifoldKind::Torus { dim },
    }
}

fn cell_done(rows: &[SweepRow], p: usize, method: &str, seed: u64) -> bool {
    rows.iter().any(|r| r.p == p && r.method == method && r.seed == seed && r.kl.is_finite())
}

/// One sweep cell: train on the given manifold dimension and evaluate.
fn run_sweep_cell(
    config: &ExperimentConfig,
    sweep_cfg: &SweepConfig,
    p: usize,
    method: Method,
    seed: u64,
) -> Result<SweepRow> {
    let manifold = manifold_with_dim(config.manifold, p);
    let source = config.source.to_spec_for(manifold)?;
    let target = config.target.to_spec_for(manifold)?;
    let model_cfg = config.model.clone().unwrap_or_default();
    let mut train_cfg = config.train.clone().unwrap_or_default();
    train_cfg.seed = seed;
    train_cfg.checkpoint_every = 0;
    let mut eval_cfg = config.eval.clone().unwrap_or_default();
    eval_cfg.seed = seed;

    let started = Instant::now();
    let gamma;
    let report = match method {
        Method::Rnot => {
            gamma = 0.0;
            let landmarks = landmarks_for(manifold, &model_cfg, seed)?;
            let init = semidual::init_model(
                landmarks,
                model_cfg.hidden.clone(),
                model_cfg.activation,
                seed,
            )?;
            let (model, report) = semidual::train(&source, &target, init, &train_cfg, |_, _| Ok(()))?;
            if let Some(reason) = report.aborted {
                bail!("training aborted: {reason}");
            }
            let pool = target.sample_batch(
                manifold,
                eval_cfg.n_samples,
                &mut rng::derive(seed, &[POOL_TAG]),
            )?;
            let map = TransportMap::Conjugate {
                potential: &model,
                pool: &pool,
                solver: eval_cfg.solver.clone(),
            };
            eval::evaluate(&map, &source, &target, &eval_cfg)?
        }
        Method::Rcpm => {
            gamma = sweep_cfg.gamma;
            let (model, report) =
                rcpm::rcpm_train(&source, &target, manifold, model_cfg.m, gamma, &train_cfg)?;
            if let Some(reason) = report.aborted {
                bail!("training aborted: {reason}");
            }
            let map = TransportMap::Explicit(&model);
            eval::evaluate(&map, &source, &target, &eval_cfg)?
        }
    };

    Ok(SweepRow {
        p,
        method: method.to_string(),
        gamma,
        seed,
        kl: report.kl_mean,
        ess: report.ess_mean,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Trains and evaluates every (dimension, method, seed) cell. Failed cells
/// produce NaN rows and a warning; the sweep still exits 0. With `resume`,
/// cells already present with finite KL in the existing table are skipped.
pub fn sweep(config: &ExperimentConfig, out: &Path, threads: usize, resume: bool) -> Result<i32> {
    let sweep_cfg = config.sweep.clone().unwrap_or_default();
    if sweep_cfg.dims.is_empty() || sweep_cfg.seeds.is_empty() || sweep_cfg.methods.is_empty() {
        bail!("[sweep] needs nonempty dims, seeds, and methods");
    }
    let mut tracker = OutputTracker::new(out)?;
    let sweep_path = tracker.path_of(SWEEP_FILE);

    let mut rows: Vec<SweepRow> = Vec::new();
    if resume && sweep_path.exists() {
        let file = std::fs::File::open(&sweep_path)?;
        rows = eval::read_sweep_csv(std::io::BufReader::new(file))
            .context("cannot resume: existing sweep table is malformed")?;
        // Failed (NaN) cells are retried.
        rows.retain(|r| r.kl.is_finite());
        eprintln!("resuming: {} completed cells found", rows.len());
    }

    let mut warnings = 0usize;
    let mut skipped = 0usize;
    for &p in &sweep_cfg.dims {
        for &method in &sweep_cfg.methods {
            for &seed in &sweep_cfg.seeds {
                if cell_done(&rows, p, &method.to_string(), seed) {
                    skipped += 1;
                    continue;
                }
                match run_sweep_cell(config, &sweep_cfg, p, method, seed) {
                    Ok(row) => rows.push(row),
                    Err(err) => {
                        warnings += 1;
                        eprintln!("warning: cell p={p} method={method} seed={seed} failed: {err:#}");
                        rows.push(SweepRow {
                            p,
                            method: method.to_string(),
                            gamma: match method {
                                Method::Rnot => 0.0,
                                Method::Rcpm => sweep_cfg.gamma,
                            },
                            seed,
                            kl: f64::NAN,
                            ess: f64::NAN,
                            seconds: f64::NAN,
                        });
                    }
                }
                // Rewrite after every cell so an interrupted sweep resumes.
                let mut csv = Vec::new();
                eval::write_sweep_csv(&rows, &mut csv)?;
                tracker.write(SWEEP_FILE, &csv)?;
            }
        }
    }

    let seed = *sweep_cfg.seeds.first().unwrap();
    tracker.finish("sweep", seed, threads, config_snapshot(config)?)?;
    if skipped > 0 {
        println!("skipped {skipped} completed cells");
    }
    if warnings > 0 {
        println!("sweep finished with {warnings} warnings ({} rows)", rows.len());
    } else {
        println!("sweep finished ({} rows)", rows.len());
    }
    Ok(0)
}

#[derive(serde::Serialize)]
struct SlopeReport {
    slope: f64,
    stderr: f64,
    ci95: f64,
    intercept: f64,
}

/// Estimates the target measure's quantization error over a site-count
/// grid and fits the log-log decay slope.
pub fn quantize(config: &ExperimentConfig, out: &Path, threads: usize) -> Result<i32> {
    let manifold = config.manifold;
    let quant_cfg = config.quantize.clone().unwrap_or_default();
    let target = config.target.to_spec(manifold)?;
    let mut tracker = OutputTracker::new(out)?;

    let (rows, fit) = tracker.time("quantize", || {
        Ok(rcpm::quantization_table(
            &target,
            manifold,
            &quant_cfg.m_grid,
            quant_cfg.n_samples,
            quant_cfg.restarts,
            quant_cfg.seed,
        )?)
    })?;

    let mut csv = String::from("m,distortion\n");
    for row in &rows {
        writeln!(csv, "{},{:.16e}", row.m, row.distortion).unwrap();
    }
    tracker.write(QUANT_TABLE_FILE, csv.as_bytes())?;
    let slope = SlopeReport {
        slope: fit.slope,
        stderr: fit.stderr,
        ci95: 1.96 * fit.stderr,
        intercept: fit.intercept,
    };
    tracker.write(QUANT_SLOPE_FILE, &serde_json::to_vec_pretty(&slope)?)?;
    tracker.finish("quantize", quant_cfg.seed, threads, config_snapshot(config)?)?;

    println!("quantized {} site counts; slope {:.3} +- {:.3}", rows.len(), fit.slope, 1.96 * fit.stderr);
    Ok(0)
}
