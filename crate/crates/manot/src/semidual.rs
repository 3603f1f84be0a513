//! Stochastic maximization of the Kantorovich semi-dual.
//!
//! The dual objective over prepotentials is
//! `J(psi) = E_mu[psi^c(x)] + E_nu[psi(y)]`; training minimizes the Monte
//! Carlo loss `L = -mean_i psi^c(x_i) - mean_j psi(y_j)` by gradient descent
//! in the network parameters. The parameter gradient uses the envelope
//! theorem: the argmin `y*(x)` of the inner problem is treated as a
//! constant, so
//! `grad L = (1/B) [ sum_i grad psi(y*_i) - sum_j grad psi(y_j) ]`.
//! The component along the final bias (the "add a constant" direction)
//! cancels exactly, reflecting that dual potentials are defined up to
//! constants.
//!
//! Each step draws fresh batches from both measures; the target batch
//! doubles as the candidate pool for the soft-argmin initialization of the
//! inner solves.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctransform::{self, InnerSolveResult, InnerSolverConfig};
use crate::error::{Error, Result};
use crate::geometry::{
    dist, sample_uniform, sample_wrapped_normal, uniform_log_density,
    wrapped_normal_log_density, ManifoldKind, ManifoldPoint, WrappedNormalSpec,
};
use crate::potential::PotentialModel;
use crate::rng;

/// Tag roots for the per-step random streams.
const SOURCE_TAG: u64 = 0x5d_01;
const TARGET_TAG: u64 = 0x5d_02;
const GAP_TAG: u64 = 0x5d_03;

/// A source or target measure.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureSpec {
    Uniform,
    WrappedNormal(WrappedNormalSpec),
    /// Finite point cloud, sampled uniformly with replacement.
    Empirical(Vec<ManifoldPoint>),
}

impl MeasureSpec {
    pub fn validate(&self, manifold: ManifoldKind) -> Result<()> {
        match self {
            MeasureSpec::Uniform => Ok(()),
            MeasureSpec::WrappedNormal(spec) => {
                if spec.center.manifold != manifold {
                    return Err(Error::ManifoldMismatch(spec.center.manifold, manifold));
                }
                Ok(())
            }
            MeasureSpec::Empirical(points) => {
                if points.is_empty() {
                    return Err(Error::InvalidParameter("empirical measure has no points".into()));
                }
                for p in points {
                    if p.manifold != manifold {
                        return Err(Error::ManifoldMismatch(p.manifold, manifold));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, manifold: ManifoldKind, rng: &mut R) -> Result<ManifoldPoint> {
        match self {
            MeasureSpec::Uniform => Ok(sample_uniform(manifold, rng)),
            MeasureSpec::WrappedNormal(spec) => sample_wrapped_normal(spec, rng),
            MeasureSpec::Empirical(points) => Ok(points[rng.gen_range(0..points.len())].clone()),
        }
    }

    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        manifold: ManifoldKind,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<ManifoldPoint>> {
        (0..n).map(|_| self.sample(manifold, rng)).collect()
    }

    /// Log density with respect to the Riemannian volume measure.
    /// Empirical clouds have none.
    pub fn log_density(&self, manifold: ManifoldKind, x: &ManifoldPoint) -> Result<f64> {
        match self {
            MeasureSpec::Uniform => Ok(uniform_log_density(manifold)),
            MeasureSpec::WrappedNormal(spec) => wrapped_normal_log_density(spec, x),
            MeasureSpec::Empirical(_) => {
                Err(Error::InvalidParameter("empirical measure has no density".into()))
            }
        }
    }
}

fn default_batch_size() -> usize {
    256
}
fn default_steps() -> usize {
    1000
}
fn default_outer_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_checkpoint_every() -> usize {
    100
}

/// Outer-loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_outer_lr")]
    pub outer_lr: f64,
    #[serde(default = "default_beta1")]
    pub outer_beta1: f64,
    #[serde(default = "default_beta2")]
    pub outer_beta2: f64,
    #[serde(default = "default_eps")]
    pub outer_eps: f64,
    #[serde(default = "default_train_inner")]
    pub inner: InnerSolverConfig,
    #[serde(default)]
    pub seed: u64,
    /// Intermediate checkpoint period; 0 emits only the final checkpoint.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

/// Training solves stop on an iteration budget rather than the residual
/// tolerance: the envelope gradient only needs the argmin to
/// optimizer-step accuracy, and the constant-step first-order iteration
/// plateaus near that scale anyway.
fn default_train_inner() -> InnerSolverConfig {
    InnerSolverConfig { max_iters: 150, ..InnerSolverConfig::default() }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: default_batch_size(),
            steps: default_steps(),
            outer_lr: default_outer_lr(),
            outer_beta1: default_beta1(),
            outer_beta2: default_beta2(),
            outer_eps: default_eps(),
            inner: default_train_inner(),
            seed: 0,
            checkpoint_every: default_checkpoint_every(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::InvalidParameter("batch_size must be at least 1".into()));
        }
        if self.steps < 1 {
            return Err(Error::InvalidParameter("steps must be at least 1".into()));
        }
        if !(self.outer_lr > 0.0) {
            return Err(Error::InvalidParameter("outer_lr must be positive".into()));
        }
        self.inner.validate()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub mean_residual: f64,
    pub mean_iters: f64,
    pub ms: f64,
    /// Fraction of this step's inner solves that failed outright (stranded
    /// on the cut locus or non-finite); drives the abort rule.
    pub failed_fraction: f64,
    /// Fraction of this step's inner solves that met the residual
    /// tolerance. Non-converged solves stay in the gradient: their best
    /// iterate still upper-bounds the transform value.
    pub converged_fraction: f64,
}

/// Full training log.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
    /// Populated when training stopped before the configured step count.
    pub aborted: Option<String>,
    /// Where the final checkpoint was written, when the caller saved one.
    pub checkpoint_path: Option<String>,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,loss,mean_residual,mean_iters,ms")?;
        for r in &self.records {
            writeln!(w, "{},{:.16e},{:.16e},{:.16e},{:.3}", r.step, r.loss, r.mean_residual, r.mean_iters, r.ms)?;
        }
        Ok(())
    }
}

/// Loss, gradient, and per-sample solver outcomes for one batch pair.
pub struct BatchEval {
    pub loss: f64,
    pub grad: crate::network::MlpGradient,
    pub solves: Vec<InnerSolveResult>,
}

/// Evaluates the batch loss and its envelope gradient in one pass.
///
/// The inner solves run in parallel; the gradient reduction is a sequential
/// fold in batch order, so results do not depend on thread scheduling.
pub fn batch_eval(
    model: &PotentialModel,
    xs: &[ManifoldPoint],
    ys: &[ManifoldPoint],
    inner: &InnerSolverConfig,
) -> Result<BatchEval> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::InvalidParameter("training batches must be nonempty".into()));
    }
    let b_x = xs.len() as f64;
    let b_y = ys.len() as f64;
    let solves: Vec<InnerSolveResult> = xs
        .par_iter()
        .map(|x| ctransform::inner_solve(model, x, ys, inner))
        .collect::<Result<Vec<_>>>()?;

    // Each side is summed unscaled first; the two 1/B scalings then cancel
    // bit for bit in directions where the summands agree (in particular the
    // final bias, whose per-sample gradient is identically one).
    let mut grad_star = crate::network::MlpGradient::zeros_like(&model.params);
    let mut grad_target = crate::network::MlpGradient::zeros_like(&model.params);
    let mut loss = 0.0;
    for solved in &solves {
        loss -= solved.value / b_x;
        let (_, g) = model.grad_params_psi(&solved.y)?;
        grad_star.accumulate(&g, 1.0);
    }
    for y in ys {
        let (value, g) = model.grad_params_psi(y)?;
        loss -= value / b_y;
        grad_target.accumulate(&g, 1.0);
    }
    let mut grad = crate::network::MlpGradient::zeros_like(&model.params);
    grad.accumulate(&grad_star, 1.0 / b_x);
    grad.accumulate(&grad_target, -1.0 / b_y);
    Ok(BatchEval { loss, grad, solves })
}

/// `L = -mean_i psi^c(x_i) - mean_j psi(y_j)` with the target batch as the
/// initialization pool.
pub fn semidual_loss(
    model: &PotentialModel,
    xs: &[ManifoldPoint],
    ys: &[ManifoldPoint],
    inner: &InnerSolverConfig,
) -> Result<(f64, Vec<InnerSolveResult>)> {
    let eval = batch_eval(model, xs, ys, inner)?;
    Ok((eval.loss, eval.solves))
}

/// Envelope gradient of the batch loss.
pub fn envelope_grad(
    model: &PotentialModel,
    xs: &[ManifoldPoint],
    ys: &[ManifoldPoint],
    inner: &InnerSolverConfig,
) -> Result<crate::network::MlpGradient> {
    Ok(batch_eval(model, xs, ys, inner)?.grad)
}

/// Consecutive-step window of the batch-failure abort rule.
const ABORT_WINDOW: usize = 10;
/// Per-step failure fraction that arms the abort rule.
const ABORT_FRACTION: f64 = 0.5;

/// Trains a model by stochastic semi-dual descent.
///
/// Deterministic given `config.seed`: batches derive from per-step seed
/// streams and the gradient reduction order is fixed. `on_checkpoint` is
/// invoked every `checkpoint_every` steps and after the last step.
///
/// Non-finite losses or gradients abort training; the returned model is the
/// last one that produced finite values and `report.aborted` carries the
/// reason. The same applies when more than half of a batch's inner solves
/// fail outright for ten consecutive steps.
pub fn train<F>(
    source: &MeasureSpec,
    target: &MeasureSpec,
    model_init: PotentialModel,
    config: &TrainConfig,
    mut on_checkpoint: F,
) -> Result<(PotentialModel, TrainReport)>
where
    F: FnMut(usize, &PotentialModel) -> Result<()>,
{
    config.validate()?;
    let manifold = model_init.manifold();
    source.validate(manifold)?;
    target.validate(manifold)?;

    let arch = model_init.params.config();
    let mut model = model_init;
    let mut report = TrainReport::default();

    let n_params = model.params.param_count();
    let mut adam_m = vec![0.0; n_params];
    let mut adam_v = vec![0.0; n_params];
    let mut failing_streak = 0usize;

    for step in 0..config.steps {
        let started = Instant::now();
        let xs = source.sample_batch(
            manifold,
            config.batch_size,
            &mut rng::derive(config.seed, &[SOURCE_TAG, step as u64]),
        )?;
        let ys = target.sample_batch(
            manifold,
            config.batch_size,
            &mut rng::derive(config.seed, &[TARGET_TAG, step as u64]),
        )?;

        let eval = batch_eval(&model, &xs, &ys, &config.inner)?;
        let flat_grad = eval.grad.flatten();
        if !eval.loss.is_finite() || flat_grad.iter().any(|g| !g.is_finite()) {
            report.aborted = Some(format!("non-finite loss or gradient at step {step}"));
            break;
        }

        let n_solves = eval.solves.len() as f64;
        let failed = eval.solves.iter().filter(|s| s.failed || !s.value.is_finite()).count();
        let failed_fraction = failed as f64 / n_solves;
        let converged_fraction =
            eval.solves.iter().filter(|s| s.converged).count() as f64 / n_solves;
        if failed_fraction > ABORT_FRACTION {
            failing_streak += 1;
        } else {
            failing_streak = 0;
        }

        // Descent step on the loss; moments persist across steps.
        let mut flat = model.params.flatten();
        let t = (step + 1) as i32;
        let (c1, c2) = (1.0 - config.outer_beta1.powi(t), 1.0 - config.outer_beta2.powi(t));
        for i in 0..n_params {
            adam_m[i] = config.outer_beta1 * adam_m[i] + (1.0 - config.outer_beta1) * flat_grad[i];
            adam_v[i] = config.outer_beta2 * adam_v[i] + (1.0 - config.outer_beta2) * flat_grad[i] * flat_grad[i];
            flat[i] -= config.outer_lr * (adam_m[i] / c1) / ((adam_v[i] / c2).sqrt() + config.outer_eps);
        }
        let new_params = crate::network::MlpParams::unflatten(&arch, &flat)?;
        if new_params.flatten().iter().any(|p| !p.is_finite()) {
            report.aborted = Some(format!("non-finite parameters at step {step}"));
            break;
        }
        model.params = new_params;

        report.records.push(StepRecord {
            step,
            loss: eval.loss,
            mean_residual: eval.solves.iter().map(|s| s.residual).sum::<f64>() / n_solves,
            mean_iters: eval.solves.iter().map(|s| s.iters as f64).sum::<f64>() / n_solves,
            ms: started.elapsed().as_secs_f64() * 1e3,
            failed_fraction,
            converged_fraction,
        });

        if failing_streak >= ABORT_WINDOW {
            report.aborted = Some(format!(
                "more than half of the batch's inner solves failed for {ABORT_WINDOW} consecutive steps (last step {step})"
            ));
            break;
        }

        let last = step + 1 == config.steps;
        if last || (config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) {
            on_checkpoint(step, &model)?;
        }
    }
    if report.aborted.is_some() {
        on_checkpoint(report.records.len().saturating_sub(1), &model)?;
    }
    Ok((model, report))
}

/// Optimality gap estimate of a trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MongeGap {
    /// `E[c(x, T(x))] + L`.
    pub gap: f64,
    /// `|gap| / E[c(x, T(x))]`.
    pub relative: f64,
    /// Transport cost `E[c(x, T(x))]`.
    pub mean_cost: f64,
}

/// Monte Carlo estimate of `E[c(x, T(x))] + L(theta)`, which vanishes at a
/// dual optimizer whose inner solves are exact.
pub fn monge_gap<P: crate::potential::Potential + Sync + ?Sized>(
    model: &P,
    source: &MeasureSpec,
    target: &MeasureSpec,
    n_samples: usize,
    inner: &InnerSolverConfig,
    seed: u64,
) -> Result<MongeGap> {
    let manifold = model.manifold();
    let xs = source.sample_batch(manifold, n_samples, &mut rng::derive(seed, &[GAP_TAG, 0]))?;
    let ys = target.sample_batch(manifold, n_samples, &mut rng::derive(seed, &[GAP_TAG, 1]))?;
    let solves: Vec<InnerSolveResult> = xs
        .par_iter()
        .map(|x| ctransform::inner_solve(model, x, &ys, inner))
        .collect::<Result<Vec<_>>>()?;
    let n = n_samples as f64;
    let mut mean_cost = 0.0;
    let mut loss = 0.0;
    for (x, solved) in xs.iter().zip(&solves) {
        let d = dist(x, &solved.y)?;
        mean_cost += 0.5 * d * d / n;
        loss -= solved.value / n;
    }
    for y in &ys {
        loss -= model.value(y)? / n;
    }
    let gap = mean_cost + loss;
    let relative = if mean_cost > 0.0 { gap.abs() / mean_cost } else { 0.0 };
    Ok(MongeGap { gap, relative, mean_cost })
}

/// Convenience: a freshly initialized model for a landmark set.
pub fn init_model(
    landmarks: crate::embedding::LandmarkSet,
    hidden: Vec<usize>,
    activation: crate::network::Activation,
    seed: u64,
) -> Result<PotentialModel> {
    let config = crate::network::MlpConfig {
        input_dim: landmarks.len(),
        hidden,
        activation,
    };
    let params = crate::network::init(&config, &mut rng::derive(seed, &[0x1417]));
    PotentialModel::new(landmarks, params)
}

/// Mean displacement `E[d(x, T(x))]` under the source measure.
pub fn mean_displacement(
    model: &PotentialModel,
    source: &MeasureSpec,
    pool: &[ManifoldPoint],
    n_samples: usize,
    inner: &InnerSolverConfig,
    seed: u64,
) -> Result<f64> {
    let manifold = model.manifold();
    let xs = source.sample_batch(manifold, n_samples, &mut rng::derive(seed, &[GAP_TAG, 2]))?;
    let total: f64 = xs
        .par_iter()
        .map(|x| {
            let solved = ctransform::inner_solve(model, x, pool, inner)?;
            dist(x, &solved.y)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(total / n_samples as f64)
}
