//! Discrete c-concave potentials, their transport maps, semi-dual training,
//! and geodesic quantization.
//!
//! The potential class is `phi(x) = min_i { d(x, y_i)^2/2 + alpha_i }` over
//! `m` sites, optionally smoothed by a soft minimum with temperature
//! `gamma`:
//! `phi_gamma(x) = -gamma log sum_i exp(-(d(x, y_i)^2/2 + alpha_i)/gamma)`.
//! The classical bound `0 <= hardmin - softmin' <= gamma log m` (with the
//! soft minimum below the hard one) makes `gamma -> 0` uniform.
//!
//! At `gamma = 0` the induced map `T(x) = exp_x(-grad phi(x))` lands exactly
//! on the argmin site, so the pushforward of any measure is supported on at
//! most `m` points. The quantization error of the target measure then lower
//! bounds how well such a map can track a continuous one; the Lloyd
//! machinery at the bottom of this module estimates that error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctransform::{self, InnerSolveResult};
use crate::embedding::select_landmarks_fps;
use crate::error::{Error, Result};
use crate::geometry::{
    dist, exp_map, log_map_robust, tangent_basis, ManifoldKind, ManifoldPoint, TangentVector,
};
use crate::potential::Potential;
use crate::rng;
use crate::semidual::{MeasureSpec, StepRecord, TrainConfig, TrainReport};

/// Sites closer than this contribute nothing to gradient chain rules (the
/// logarithm is zero there anyway).
const SITE_KINK_DIST: f64 = 1e-8;

const TRAIN_SOURCE_TAG: u64 = 0x4c_01;
const TRAIN_TARGET_TAG: u64 = 0x4c_02;
const FPS_INIT_TAG: u64 = 0x4c_03;
const LLOYD_TAG: u64 = 0x4c_04;

/// A discrete c-concave potential: sites, offsets, smoothing temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct RcpmModel {
    pub manifold: ManifoldKind,
    pub sites: Vec<ManifoldPoint>,
    pub alphas: Vec<f64>,
    /// Soft-minimum temperature; `0` is the hard minimum.
    pub gamma: f64,
}

/// Parameter gradients of `phi` at one evaluation point.
pub struct RcpmGrads {
    /// `d phi / d alpha_i`: the softmin weights.
    pub alphas: Vec<f64>,
    /// `d phi / d y_i` as tangent vectors at the sites.
    pub sites: Vec<TangentVector>,
}

impl RcpmModel {
    pub fn new(
        manifold: ManifoldKind,
        sites: Vec<ManifoldPoint>,
        alphas: Vec<f64>,
        gamma: f64,
    ) -> Result<RcpmModel> {
        if sites.is_empty() {
            return Err(Error::InvalidParameter("an rcpm model needs at least one site".into()));
        }
        if sites.len() != alphas.len() {
            return Err(Error::DimensionMismatch { expected: sites.len(), got: alphas.len() });
        }
        if !(gamma >= 0.0) {
            return Err(Error::InvalidParameter("gamma must be nonnegative".into()));
        }
        for s in &sites {
            if s.manifold != manifold {
                return Err(Error::ManifoldMismatch(s.manifold, manifold));
            }
        }
        if alphas.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("rcpm alphas".into()));
        }
        Ok(RcpmModel { manifold, sites, alphas, gamma })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Per-site scores `d(x, y_i)^2/2 + alpha_i`.
    fn scores(&self, x: &ManifoldPoint) -> Result<Vec<f64>> {
        self.sites
            .iter()
            .zip(&self.alphas)
            .map(|(y, a)| {
                let d = dist(x, y)?;
                Ok(0.5 * d * d + a)
            })
            .collect()
    }

    /// Potential value and softmin weights. At `gamma = 0` the weights are
    /// the indicator of the lowest-index argmin.
    pub fn value_and_weights(&self, x: &ManifoldPoint) -> Result<(f64, Vec<f64>)> {
        let scores = self.scores(x)?;
        let (best_idx, best) = scores
            .iter()
            .enumerate()
            .fold((0usize, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
        if self.gamma == 0.0 {
            let mut w = vec![0.0; scores.len()];
            w[best_idx] = 1.0;
            return Ok((best, w));
        }
        // Softmin with max-subtraction (here: min-subtraction, since the
        // exponents are negated scores).
        let exps: Vec<f64> = scores.iter().map(|s| (-(s - best) / self.gamma).exp()).collect();
        let total: f64 = exps.iter().sum();
        let value = best - self.gamma * total.ln();
        Ok((value, exps.iter().map(|e| e / total).collect()))
    }

    /// `phi(x)`.
    pub fn potential(&self, x: &ManifoldPoint) -> Result<f64> {
        Ok(self.value_and_weights(x)?.0)
    }

    /// The transport map `T(x) = exp_x(-grad phi(x))`. At `gamma = 0` this
    /// returns the argmin site itself (lowest index on ties), bit for bit.
    pub fn transport(&self, x: &ManifoldPoint) -> Result<ManifoldPoint> {
        let (_, weights) = self.value_and_weights(x)?;
        if self.gamma == 0.0 {
            let idx = weights.iter().position(|&w| w == 1.0).unwrap();
            return Ok(self.sites[idx].clone());
        }
        let mut step = TangentVector::zero(x);
        for (w, site) in weights.iter().zip(&self.sites) {
            if *w == 0.0 || dist(x, site)? < SITE_KINK_DIST {
                continue;
            }
            step = step.add(&log_map_robust(x, site)?.scale(*w))?;
        }
        exp_map(&step)
    }

    /// Gradients of `phi(x)` in the alphas and the sites.
    pub fn param_grads(&self, x: &ManifoldPoint) -> Result<RcpmGrads> {
        let (_, weights) = self.value_and_weights(x)?;
        let mut site_grads = Vec::with_capacity(self.sites.len());
        for (w, site) in weights.iter().zip(&self.sites) {
            if *w == 0.0 || dist(site, x)? < SITE_KINK_DIST {
                site_grads.push(TangentVector::zero(site));
            } else {
                site_grads.push(log_map_robust(site, x)?.scale(-*w));
            }
        }
        Ok(RcpmGrads { alphas: weights, sites: site_grads })
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let file = RcpmFile {
            schema_version: RCPM_SCHEMA_VERSION,
            manifold: self.manifold,
            gamma: self.gamma,
            alphas: self.alphas.clone(),
            sites: self.sites.iter().map(|s| s.coords.clone()).collect(),
        };
        serde_json::to_writer(w, &file)?;
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<RcpmModel> {
        let file: RcpmFile = serde_json::from_reader(r)?;
        if file.schema_version != RCPM_SCHEMA_VERSION {
            return Err(Error::Malformed(format!(
                "unsupported rcpm schema version {} (expected {})",
                file.schema_version, RCPM_SCHEMA_VERSION
            )));
        }
        let sites = file
            .sites
            .into_iter()
            .map(|coords| ManifoldPoint::new(file.manifold, coords))
            .collect::<Result<Vec<_>>>()?;
        RcpmModel::new(file.manifold, sites, file.alphas, file.gamma)
    }

    pub fn save_file(&self, path: &Path) -> Result<()> {
        self.save(BufWriter::new(File::create(path)?))
    }

    pub fn load_file(path: &Path) -> Result<RcpmModel> {
        RcpmModel::load(BufReader::new(File::open(path)?))
    }
}

impl Potential for RcpmModel {
    fn manifold(&self) -> ManifoldKind {
        self.manifold
    }

    fn value(&self, x: &ManifoldPoint) -> Result<f64> {
        self.potential(x)
    }

    fn value_and_grad(&self, x: &ManifoldPoint) -> Result<(f64, TangentVector)> {
        let (value, weights) = self.value_and_weights(x)?;
        let mut grad = TangentVector::zero(x);
        for (w, site) in weights.iter().zip(&self.sites) {
            if *w == 0.0 || dist(x, site)? < SITE_KINK_DIST {
                continue;
            }
            grad = grad.add(&log_map_robust(x, site)?.scale(-*w))?;
        }
        Ok((value, grad))
    }
}

const RCPM_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct RcpmFile {
    schema_version: u32,
    manifold: ManifoldKind,
    gamma: f64,
    alphas: Vec<f64>,
    sites: Vec<Vec<f64>>,
}

/// Per-site Adam state for the Riemannian site updates.
struct SiteAdam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// Trains an RCPM by the same semi-dual objective as the network models,
/// with the discrete potential on the source side:
/// `J = mean_i phi(x_i) + mean_j phi^c(y_j)`, the conjugate solved
/// numerically over the manifold with the source batch as candidate pool.
/// Gradient ascent in the alphas (Adam) and the sites (Adam in tangent
/// coordinates, retracted through the exponential map, first moment
/// re-expressed after each retraction).
///
/// Sites are initialized by farthest-point sampling over target samples;
/// alphas start at zero. Deterministic given `config.seed`.
pub fn rcpm_train(
    source: &MeasureSpec,
    target: &MeasureSpec,
    manifold: ManifoldKind,
    m: usize,
    gamma: f64,
    config: &TrainConfig,
) -> Result<(RcpmModel, TrainReport)> {
    config.validate()?;
    source.validate(manifold)?;
    target.validate(manifold)?;
    if m < 1 {
        return Err(Error::InvalidParameter("rcpm needs at least one site".into()));
    }

    // FPS over a pool of target draws; the pool stands in for the target
    // support.
    let pool_size = (16 * m).max(256);
    let init_pool = target.sample_batch(
        manifold,
        pool_size,
        &mut rng::derive(config.seed, &[FPS_INIT_TAG]),
    )?;
    let landmark_init = select_landmarks_fps(manifold, m, config.seed, Some(&init_pool))?;
    let mut model = RcpmModel::new(manifold, landmark_init.points, vec![0.0; m], gamma)?;

    let p = manifold.intrinsic_dim();
    let mut alpha_m = vec![0.0; m];
    let mut alpha_v = vec![0.0; m];
    let mut site_state = SiteAdam { m: vec![vec![0.0; p]; m], v: vec![vec![0.0; p]; m] };
    let mut report = TrainReport::default();
    let mut failing_streak = 0usize;

    for step in 0..config.steps {
        let started = Instant::now();
        let xs = source.sample_batch(
            manifold,
            config.batch_size,
            &mut rng::derive(config.seed, &[TRAIN_SOURCE_TAG, step as u64]),
        )?;
        let ys = target.sample_batch(
            manifold,
            config.batch_size,
            &mut rng::derive(config.seed, &[TRAIN_TARGET_TAG, step as u64]),
        )?;
        let b = config.batch_size as f64;

        // Source term: phi at the x batch, gradients accumulated directly.
        let mut j_value = 0.0;
        let mut g_alpha = vec![0.0; m];
        let mut g_sites: Vec<Vec<f64>> = vec![vec![0.0; manifold.ambient_dim()]; m];
        for x in &xs {
            let (value, _) = model.value_and_weights(x)?;
            j_value += value / b;
            let grads = model.param_grads(x)?;
            for i in 0..m {
                g_alpha[i] += grads.alphas[i] / b;
                for (acc, c) in g_sites[i].iter_mut().zip(&grads.sites[i].components) {
                    *acc += c / b;
                }
            }
        }

        // Conjugate term: for each y solve min_x { d(y, x)^2/2 - phi(x) };
        // by the envelope theorem its parameter gradient is -grad phi at
        // the solved point.
        let solves: Vec<InnerSolveResult> = ys
            .par_iter()
            .map(|y| ctransform::inner_solve(&model, y, &xs, &config.inner))
            .collect::<Result<Vec<_>>>()?;
        for solved in &solves {
            j_value += solved.value / b;
            let grads = model.param_grads(&solved.y)?;
            for i in 0..m {
                g_alpha[i] -= grads.alphas[i] / b;
                for (acc, c) in g_sites[i].iter_mut().zip(&grads.sites[i].components) {
                    *acc -= c / b;
                }
            }
        }

        let finite = j_value.is_finite()
            && g_alpha.iter().all(|g| g.is_finite())
            && g_sites.iter().all(|g| g.iter().all(|c| c.is_finite()));
        if !finite {
            report.aborted = Some(format!("non-finite objective or gradient at step {step}"));
            break;
        }

        let n_solves = solves.len() as f64;
        let failed = solves.iter().filter(|s| s.failed || !s.value.is_finite()).count();
        let failed_fraction = failed as f64 / n_solves;
        if failed_fraction > 0.5 {
            failing_streak += 1;
        } else {
            failing_streak = 0;
        }

        // Ascent on J: Adam over alphas and over per-site tangent
        // coordinates.
        let t = (step + 1) as i32;
        let (c1, c2) = (1.0 - config.outer_beta1.powi(t), 1.0 - config.outer_beta2.powi(t));
        for i in 0..m {
            alpha_m[i] = config.outer_beta1 * alpha_m[i] + (1.0 - config.outer_beta1) * g_alpha[i];
            alpha_v[i] =
                config.outer_beta2 * alpha_v[i] + (1.0 - config.outer_beta2) * g_alpha[i] * g_alpha[i];
            model.alphas[i] +=
                config.outer_lr * (alpha_m[i] / c1) / ((alpha_v[i] / c2).sqrt() + config.outer_eps);
        }
        for i in 0..m {
            let basis = tangent_basis(&model.sites[i])?;
            let g = basis.to_coords(&g_sites[i]);
            let ms = &mut site_state.m[i];
            let vs = &mut site_state.v[i];
            let mut delta = vec![0.0; p];
            for k in 0..p {
                ms[k] = config.outer_beta1 * ms[k] + (1.0 - config.outer_beta1) * g[k];
                vs[k] = config.outer_beta2 * vs[k] + (1.0 - config.outer_beta2) * g[k] * g[k];
                delta[k] = config.outer_lr * (ms[k] / c1) / ((vs[k] / c2).sqrt() + config.outer_eps);
            }
            let moved = exp_map(&TangentVector {
                base: model.sites[i].clone(),
                components: basis.from_coords(&delta),
            })?;
            let new_basis = tangent_basis(&moved)?;
            let ambient = basis.from_coords(ms);
            *ms = new_basis.to_coords(&ambient);
            model.sites[i] = moved;
        }

        report.records.push(StepRecord {
            step,
            loss: -j_value,
            mean_residual: solves.iter().map(|s| s.residual).sum::<f64>() / n_solves,
            mean_iters: solves.iter().map(|s| s.iters as f64).sum::<f64>() / n_solves,
            ms: started.elapsed().as_secs_f64() * 1e3,
            failed_fraction,
            converged_fraction: solves.iter().filter(|s| s.converged).count() as f64 / n_solves,
        });

        if failing_streak >= 10 {
            report.aborted = Some(format!(
                "more than half of the batch's inner solves failed for 10 consecutive steps (last step {step})"
            ));
            break;
        }
    }
    Ok((model, report))
}

/// One quantization estimate: sites and the mean squared geodesic distance
/// to the nearest site.
#[derive(Debug, Clone)]
pub struct QuantizationResult {
    pub sites: Vec<ManifoldPoint>,
    /// Estimated `V_{m,2}`: `mean_x min_i d(x, y_i)^2`.
    pub distortion: f64,
}

fn nearest_site(x: &ManifoldPoint, sites: &[ManifoldPoint]) -> Result<(usize, f64)> {
    let mut best = (0usize, f64::INFINITY);
    for (i, s) in sites.iter().enumerate() {
        let d = dist(x, s)?;
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best)
}

fn distortion(samples: &[ManifoldPoint], sites: &[ManifoldPoint]) -> Result<f64> {
    let total: f64 = samples
        .par_iter()
        .map(|x| nearest_site(x, sites).map(|(_, d)| d * d))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(total / samples.len() as f64)
}

/// One Lloyd descent from a given codebook; distortion never increases
/// across iterations.
fn lloyd_descent(
    samples: &[ManifoldPoint],
    mut sites: Vec<ManifoldPoint>,
    iters: usize,
    tol: f64,
) -> Result<QuantizationResult> {
    let mut current = distortion(samples, &sites)?;
    for _ in 0..iters {
        // Assignment.
        let assignment: Vec<usize> = samples
            .par_iter()
            .map(|x| nearest_site(x, &sites).map(|(i, _)| i))
            .collect::<Result<Vec<_>>>()?;
        // Tangent-mean center update; empty cells keep their site.
        let mut sums: Vec<Vec<f64>> = sites.iter().map(|s| vec![0.0; s.coords.len()]).collect();
        let mut counts = vec![0usize; sites.len()];
        for (x, &i) in samples.iter().zip(&assignment) {
            let v = log_map_robust(&sites[i], x)?;
            for (acc, c) in sums[i].iter_mut().zip(&v.components) {
                *acc += c;
            }
            counts[i] += 1;
        }
        for i in 0..sites.len() {
            if counts[i] == 0 {
                continue;
            }
            let mean: Vec<f64> = sums[i].iter().map(|s| s / counts[i] as f64).collect();
            sites[i] = exp_map(&TangentVector { base: sites[i].clone(), components: mean })?;
        }
        let next = distortion(samples, &sites)?;
        let rel = (current - next).abs() / current.abs().max(1e-300);
        current = next;
        if rel < tol {
            break;
        }
    }
    Ok(QuantizationResult { sites, distortion: current })
}

/// Estimates the m-point quantization error of the empirical measure of
/// `samples` by geodesic k-means: best of `restarts` random initializations
/// plus an optional warm start (previous sites padded with the sample
/// farthest from them), 50 iterations each or relative change below 1e-6.
///
/// The warm start makes the estimate nonincreasing in `m` when chained over
/// a grid on the same samples.
pub fn lloyd_quantize(
    samples: &[ManifoldPoint],
    m: usize,
    restarts: usize,
    seed: u64,
    warm: Option<&[ManifoldPoint]>,
) -> Result<QuantizationResult> {
    if samples.len() < m {
        return Err(Error::InvalidParameter(format!(
            "cannot place {m} sites from {} samples",
            samples.len()
        )));
    }
    let mut inits: Vec<Vec<ManifoldPoint>> = Vec::new();
    for r in 0..restarts {
        let mut rng = rng::derive(seed, &[LLOYD_TAG, m as u64, r as u64]);
        let mut idx: Vec<usize> = (0..samples.len()).collect();
        idx.shuffle(&mut rng);
        inits.push(idx[..m].iter().map(|&i| samples[i].clone()).collect());
    }
    if let Some(prev) = warm {
        let mut sites: Vec<ManifoldPoint> = prev.to_vec();
        while sites.len() < m {
            // Farthest sample from the current sites (k-center greedy pad).
            let far = samples
                .par_iter()
                .map(|x| nearest_site(x, &sites).map(|(_, d)| d))
                .collect::<Result<Vec<f64>>>()?;
            let (best_i, _) = far
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
            sites.push(samples[best_i].clone());
        }
        sites.truncate(m);
        inits.push(sites);
    }
    let mut best: Option<QuantizationResult> = None;
    for init in inits {
        let result = lloyd_descent(samples, init, 50, 1e-6)?;
        if best.as_ref().is_none_or(|b| result.distortion < b.distortion) {
            best = Some(result);
        }
    }
    Ok(best.unwrap())
}

/// A `(m, V_{m,2})` row of the quantization table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantizationRow {
    pub m: usize,
    pub distortion: f64,
}

/// Least-squares slope of `log distortion` against `log m`, with the
/// standard error of the slope.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

pub fn fit_log_log_slope(rows: &[QuantizationRow]) -> Result<SlopeFit> {
    if rows.len() < 2 {
        return Err(Error::InvalidParameter("slope fit needs at least two rows".into()));
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.m as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.distortion.ln()).collect();
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - (intercept + slope * x)).powi(2)).sum();
    let stderr = if rows.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(SlopeFit { slope, intercept, stderr })
}

/// Quantization-error table of a measure over a site-count grid, with the
/// log-log slope fit. Chained warm starts keep the distortion column
/// nonincreasing.
pub fn quantization_table(
    measure: &MeasureSpec,
    manifold: ManifoldKind,
    m_grid: &[usize],
    n_samples: usize,
    restarts: usize,
    seed: u64,
) -> Result<(Vec<QuantizationRow>, SlopeFit)> {
    if m_grid.is_empty() {
        return Err(Error::InvalidParameter("empty site-count grid".into()));
    }
    if m_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("site-count grid must be strictly increasing".into()));
    }
    let samples = measure.sample_batch(manifold, n_samples, &mut rng::derive(seed, &[LLOYD_TAG, 0]))?;
    let mut rows = Vec::with_capacity(m_grid.len());
    let mut warm: Option<Vec<ManifoldPoint>> = None;
    for &m in m_grid {
        let result = lloyd_quantize(&samples, m, restarts, seed, warm.as_deref())?;
        rows.push(QuantizationRow { m, distortion: result.distortion });
        warm = Some(result.sites);
    }
    let fit = fit_log_log_slope(&rows)?;
    Ok((rows, fit))
}
