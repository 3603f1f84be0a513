//! Transport-map diagnostics: Jacobians, density ratios, KL and effective
//! sample size estimates, and cross-map distances.
//!
//! For a map `T` pushing `mu` forward, the change of variables gives
//! `log (T# mu)(T(x)) = log mu(x) - log |det DT(x)|`, with the Jacobian
//! taken between orthonormal tangent bases. The KL divergence of the
//! pushforward against the target then estimates as a Monte Carlo mean of
//! `log mu(x) - log |det DT(x)| - log nu(T(x))`, and the same density ratio
//! yields importance weights for an effective-sample-size and normalizing
//! constant estimate.
//!
//! Two Jacobian routes are provided. Maps defined as conjugate argmins of a
//! potential are differentiated implicitly: the stationarity residual
//! `F(x, y) = -log_y(x) - grad psi(y)` vanishes at `y = T(x)`, so
//! `DT = -[D_y F]^{-1} D_x F`, both blocks estimated by geodesic central
//! differences. Explicit maps are differentiated by central differences of
//! the map itself.

use std::io::{Read, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctransform::{self, InnerSolverConfig};
use crate::error::{Error, Result};
use crate::geometry::{
    dist, exp_map, log_map_robust, tangent_basis, ManifoldKind, ManifoldPoint, TangentVector,
};
use crate::potential::Potential;
use crate::rcpm::RcpmModel;
use crate::rng;
use crate::semidual::{self, MeasureSpec, MongeGap};

/// Jacobians whose implicit-function block has `|det D_y F|` below this are
/// not invertible to working precision; the point is gated out.
pub const DET_GATE: f64 = 1e-12;

const EVAL_TAG: u64 = 0xe7_01;
const GAP_TAG: u64 = 0xe7_02;

fn default_n_samples() -> usize {
    1024
}
fn default_n_batches() -> usize {
    5
}
fn default_fd_step() -> f64 {
    1e-5
}
fn default_residual_gate() -> f64 {
    1e-2
}

/// Evaluation solves run to a residual tolerance well under the gate, so
/// gating reflects the model rather than the solver budget.
fn default_eval_solver() -> InnerSolverConfig {
    InnerSolverConfig::tight_gd(1e-3)
}

/// Evaluation settings: batch sizes, finite-difference step, the inner
/// residual above which a solved point is excluded, and the solver for
/// conjugate transport.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_n_batches")]
    pub n_batches: usize,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default = "default_residual_gate")]
    pub residual_gate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eval_solver")]
    pub solver: InnerSolverConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_samples: default_n_samples(),
            n_batches: default_n_batches(),
            fd_step: default_fd_step(),
            residual_gate: default_residual_gate(),
            seed: 0,
            solver: default_eval_solver(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.n_batches == 0 {
            return Err(Error::InvalidParameter("evaluation batches must be nonempty".into()));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::InvalidParameter("fd_step must be positive".into()));
        }
        if !(self.residual_gate > 0.0) {
            return Err(Error::InvalidParameter("residual_gate must be positive".into()));
        }
        Ok(())
    }
}

/// A transport Jacobian in tangent coordinates: `p x p` row-major matrix
/// from the source basis to the basis at the image point, and the log of
/// the absolute determinant.
#[derive(Debug, Clone)]
pub struct JacobianResult {
    pub matrix: Vec<f64>,
    pub logdet: f64,
}

/// `log |det A|` for a dense `p x p` matrix by partial-pivot elimination.
/// `None` when a pivot vanishes exactly.
fn log_abs_det(mat: &[f64], p: usize) -> Option<f64> {
    let mut a = mat.to_vec();
    let mut logdet = 0.0;
    for k in 0..p {
        let pivot_row = (k..p).max_by(|&i, &j| a[i * p + k].abs().total_cmp(&a[j * p + k].abs()))?;
        if a[pivot_row * p + k] == 0.0 {
            return None;
        }
        if pivot_row != k {
            for c in 0..p {
                a.swap(k * p + c, pivot_row * p + c);
            }
        }
        let pivot = a[k * p + k];
        logdet += pivot.abs().ln();
        for i in k + 1..p {
            let f = a[i * p + k] / pivot;
            for c in k..p {
                a[i * p + c] -= f * a[k * p + c];
            }
        }
    }
    Some(logdet)
}

/// `|det A|` by the same elimination; small matrices only.
fn abs_det(mat: &[f64], p: usize) -> f64 {
    match log_abs_det(mat, p) {
        Some(l) => l.exp(),
        None => 0.0,
    }
}

/// Solves `A X = B` with `B` holding `ncols` columns (column-major flat),
/// Gauss-Jordan with partial pivoting. `None` on a vanishing pivot.
fn solve_system(a_in: &[f64], b_in: &[f64], p: usize, ncols: usize) -> Option<Vec<f64>> {
    let mut a = a_in.to_vec();
    let mut b = b_in.to_vec();
    for k in 0..p {
        let pivot_row = (k..p).max_by(|&i, &j| a[i * p + k].abs().total_cmp(&a[j * p + k].abs()))?;
        if a[pivot_row * p + k] == 0.0 {
            return None;
        }
        if pivot_row != k {
            for c in 0..p {
                a.swap(k * p + c, pivot_row * p + c);
            }
            for c in 0..ncols {
                b.swap(k * ncols + c, pivot_row * ncols + c);
            }
        }
        let pivot = a[k * p + k];
        for c in 0..p {
            a[k * p + c] /= pivot;
        }
        for c in 0..ncols {
            b[k * ncols + c] /= pivot;
        }
        for i in 0..p {
            if i == k {
                continue;
            }
            let f = a[i * p + k];
            if f == 0.0 {
                continue;
            }
            for c in 0..p {
                a[i * p + c] -= f * a[k * p + c];
            }
            for c in 0..ncols {
                b[i * ncols + c] -= f * b[k * ncols + c];
            }
        }
    }
    Some(b)
}

/// Stationarity residual of the conjugate problem, an ambient vector in the
/// tangent space at `y`.
fn stationarity<P: Potential + ?Sized>(
    psi: &P,
    x: &ManifoldPoint,
    y: &ManifoldPoint,
) -> Result<Vec<f64>> {
    let back = log_map_robust(y, x)?;
    let (_, grad) = psi.value_and_grad(y)?;
    Ok(back
        .components
        .iter()
        .zip(&grad.components)
        .map(|(l, g)| -l - g)
        .collect())
}

fn retract(base: &ManifoldPoint, ambient_dir: &[f64], t: f64) -> Result<ManifoldPoint> {
    exp_map(&TangentVector {
        base: base.clone(),
        components: ambient_dir.iter().map(|c| c * t).collect(),
    })
}

/// Implicit Jacobian of the map `x -> argmin_y { d(x,y)^2/2 - psi(y) }` at
/// a solved pair `(x, y_star)`. Both differential blocks of the
/// stationarity residual are estimated by central differences along
/// orthonormal tangent directions and projected onto the basis at
/// `y_star`; the result solves `D_y F . J = -D_x F`.
///
/// Returns `None` when `|det D_y F|` falls below `DET_GATE`.
pub fn transport_jacobian_ift<P: Potential + ?Sized>(
    psi: &P,
    x: &ManifoldPoint,
    y_star: &ManifoldPoint,
    fd_step: f64,
) -> Result<Option<JacobianResult>> {
    let p = x.manifold.intrinsic_dim();
    let basis_x = tangent_basis(x)?;
    let basis_y = tangent_basis(y_star)?;
    let h = fd_step;

    // Column k of D_x F: perturb x along the k-th source direction.
    let mut d_x = vec![0.0; p * p];
    for k in 0..p {
        let dir = &basis_x.columns[k];
        let f_plus = stationarity(psi, &retract(x, dir, h)?, y_star)?;
        let f_minus = stationarity(psi, &retract(x, dir, -h)?, y_star)?;
        let diff: Vec<f64> = f_plus.iter().zip(&f_minus).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let col = basis_y.to_coords(&diff);
        for r in 0..p {
            d_x[r * p + k] = col[r];
        }
    }

    // Column k of D_y F: perturb y along the k-th target direction; the
    // residual at the perturbed point is projected back onto the basis at
    // y_star (transport error is second order in h).
    let mut d_y = vec![0.0; p * p];
    for k in 0..p {
        let dir = &basis_y.columns[k];
        let f_plus = stationarity(psi, x, &retract(y_star, dir, h)?)?;
        let f_minus = stationarity(psi, x, &retract(y_star, dir, -h)?)?;
        let diff: Vec<f64> = f_plus.iter().zip(&f_minus).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let col = basis_y.to_coords(&diff);
        for r in 0..p {
            d_y[r * p + k] = col[r];
        }
    }

    if !d_x.iter().chain(&d_y).all(|v| v.is_finite()) || abs_det(&d_y, p) < DET_GATE {
        return Ok(None);
    }
    let neg_d_x: Vec<f64> = d_x.iter().map(|v| -v).collect();
    let Some(matrix) = solve_system(&d_y, &neg_d_x, p, p) else {
        return Ok(None);
    };
    match log_abs_det(&matrix, p) {
        Some(logdet) if logdet.is_finite() => Ok(Some(JacobianResult { matrix, logdet })),
        _ => Ok(None),
    }
}

/// Direct central-difference Jacobian of an explicit map `f`. Columns are
/// `log_{f(x)} f(exp_x(±h e_k))` differences in the tangent basis at
/// `f(x)`. Returns `None` when the determinant vanishes to working
/// precision or the differences are non-finite.
pub fn transport_jacobian_fd<F>(
    f: F,
    x: &ManifoldPoint,
    y: &ManifoldPoint,
    fd_step: f64,
) -> Result<Option<JacobianResult>>
where
    F: Fn(&ManifoldPoint) -> Result<ManifoldPoint>,
{
    let p = x.manifold.intrinsic_dim();
    let basis_x = tangent_basis(x)?;
    let basis_y = tangent_basis(y)?;
    let h = fd_step;
    let mut matrix = vec![0.0; p * p];
    for k in 0..p {
        let dir = &basis_x.columns[k];
        let y_plus = f(&retract(x, dir, h)?)?;
        let y_minus = f(&retract(x, dir, -h)?)?;
        let v_plus = log_map_robust(y, &y_plus)?;
        let v_minus = log_map_robust(y, &y_minus)?;
        let diff: Vec<f64> = v_plus
            .components
            .iter()
            .zip(&v_minus.components)
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect();
        let col = basis_y.to_coords(&diff);
        for r in 0..p {
            matrix[r * p + k] = col[r];
        }
    }
    if !matrix.iter().all(|v| v.is_finite()) {
        return Ok(None);
    }
    match log_abs_det(&matrix, p) {
        Some(logdet) if logdet.is_finite() => Ok(Some(JacobianResult { matrix, logdet })),
        _ => Ok(None),
    }
}

/// A transport map under evaluation.
pub enum TransportMap<'a> {
    /// Conjugate argmin of a potential on the target side, solved
    /// numerically with the given pool and solver settings.
    Conjugate {
        potential: &'a (dyn Potential + Sync),
        pool: &'a [ManifoldPoint],
        solver: InnerSolverConfig,
    },
    /// The explicit smoothed site map of a discrete potential.
    Explicit(&'a RcpmModel),
}

/// One applied point: the image, the inner residual (zero for explicit
/// maps), and whether the solve failed outright.
pub struct AppliedPoint {
    pub y: ManifoldPoint,
    pub residual: f64,
    pub failed: bool,
}

impl TransportMap<'_> {
    pub fn manifold(&self) -> ManifoldKind {
        match self {
            TransportMap::Conjugate { potential, .. } => potential.manifold(),
            TransportMap::Explicit(model) => model.manifold,
        }
    }

    pub fn apply(&self, x: &ManifoldPoint) -> Result<AppliedPoint> {
        match self {
            TransportMap::Conjugate { potential, pool, solver } => {
                let solved = ctransform::inner_solve(*potential, x, pool, solver)?;
                Ok(AppliedPoint { y: solved.y, residual: solved.residual, failed: solved.failed })
            }
            TransportMap::Explicit(model) => {
                Ok(AppliedPoint { y: model.transport(x)?, residual: 0.0, failed: false })
            }
        }
    }

    /// Jacobian at an applied pair; `None` means gated.
    pub fn jacobian(
        &self,
        x: &ManifoldPoint,
        y: &ManifoldPoint,
        fd_step: f64,
    ) -> Result<Option<JacobianResult>> {
        match self {
            TransportMap::Conjugate { potential, .. } => {
                transport_jacobian_ift(*potential, x, y, fd_step)
            }
            TransportMap::Explicit(model) => {
                transport_jacobian_fd(|q| model.transport(q), x, y, fd_step)
            }
        }
    }
}

/// Evaluation summary over all batches. Confidence intervals are
/// `1.96 sd / sqrt(n_batches)` over per-batch means.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub kl_mean: f64,
    pub kl_ci: f64,
    pub ess_mean: f64,
    pub ess_ci: f64,
    /// Mean importance weight: a normalizing-constant check, one at an
    /// exact transport.
    pub z_hat: f64,
    /// Mean transport cost `E[d(x, T(x))^2 / 2]` over all points.
    pub mean_cost: f64,
    /// Relative duality gap of the underlying potential.
    pub monge_gap_rel: f64,
    /// Fraction of points excluded by residual or Jacobian gating.
    pub gated_fraction: f64,
    /// Mean inner residual over all points (zero for explicit maps).
    pub mean_residual: f64,
}

impl EvalReport {
    /// More than a fifth of the points gated: the KL and ESS columns are
    /// not trustworthy.
    pub fn unreliable(&self) -> bool {
        self.gated_fraction > 0.2
    }

    pub const CSV_HEADER: &'static str =
        "kl_mean,kl_ci,ess_mean,ess_ci,z_hat,mean_cost,monge_gap_rel,gated_fraction,mean_residual";

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.kl_mean,
            self.kl_ci,
            self.ess_mean,
            self.ess_ci,
            self.z_hat,
            self.mean_cost,
            self.monge_gap_rel,
            self.gated_fraction,
            self.mean_residual
        )?;
        Ok(())
    }
}

struct PointTerms {
    cost: f64,
    residual: f64,
    gated: bool,
    /// `log mu(x) - logdet - log nu(y)`.
    kl_term: f64,
    /// Importance weight `nu(y) / (T# mu)(y)`.
    weight: f64,
}

/// Monte Carlo evaluation of a transport map from `source` to `target`:
/// KL of the pushforward against the target, effective sample size of the
/// induced importance weights, transport cost, and the potential's duality
/// gap. Both measures need densities, so empirical targets are rejected.
pub fn evaluate(
    map: &TransportMap,
    source: &MeasureSpec,
    target: &MeasureSpec,
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let manifold = map.manifold();
    source.validate(manifold)?;
    target.validate(manifold)?;

    let mut batch_kl = Vec::with_capacity(config.n_batches);
    let mut batch_ess = Vec::with_capacity(config.n_batches);
    let mut batch_z = Vec::with_capacity(config.n_batches);
    let mut total_cost = 0.0;
    let mut total_residual = 0.0;
    let mut total_gated = 0usize;
    let n_total = (config.n_samples * config.n_batches) as f64;

    for b in 0..config.n_batches {
        let xs = source.sample_batch(
            manifold,
            config.n_samples,
            &mut rng::derive(config.seed, &[EVAL_TAG, b as u64]),
        )?;
        let terms: Vec<PointTerms> = xs
            .par_iter()
            .map(|x| -> Result<PointTerms> {
                let applied = map.apply(x)?;
                let d = dist(x, &applied.y)?;
                let cost = 0.5 * d * d;
                let mut gated = applied.failed || applied.residual > config.residual_gate;
                let mut kl_term = f64::NAN;
                let mut weight = f64::NAN;
                if !gated {
                    match map.jacobian(x, &applied.y, config.fd_step)? {
                        Some(jac) => {
                            let log_mu = source.log_density(manifold, x)?;
                            let log_nu = target.log_density(manifold, &applied.y)?;
                            kl_term = log_mu - jac.logdet - log_nu;
                            weight = (-kl_term).exp();
                            if !kl_term.is_finite() || !weight.is_finite() {
                                gated = true;
                            }
                        }
                        None => gated = true,
                    }
                }
                Ok(PointTerms { cost, residual: applied.residual, gated, kl_term, weight })
            })
            .collect::<Result<Vec<_>>>()?;

        let kept: Vec<&PointTerms> = terms.iter().filter(|t| !t.gated).collect();
        total_gated += terms.len() - kept.len();
        total_cost += terms.iter().map(|t| t.cost).sum::<f64>();
        total_residual += terms.iter().map(|t| t.residual).sum::<f64>();
        if kept.is_empty() {
            batch_kl.push(f64::NAN);
            batch_ess.push(f64::NAN);
            batch_z.push(f64::NAN);
            continue;
        }
        let n = kept.len() as f64;
        batch_kl.push(kept.iter().map(|t| t.kl_term).sum::<f64>() / n);
        let sum_w: f64 = kept.iter().map(|t| t.weight).sum();
        let sum_w2: f64 = kept.iter().map(|t| t.weight * t.weight).sum();
        batch_ess.push(if sum_w2 > 0.0 { sum_w * sum_w / (n * sum_w2) } else { 0.0 });
        batch_z.push(sum_w / n);
    }

    let (kl_mean, kl_ci) = mean_ci(&batch_kl);
    let (ess_mean, ess_ci) = mean_ci(&batch_ess);
    let (z_hat, _) = mean_ci(&batch_z);

    let monge_gap_rel = monge_gap_for(map, source, target, config)?.relative;

    Ok(EvalReport {
        kl_mean,
        kl_ci,
        ess_mean,
        ess_ci,
        z_hat,
        mean_cost: total_cost / n_total,
        monge_gap_rel,
        gated_fraction: total_gated as f64 / n_total,
        mean_residual: total_residual / n_total,
    })
}

fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

fn monge_gap_for(
    map: &TransportMap,
    source: &MeasureSpec,
    target: &MeasureSpec,
    config: &EvalConfig,
) -> Result<MongeGap> {
    match map {
        TransportMap::Conjugate { potential, solver, .. } => semidual::monge_gap(
            *potential,
            source,
            target,
            config.n_samples,
            solver,
            config.seed,
        ),
        TransportMap::Explicit(model) => {
            monge_gap_explicit(model, source, target, config.n_samples, config.seed)
        }
    }
}

/// Duality gap for a potential on the source side with an explicit map:
/// `E[c(x, T(x))] - (E_mu[phi] + E_nu[phi^c])`, the conjugate solved over
/// the manifold with the source batch as candidate pool.
pub fn monge_gap_explicit(
    model: &RcpmModel,
    source: &MeasureSpec,
    target: &MeasureSpec,
    n_samples: usize,
    seed: u64,
) -> Result<MongeGap> {
    let manifold = model.manifold;
    let xs = source.sample_batch(manifold, n_samples, &mut rng::derive(seed, &[GAP_TAG, 0]))?;
    let ys = target.sample_batch(manifold, n_samples, &mut rng::derive(seed, &[GAP_TAG, 1]))?;
    let inner = InnerSolverConfig::default();
    let n = n_samples as f64;
    let mut mean_cost = 0.0;
    let mut dual = 0.0;
    for x in &xs {
        let y = model.transport(x)?;
        let d = dist(x, &y)?;
        mean_cost += 0.5 * d * d / n;
        dual += model.potential(x)? / n;
    }
    let conjugates: Vec<f64> = ys
        .par_iter()
        .map(|y| ctransform::inner_solve(model, y, &xs, &inner).map(|s| s.value))
        .collect::<Result<Vec<_>>>()?;
    dual += conjugates.iter().sum::<f64>() / n;
    let gap = mean_cost - dual;
    let relative = if mean_cost > 0.0 { gap.abs() / mean_cost } else { 0.0 };
    Ok(MongeGap { gap, relative, mean_cost })
}

/// Root mean squared geodesic distance between two maps over given points.
pub fn rmse_between_maps<F, G>(points: &[ManifoldPoint], f: F, g: G) -> Result<f64>
where
    F: Fn(&ManifoldPoint) -> Result<ManifoldPoint> + Sync,
    G: Fn(&ManifoldPoint) -> Result<ManifoldPoint> + Sync,
{
    if points.is_empty() {
        return Err(Error::InvalidParameter("rmse needs at least one point".into()));
    }
    let total: f64 = points
        .par_iter()
        .map(|x| -> Result<f64> {
            let d = dist(&f(x)?, &g(x)?)?;
            Ok(d * d)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok((total / points.len() as f64).sqrt())
}

/// One cell of a dimension sweep.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepRow {
    pub p: usize,
    pub method: String,
    pub gamma: f64,
    pub seed: u64,
    pub kl: f64,
    pub ess: f64,
    pub seconds: f64,
}

pub const SWEEP_CSV_HEADER: &str = "p,method,gamma,seed,kl,ess,seconds";

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.16e},{},{:.16e},{:.16e},{:.3}",
            r.p, r.method, r.gamma, r.seed, r.kl, r.ess, r.seconds
        )?;
    }
    Ok(())
}

pub fn read_sweep_csv<R: Read>(mut r: R) -> Result<Vec<SweepRow>> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == SWEEP_CSV_HEADER => {}
        _ => return Err(Error::Malformed("missing sweep CSV header".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Malformed(format!("sweep CSV row {} has {} fields", i + 2, fields.len())));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.trim().parse().map_err(|_| Error::Malformed(format!("bad number {s:?} in sweep CSV")))
        };
        rows.push(SweepRow {
            p: fields[0]
                .trim()
                .parse()
                .map_err(|_| Error::Malformed(format!("bad dimension {:?}", fields[0])))?,
            method: fields[1].trim().to_string(),
            gamma: parse_f(fields[2])?,
            seed: fields[3]
                .trim()
                .parse()
                .map_err(|_| Error::Malformed(format!("bad seed {:?}", fields[3])))?,
            kl: parse_f(fields[4])?,
            ess: parse_f(fields[5])?,
            seconds: parse_f(fields[6])?,
        });
    }
    Ok(rows)
}

/// A elapsed-seconds helper for sweep rows.
pub fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}
