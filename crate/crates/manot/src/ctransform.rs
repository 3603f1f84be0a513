//! The c-transform `psi^c(x) = min_y { cost(x, y) - psi(y) }` with
//! `cost = d^2/2`, computed by Riemannian descent on the manifold.
//!
//! The inner objective `F(x, .) = d(x, .)^2/2 - psi(.)` has tangent gradient
//! `g(y) = -log_y(x) - grad psi(y)`. The solver starts from a soft-argmin
//! over a candidate pool (`lse_init`), descends with a first-order optimizer
//! whose state lives in tangent coordinates, retracts through the
//! exponential map, and returns the best-value iterate visited. The run
//! stops early only when that incumbent also meets the residual tolerance,
//! so the reported residual at an early return is never worse than the one
//! at the initial point.
//!
//! Optimizer state is re-expressed after every retraction by projecting the
//! first-moment vector through the new tangent basis; the second moment of
//! Adam is carried unchanged across the retraction (its coordinates are
//! basis-dependent, but the bases before and after a small step differ by
//! O(step), which is below the noise floor of the moment estimate).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    dist, exp_map, log_map, tangent_basis, ManifoldKind, ManifoldPoint, TangentVector,
};
use crate::potential::Potential;

/// First-order update rule for the inner descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InnerOptimizer {
    Gd,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for InnerOptimizer {
    fn default() -> Self {
        InnerOptimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

fn default_max_iters() -> usize {
    2500
}
fn default_step_size() -> f64 {
    5e-2
}
fn default_gamma_lse() -> f64 {
    0.1
}
fn default_residual_tol() -> f64 {
    1e-4
}
fn default_perturb_scale() -> f64 {
    1e-7
}

/// Settings for [`inner_solve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerSolverConfig {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default)]
    pub optimizer: InnerOptimizer,
    /// Temperature of the soft-argmin initialization.
    #[serde(default = "default_gamma_lse")]
    pub gamma_lse: f64,
    /// Number of pool candidates scored by the initialization; `None` means
    /// the whole pool.
    #[serde(default)]
    pub init_pool_size: Option<usize>,
    #[serde(default = "default_residual_tol")]
    pub residual_tol: f64,
    /// Nudge applied to the iterate when the gradient hits the cut locus.
    #[serde(default = "default_perturb_scale")]
    pub perturb_scale: f64,
}

impl Default for InnerSolverConfig {
    fn default() -> Self {
        InnerSolverConfig {
            max_iters: default_max_iters(),
            step_size: default_step_size(),
            optimizer: InnerOptimizer::default(),
            gamma_lse: default_gamma_lse(),
            init_pool_size: None,
            residual_tol: default_residual_tol(),
            perturb_scale: default_perturb_scale(),
        }
    }
}

impl InnerSolverConfig {
    /// A configuration for tight solves: plain gradient descent converges
    /// linearly near the minimum, while Adam stalls at a residual plateau
    /// proportional to the step size.
    pub fn tight_gd(residual_tol: f64) -> Self {
        InnerSolverConfig {
            optimizer: InnerOptimizer::Gd,
            step_size: 0.5,
            max_iters: 4000,
            residual_tol,
            ..InnerSolverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidParameter("step_size must be positive".into()));
        }
        if !(self.gamma_lse > 0.0) {
            return Err(Error::InvalidParameter("gamma_lse must be positive".into()));
        }
        if !(self.residual_tol >= 0.0) {
            return Err(Error::InvalidParameter("residual_tol must be nonnegative".into()));
        }
        match self.optimizer {
            InnerOptimizer::Momentum { beta } if !(0.0..1.0).contains(&beta) => {
                Err(Error::InvalidParameter("momentum beta must lie in [0, 1)".into()))
            }
            InnerOptimizer::Adam { beta1, beta2, eps }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) =>
            {
                Err(Error::InvalidParameter("adam parameters out of range".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Outcome of one inner minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolveResult {
    /// Best-value iterate; the approximate argmin `y*(x)`.
    pub y: ManifoldPoint,
    /// `F(x, y) = d(x, y)^2/2 - psi(y)` at the returned point.
    pub value: f64,
    /// Tangent gradient norm at the returned point.
    pub residual: f64,
    /// Iterations taken (0 when the initialization already meets the
    /// tolerance).
    pub iters: usize,
    pub converged: bool,
    /// Cut-locus nudges applied during the run.
    pub perturbations: usize,
    /// True when the run had to stop because repeated nudges could not move
    /// the iterate off the cut locus. A merely non-converged solve (budget
    /// exhausted above the residual tolerance) is not a failure: its best
    /// iterate still upper-bounds the transform value.
    pub failed: bool,
}

/// Softmax weights over pre-divided scores, computed with max subtraction.
pub fn lse_weights(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Soft-argmin initialization: candidates are weighted by
/// `softmax((psi(y_k) - cost(x, y_k)) / gamma)` and combined intrinsically.
/// On the sphere the weighted ambient combination is projected back; on the
/// torus each coordinate takes a weighted circular mean. A degenerate
/// combination (weighted points cancel) falls back to the best-scoring pool
/// element, lowest index on ties.
///
/// Returns the initialization point together with the weights.
pub fn lse_init_with_weights<P: Potential + ?Sized>(
    psi: &P,
    x: &ManifoldPoint,
    pool: &[ManifoldPoint],
    gamma: f64,
) -> Result<(ManifoldPoint, Vec<f64>)> {
    if pool.is_empty() {
        return Err(Error::InvalidParameter("initialization pool is empty".into()));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter("gamma_lse must be positive".into()));
    }
    let manifold = x.manifold;
    let mut scores = Vec::with_capacity(pool.len());
    for y in pool {
        let d = dist(x, y)?;
        scores.push((psi.value(y)? - 0.5 * d * d) / gamma);
    }
    let weights = lse_weights(&scores);
    // First index attaining the maximal score.
    let best = scores
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc })
        .0;
    // Overflowed potentials give non-finite scores; degrade to the hard
    // argmax so the caller still receives a usable point.
    if weights.iter().any(|w| !w.is_finite()) {
        let mut one_hot = vec![0.0; pool.len()];
        one_hot[best] = 1.0;
        return Ok((pool[best].clone(), one_hot));
    }
    let ambient = manifold.ambient_dim();
    let point = match manifold {
        ManifoldKind::Sphere { .. } => {
            let mut combo = vec![0.0; ambient];
            for (w, y) in weights.iter().zip(pool) {
                for (c, v) in combo.iter_mut().zip(&y.coords) {
                    *c += w * v;
                }
            }
            match crate::geometry::project(manifold, &combo) {
                Ok(p) => p,
                Err(Error::DegenerateProjection) => pool[best].clone(),
                Err(e) => return Err(e),
            }
        }
        ManifoldKind::Torus { .. } => {
            let mut coords = vec![0.0; ambient];
            for (j, c) in coords.iter_mut().enumerate() {
                let (mut s, mut co) = (0.0, 0.0);
                for (w, y) in weights.iter().zip(pool) {
                    s += w * y.coords[j].sin();
                    co += w * y.coords[j].cos();
                }
                *c = if s.hypot(co) < 1e-12 { pool[best].coords[j] } else { s.atan2(co) };
            }
            crate::geometry::project(manifold, &coords)?
        }
    };
    Ok((point, weights))
}

/// [`lse_init_with_weights`] without the weights.
pub fn lse_init<P: Potential + ?Sized>(
    psi: &P,
    x: &ManifoldPoint,
    pool: &[ManifoldPoint],
    gamma: f64,
) -> Result<ManifoldPoint> {
    Ok(lse_init_with_weights(psi, x, pool, gamma)?.0)
}

enum OptState {
    Gd,
    Momentum { beta: f64, m: Vec<f64> },
    Adam { beta1: f64, beta2: f64, eps: f64, m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl OptState {
    fn new(optimizer: InnerOptimizer, dim: usize) -> OptState {
        match optimizer {
            InnerOptimizer::Gd => OptState::Gd,
            InnerOptimizer::Momentum { beta } => OptState::Momentum { beta, m: vec![0.0; dim] },
            InnerOptimizer::Adam { beta1, beta2, eps } => {
                OptState::Adam { beta1, beta2, eps, m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
            }
        }
    }

    /// Descent displacement (in tangent coordinates) for gradient `g`.
    fn step(&mut self, g: &[f64], alpha: f64) -> Vec<f64> {
        match self {
            OptState::Gd => g.iter().map(|gi| -alpha * gi).collect(),
            OptState::Momentum { beta, m } => {
                for (mi, gi) in m.iter_mut().zip(g) {
                    *mi = *beta * *mi + gi;
                }
                m.iter().map(|mi| -alpha * mi).collect()
            }
            OptState::Adam { beta1, beta2, eps, m, v, t } => {
                *t += 1;
                let (b1, b2) = (*beta1, *beta2);
                for ((mi, vi), gi) in m.iter_mut().zip(v.iter_mut()).zip(g) {
                    *mi = b1 * *mi + (1.0 - b1) * gi;
                    *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                }
                let (c1, c2) = (1.0 - b1.powi(*t), 1.0 - b2.powi(*t));
                m.iter()
                    .zip(v.iter())
                    .map(|(mi, vi)| -alpha * (mi / c1) / ((vi / c2).sqrt() + *eps))
                    .collect()
            }
        }
    }

    /// Re-expresses the first moment after a retraction: ambient transport
    /// through the old basis, projection through the new one.
    fn transport(&mut self, old: &crate::geometry::TangentBasis, new: &crate::geometry::TangentBasis) {
        let reproject = |m: &mut Vec<f64>| {
            let ambient = old.from_coords(m);
            *m = new.to_coords(&ambient);
        };
        match self {
            OptState::Gd => {}
            OptState::Momentum { m, .. } => reproject(m),
            OptState::Adam { m, .. } => reproject(m),
        }
    }
}

/// Value and tangent gradient of `F(x, .)` at `y`, with cut-locus recovery:
/// when `log_y(x)` does not exist the iterate is nudged by `perturb_scale`
/// along the first tangent basis column and the evaluation retried.
fn eval_objective<P: Potential + ?Sized>(
    psi: &P,
    x: &ManifoldPoint,
    y: ManifoldPoint,
    perturb_scale: f64,
    perturbations: &mut usize,
) -> Result<(ManifoldPoint, f64, TangentVector)> {
    let mut y = y;
    for _ in 0..3 {
        match log_map(&y, x) {
            Ok(toward_x) => {
                let (psi_val, psi_grad) = psi.value_and_grad(&y)?;
                let d = dist(&y, x)?;
                let value = 0.5 * d * d - psi_val;
                let grad = toward_x.scale(-1.0).add(&psi_grad.scale(-1.0))?;
                return Ok((y, value, grad));
            }
            Err(Error::CutLocus) => {
                *perturbations += 1;
                let basis = tangent_basis(&y)?;
                let nudge = basis.columns[0].iter().map(|c| c * perturb_scale).collect();
                y = exp_map(&TangentVector { base: y.clone(), components: nudge })?;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::CutLocus)
}

/// Minimizes `F(x, .)` starting from an explicit point.
pub fn inner_solve_from<P: Potential + ?Sized>(
    psi: &P,
    x: &ManifoldPoint,
    init: ManifoldPoint,
    config: &InnerSolverConfig,
) -> Result<InnerSolveResult> {
    config.validate()?;
    if psi.manifold() != x.manifold {
        return Err(Error::ManifoldMismatch(psi.manifold(), x.manifold));
    }
    let dim = x.manifold.intrinsic_dim();
    let mut state = OptState::new(config.optimizer, dim);
    let mut perturbations = 0usize;

    let evaluated = eval_objective(psi, x, init, config.perturb_scale, &mut perturbations);
    let (mut y, mut value, mut grad) = match evaluated {
        Ok(t) => t,
        Err(Error::CutLocus) => {
            return Err(Error::CutLocus);
        }
        Err(e) => return Err(e),
    };
    let mut residual = grad.norm();
    let mut best =
        InnerSolveResult { y: y.clone(), value, residual, iters: 0, converged: false, perturbations, failed: false };
    // A non-finite objective at the start point cannot be descended from;
    // stepping on it would poison the iterate coordinates.
    if !value.is_finite() || !residual.is_finite() {
        best.failed = true;
        return Ok(best);
    }

    let mut basis = tangent_basis(&y)?;
    for iter in 1..=config.max_iters {
        if best.residual <= config.residual_tol {
            best.converged = true;
            break;
        }
        let g_coords = basis.to_coords(&grad.components);
        let delta = state.step(&g_coords, config.step_size);
        let next = exp_map(&TangentVector { base: y.clone(), components: basis.from_coords(&delta) })?;
        let stepped = eval_objective(psi, x, next, config.perturb_scale, &mut perturbations);
        match stepped {
            Ok((ny, nv, ng)) => {
                y = ny;
                value = nv;
                grad = ng;
            }
            Err(Error::CutLocus) => {
                // Three nudges failed to move off the cut locus; report the
                // incumbent as a failed solve.
                best.perturbations = perturbations;
                best.iters = iter;
                best.failed = true;
                return Ok(best);
            }
            Err(e) => return Err(e),
        }
        residual = grad.norm();
        // Keep the incumbent when the objective turns non-finite mid-run:
        // further steps from here cannot be trusted.
        if !value.is_finite() || !residual.is_finite() {
            best.iters = iter;
            best.perturbations = perturbations;
            return Ok(best);
        }
        let new_basis = tangent_basis(&y)?;
        state.transport(&basis, &new_basis);
        basis = new_basis;
        if value <= best.value {
            best = InnerSolveResult {
                y: y.clone(),
                value,
                residual,
                iters: iter,
                converged: false,
                perturbations,
                failed: false,
            };
        } else {
            best.iters = iter;
            best.perturbations = perturbations;
        }
    }
    best.converged = best.residual <= config.residual_tol;
    best.perturbations = perturbations;
    Ok(best)
}

/// Minimizes `F(x, .)` from the soft-argmin initialization over `pool`.
pub fn inner_solve<P: Potential + ?Sized>(
    psi: &P,
    x: &ManifoldPoint,
    pool: &[ManifoldPoint],
    config: &InnerSolverConfig,
) -> Result<InnerSolveResult> {
    config.validate()?;
    let k = config.init_pool_size.unwrap_or(pool.len()).min(pool.len());
    let init = lse_init(psi, x, &pool[..k], config.gamma_lse)?;
    inner_solve_from(psi, x, init, config)
}

/// `psi^c(x)`: the value of the inner minimization.
pub fn c_transform_value<P: Potential + ?Sized>(
    psi: &P,
    x: &ManifoldPoint,
    pool: &[ManifoldPoint],
    config: &InnerSolverConfig,
) -> Result<f64> {
    Ok(inner_solve(psi, x, pool, config)?.value)
}

/// The transport map `T(x) = argmin_y F(x, y)`.
pub fn transport_point<P: Potential + ?Sized>(
    psi: &P,
    x: &ManifoldPoint,
    pool: &[ManifoldPoint],
    config: &InnerSolverConfig,
) -> Result<ManifoldPoint> {
    Ok(inner_solve(psi, x, pool, config)?.y)
}

/// A potential defined as the numeric c-transform of another potential:
/// `phi^c(y) = min_z { cost(y, z) - phi(z) }`.
///
/// The gradient uses the envelope theorem: at the solved argmin `z*` the
/// dependence through `z*` drops out and
/// `grad phi^c(y) = grad_y cost(y, z*) = -log_y(z*)`.
pub struct NumericCTransform<'a, P: Potential + ?Sized> {
    pub base: &'a P,
    pub pool: &'a [ManifoldPoint],
    pub config: InnerSolverConfig,
}

impl<'a, P: Potential + ?Sized> NumericCTransform<'a, P> {
    pub fn new(base: &'a P, pool: &'a [ManifoldPoint], config: InnerSolverConfig) -> Self {
        NumericCTransform { base, pool, config }
    }
}

impl<P: Potential + ?Sized> Potential for NumericCTransform<'_, P> {
    fn manifold(&self) -> ManifoldKind {
        self.base.manifold()
    }

    fn value(&self, y: &ManifoldPoint) -> Result<f64> {
        c_transform_value(self.base, y, self.pool, &self.config)
    }

    fn value_and_grad(&self, y: &ManifoldPoint) -> Result<(f64, TangentVector)> {
        let solved = inner_solve(self.base, y, self.pool, &self.config)?;
        let grad = crate::geometry::log_map_robust(y, &solved.y)?.scale(-1.0);
        Ok((solved.value, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::select_landmarks_fps;
    use crate::geometry::{sample_uniform, wrap_angle};
    use crate::network::{init, Activation, MlpConfig};
    use crate::potential::PotentialModel;
    use crate::rng;

    /// A constant potential.
    struct Const {
        manifold: ManifoldKind,
        kappa: f64,
    }

    impl Potential for Const {
        fn manifold(&self) -> ManifoldKind {
            self.manifold
        }
        fn value(&self, _y: &ManifoldPoint) -> Result<f64> {
            Ok(self.kappa)
        }
        fn value_and_grad(&self, y: &ManifoldPoint) -> Result<(f64, TangentVector)> {
            Ok((self.kappa, TangentVector::zero(y)))
        }
    }

    /// `base + kappa`.
    struct Shifted<'a, P: Potential> {
        base: &'a P,
        kappa: f64,
    }

    impl<P: Potential> Potential for Shifted<'_, P> {
        fn manifold(&self) -> ManifoldKind {
            self.base.manifold()
        }
        fn value(&self, y: &ManifoldPoint) -> Result<f64> {
            Ok(self.base.value(y)? + self.kappa)
        }
        fn value_and_grad(&self, y: &ManifoldPoint) -> Result<(f64, TangentVector)> {
            let (v, g) = self.base.value_and_grad(y)?;
            Ok((v + self.kappa, g))
        }
    }

    fn small_model(manifold: ManifoldKind, seed: u64, scale: f64) -> PotentialModel {
        let landmarks = select_landmarks_fps(manifold, 8, seed, None).unwrap();
        let config = MlpConfig { input_dim: 8, hidden: vec![16], activation: Activation::Softplus { beta: 1.0 } };
        let mut params = init(&config, &mut rng::derive(seed, &[7]));
        for layer in &mut params.layers {
            for w in &mut layer.weight {
                *w *= scale;
            }
        }
        PotentialModel::new(landmarks, params).unwrap()
    }

    fn uniform_pool(manifold: ManifoldKind, n: usize, seed: u64) -> Vec<ManifoldPoint> {
        let mut r = rng::derive(seed, &[3]);
        (0..n).map(|_| sample_uniform(manifold, &mut r)).collect()
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let mut c = InnerSolverConfig::default();
        c.max_iters = 0;
        assert!(c.validate().is_err());
        let mut c = InnerSolverConfig::default();
        c.step_size = 0.0;
        assert!(c.validate().is_err());
        let mut c = InnerSolverConfig::default();
        c.gamma_lse = -0.1;
        assert!(c.validate().is_err());
        let mut c = InnerSolverConfig::default();
        c.optimizer = InnerOptimizer::Momentum { beta: 1.0 };
        assert!(c.validate().is_err());
        assert!(InnerSolverConfig::default().validate().is_ok());
    }

    /// Dense uniform sampling brackets the true minimum from above; a
    /// converged solve must sit within the sampling resolution of it.
    #[test]
    fn solve_matches_dense_monte_carlo_minimum() {
        let manifold = ManifoldKind::Sphere { dim: 2 };
        let psi = small_model(manifold, 40, 0.3);
        let pool = uniform_pool(manifold, 64, 41);
        let config = InnerSolverConfig::tight_gd(1e-8);
        let mut r = rng::derive(42, &[0]);
        for _ in 0..3 {
            let x = sample_uniform(manifold, &mut r);
            let solved = inner_solve(&psi, &x, &pool, &config).unwrap();
            assert!(solved.converged);
            let mut mc = f64::INFINITY;
            let mut mc_rng = rng::derive(43, &[1]);
            for _ in 0..1_000_000 {
                let y = sample_uniform(manifold, &mut mc_rng);
                let d = dist(&x, &y).unwrap();
                mc = mc.min(0.5 * d * d - psi.value(&y).unwrap());
            }
            assert!(solved.value <= mc + 1e-6, "solver {:.8} vs dense search {:.8}", solved.value, mc);
            assert!(mc - solved.value <= 2e-3, "solver {:.8} vs dense search {:.8}", solved.value, mc);
        }
    }

    /// `|psi_1^c - psi_2^c| <= sup |psi_1 - psi_2|`: the c-transform is a
    /// sup-norm contraction.
    #[test]
    fn c_transform_is_a_sup_norm_contraction() {
        let manifold = ManifoldKind::Torus { dim: 2 };
        let psi1 = small_model(manifold, 50, 0.4);
        let psi2 = small_model(manifold, 51, 0.4);
        let mut r = rng::derive(52, &[0]);
        let mut sup = 0.0_f64;
        for _ in 0..20_000 {
            let y = sample_uniform(manifold, &mut r);
            sup = sup.max((psi1.value(&y).unwrap() - psi2.value(&y).unwrap()).abs());
        }
        let pool = uniform_pool(manifold, 64, 53);
        let config = InnerSolverConfig::tight_gd(1e-8);
        for _ in 0..8 {
            let x = sample_uniform(manifold, &mut r);
            let v1 = c_transform_value(&psi1, &x, &pool, &config).unwrap();
            let v2 = c_transform_value(&psi2, &x, &pool, &config).unwrap();
            assert!(
                (v1 - v2).abs() <= 1.02 * sup + 1e-4,
                "transform gap {:.6} exceeds potential gap {:.6}",
                (v1 - v2).abs(),
                sup
            );
        }
    }

    /// For `psi = kappa` constant the minimizer is `y = x` and the value is
    /// exactly `-kappa`.
    #[test]
    fn constant_potential_transforms_to_its_negation() {
        for manifold in [ManifoldKind::Sphere { dim: 2 }, ManifoldKind::Torus { dim: 3 }] {
            let psi = Const { manifold, kappa: 0.8 };
            let pool = uniform_pool(manifold, 32, 60);
            let config = InnerSolverConfig::tight_gd(1e-10);
            let mut r = rng::derive(61, &[0]);
            for _ in 0..3 {
                let x = sample_uniform(manifold, &mut r);
                let solved = inner_solve(&psi, &x, &pool, &config).unwrap();
                assert!(solved.converged);
                assert!((solved.value + 0.8).abs() <= 1e-9, "value {:.3e}", solved.value + 0.8);
                assert!(dist(&solved.y, &x).unwrap() <= 1e-6);
            }
        }
    }

    /// Adding a constant to the potential shifts the transform by its
    /// negation, up to roundoff in the solve path.
    #[test]
    fn constant_shift_passes_through_with_sign_flip() {
        let manifold = ManifoldKind::Sphere { dim: 2 };
        let psi = small_model(manifold, 70, 0.4);
        let shifted = Shifted { base: &psi, kappa: 0.37 };
        let pool = uniform_pool(manifold, 64, 71);
        let config = InnerSolverConfig::tight_gd(1e-10);
        let mut r = rng::derive(72, &[0]);
        for _ in 0..4 {
            let x = sample_uniform(manifold, &mut r);
            let v = c_transform_value(&psi, &x, &pool, &config).unwrap();
            let vs = c_transform_value(&shifted, &x, &pool, &config).unwrap();
            assert!((vs - (v - 0.37)).abs() <= 1e-9, "shift error {:.3e}", vs - (v - 0.37));
        }
    }

    /// With an oversized step the raw iterates overshoot, but the returned
    /// iterate never has a worse value than the initialization.
    #[test]
    fn returned_value_never_exceeds_the_initialization() {
        let manifold = ManifoldKind::Torus { dim: 2 };
        let psi = small_model(manifold, 80, 0.5);
        let pool = uniform_pool(manifold, 32, 81);
        let config = InnerSolverConfig {
            optimizer: InnerOptimizer::Gd,
            step_size: 1.5,
            max_iters: 50,
            residual_tol: 0.0,
            ..InnerSolverConfig::default()
        };
        let mut r = rng::derive(82, &[0]);
        for _ in 0..5 {
            let x = sample_uniform(manifold, &mut r);
            let y0 = lse_init(&psi, &x, &pool, config.gamma_lse).unwrap();
            let d0 = dist(&x, &y0).unwrap();
            let f0 = 0.5 * d0 * d0 - psi.value(&y0).unwrap();
            let solved = inner_solve(&psi, &x, &pool, &config).unwrap();
            assert!(solved.value <= f0 + 1e-12, "value {:.8} worse than init {:.8}", solved.value, f0);
        }
    }

    /// The reported residual is the gradient norm at the returned point,
    /// not at the last iterate.
    #[test]
    fn reported_residual_is_recomputable_at_the_returned_point() {
        let manifold = ManifoldKind::Sphere { dim: 3 };
        let psi = small_model(manifold, 90, 0.5);
        let pool = uniform_pool(manifold, 32, 91);
        // Loose iteration budget: the run ends un-converged mid-descent.
        let config = InnerSolverConfig { max_iters: 7, residual_tol: 1e-12, ..InnerSolverConfig::default() };
        let x = sample_uniform(manifold, &mut rng::derive(92, &[0]));
        let solved = inner_solve(&psi, &x, &pool, &config).unwrap();
        let toward_x = log_map(&solved.y, &x).unwrap();
        let (_, psi_grad) = psi.value_and_grad(&solved.y).unwrap();
        let g = toward_x.scale(-1.0).add(&psi_grad.scale(-1.0)).unwrap();
        assert_eq!(solved.residual, g.norm());
    }

    /// Early convergence implies the returned residual improved on the
    /// initial one; otherwise the iteration budget was exhausted.
    #[test]
    fn residual_at_return_never_worse_than_at_init_unless_budget_hit() {
        let manifold = ManifoldKind::Torus { dim: 3 };
        let psi = small_model(manifold, 95, 0.5);
        let pool = uniform_pool(manifold, 32, 96);
        let mut r = rng::derive(97, &[0]);
        for max_iters in [3usize, 2500] {
            let config = InnerSolverConfig { max_iters, ..InnerSolverConfig::default() };
            let x = sample_uniform(manifold, &mut r);
            let y0 = lse_init(&psi, &x, &pool, config.gamma_lse).unwrap();
            let from0 = inner_solve_from(&psi, &x, y0.clone(), &config).unwrap();
            let toward_x = log_map(&y0, &x).unwrap();
            let (_, g0) = psi.value_and_grad(&y0).unwrap();
            let r0 = toward_x.scale(-1.0).add(&g0.scale(-1.0)).unwrap().norm();
            assert!(
                from0.residual <= r0 + 1e-12 || from0.iters == max_iters,
                "residual {:.3e} vs init {:.3e} at {} iters",
                from0.residual,
                r0,
                from0.iters
            );
        }
    }

    /// Starting exactly at the antipode of `x`, the cut-locus nudge makes
    /// the solve recover and converge to `x` for a constant potential.
    #[test]
    fn antipodal_start_recovers_through_perturbation() {
        let manifold = ManifoldKind::Sphere { dim: 2 };
        let psi = Const { manifold, kappa: 0.0 };
        let x = sample_uniform(manifold, &mut rng::derive(100, &[0]));
        let antipode = ManifoldPoint::new(manifold, x.coords.iter().map(|c| -c).collect()).unwrap();
        let config = InnerSolverConfig::tight_gd(1e-8);
        let solved = inner_solve_from(&psi, &x, antipode, &config).unwrap();
        assert!(solved.converged);
        assert!(solved.perturbations >= 1);
        assert!(dist(&solved.y, &x).unwrap() <= 1e-6);
    }

    /// Symmetric pools cancel in the weighted combination; the fallback
    /// picks the lowest-index best-scoring element.
    #[test]
    fn degenerate_initialization_falls_back_to_best_pool_element() {
        let sphere = ManifoldKind::Sphere { dim: 2 };
        let psi = Const { manifold: sphere, kappa: 0.0 };
        let x = ManifoldPoint::new(sphere, vec![0.0, 0.0, 1.0]).unwrap();
        let pool = vec![
            ManifoldPoint::new(sphere, vec![1.0, 0.0, 0.0]).unwrap(),
            ManifoldPoint::new(sphere, vec![-1.0, 0.0, 0.0]).unwrap(),
        ];
        let (init, weights) = lse_init_with_weights(&psi, &x, &pool, 0.1).unwrap();
        assert!((weights[0] - 0.5).abs() < 1e-12 && (weights[1] - 0.5).abs() < 1e-12);
        assert_eq!(init.coords, pool[0].coords);

        let torus = ManifoldKind::Torus { dim: 2 };
        let psi_t = Const { manifold: torus, kappa: 0.0 };
        let xt = ManifoldPoint::new(torus, vec![std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2]).unwrap();
        let pool_t = vec![
            ManifoldPoint::new(torus, vec![0.0, 0.0]).unwrap(),
            ManifoldPoint::new(torus, vec![std::f64::consts::PI, std::f64::consts::PI]).unwrap(),
        ];
        let (init_t, weights_t) = lse_init_with_weights(&psi_t, &xt, &pool_t, 0.1).unwrap();
        assert!((weights_t[0] - 0.5).abs() < 1e-12);
        for (a, b) in init_t.coords.iter().zip(&pool_t[0].coords) {
            assert!(wrap_angle(a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_element_softmax_weights_match_the_closed_form() {
        let scores = [1.3, -0.2];
        let w = lse_weights(&scores);
        let expected = 1.0 / (1.0 + (-1.5_f64).exp());
        assert!((w[0] - expected).abs() < 1e-15);
        assert!((w[0] + w[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn init_pool_size_truncates_the_candidate_set() {
        let manifold = ManifoldKind::Sphere { dim: 2 };
        let psi = small_model(manifold, 110, 0.3);
        let pool = uniform_pool(manifold, 16, 111);
        let x = sample_uniform(manifold, &mut rng::derive(112, &[0]));
        let config = InnerSolverConfig {
            init_pool_size: Some(1),
            step_size: 1e-30,
            max_iters: 1,
            residual_tol: 0.0,
            optimizer: InnerOptimizer::Gd,
            ..InnerSolverConfig::default()
        };
        let solved = inner_solve(&psi, &x, &pool, &config).unwrap();
        // With one candidate the init is that candidate; a vanishing step
        // keeps the iterate there.
        for (a, b) in solved.y.coords.iter().zip(&pool[0].coords) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    /// The numeric c-transform wrapper obeys the envelope theorem: its
    /// gradient matches geodesic finite differences of its value.
    #[test]
    fn numeric_c_transform_gradient_matches_finite_differences() {
        let manifold = ManifoldKind::Sphere { dim: 2 };
        let phi = small_model(manifold, 120, 0.4);
        let pool = uniform_pool(manifold, 64, 121);
        let ct = NumericCTransform::new(&phi, &pool, InnerSolverConfig::tight_gd(1e-10));
        let h = 1e-4;
        let mut r = rng::derive(122, &[0]);
        for _ in 0..3 {
            let y = sample_uniform(manifold, &mut r);
            let (_, grad) = ct.value_and_grad(&y).unwrap();
            let basis = tangent_basis(&y).unwrap();
            for j in 0..2 {
                let mut coords = vec![0.0; 2];
                coords[j] = h;
                let plus = exp_map(&TangentVector { base: y.clone(), components: basis.from_coords(&coords) }).unwrap();
                coords[j] = -h;
                let minus = exp_map(&TangentVector { base: y.clone(), components: basis.from_coords(&coords) }).unwrap();
                let fd = (ct.value(&plus).unwrap() - ct.value(&minus).unwrap()) / (2.0 * h);
                let analytic = basis.to_coords(&grad.components)[j];
                assert!(
                    (analytic - fd).abs() <= 2e-3 * analytic.abs().max(fd.abs()) + 1e-5,
                    "component {j}: analytic {analytic:.6e} vs fd {fd:.6e}"
                );
            }
        }
    }

    /// The double transform dominates the original potential pointwise, and
    /// reproduces it when the potential is already a c-transform.
    #[test]
    fn double_transform_dominates_and_fixes_c_concave_potentials() {
        let manifold = ManifoldKind::Sphere { dim: 2 };
        let phi = small_model(manifold, 130, 0.4);
        let pool_z = uniform_pool(manifold, 48, 131);
        let pool_y = uniform_pool(manifold, 48, 132);
        let tight = InnerSolverConfig::tight_gd(1e-8);
        let phi_c = NumericCTransform::new(&phi, &pool_z, tight.clone());
        let mut r = rng::derive(133, &[0]);
        // phi^cc >= phi pointwise.
        for _ in 0..3 {
            let x = sample_uniform(manifold, &mut r);
            let vcc = c_transform_value(&phi_c, &x, &pool_y, &tight).unwrap();
            assert!(vcc >= phi.value(&x).unwrap() - 1e-6, "double transform fell below the potential");
        }
        // A potential that is already a c-transform is a fixed point:
        // take tilde = phi^c, then tilde^cc = tilde.
        let tilde = NumericCTransform::new(&phi, &pool_z, tight.clone());
        let tilde_c = NumericCTransform::new(&tilde, &pool_y, tight.clone());
        for _ in 0..2 {
            let x = sample_uniform(manifold, &mut r);
            let vcc = c_transform_value(&tilde_c, &x, &pool_z, &tight).unwrap();
            let v = tilde.value(&x).unwrap();
            assert!((vcc - v).abs() <= 5e-3, "fixed point violated: {:.6} vs {:.6}", vcc, v);
        }
    }

    /// A potential that has overflowed to infinity (or NaN) produces a
    /// failed solve at a finite point instead of an error or a poisoned
    /// iterate.
    #[test]
    fn non_finite_potentials_degrade_to_failed_solves() {
        let manifold = ManifoldKind::Sphere { dim: 2 };
        let pool = uniform_pool(manifold, 8, 40);
        let x = sample_uniform(manifold, &mut rng::derive(41, &[0]));
        for kappa in [f64::INFINITY, f64::NEG_INFINITY, f64::NAN] {
            let psi = Const { manifold, kappa };
            let solved = inner_solve(&psi, &x, &pool, &InnerSolverConfig::default()).unwrap();
            assert!(solved.failed, "kappa = {kappa} should fail the solve");
            assert!(
                solved.y.coords.iter().all(|c| c.is_finite()),
                "returned point must stay finite"
            );
        }
    }
}
