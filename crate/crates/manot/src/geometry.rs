//! Points, tangent vectors, and the exponential/logarithm calculus on the
//! unit hypersphere `S^p` and the flat torus `T^p`.
//!
//! Conventions:
//!
//! - `S^p` is the unit sphere in `R^{p+1}`; points are unit vectors, tangent
//!   vectors at `x` are ambient vectors orthogonal to `x`.
//! - `T^p = (R / 2 pi Z)^p`; points are angle vectors with coordinates in
//!   `[0, 2 pi)`, tangent vectors are plain vectors in `R^p`.
//! - Geodesic distance: `arccos(<x, y>)` on the sphere (inner product clamped
//!   to `[-1, 1]`), `sqrt(sum_i wrap(x_i - y_i)^2)` on the torus, where
//!   `wrap` reduces an angle difference to `(-pi, pi]` with `wrap(pi) = +pi`.
//! - Both manifolds have injectivity radius `pi`. The sphere's cut locus of
//!   `x` is the antipode `-x`; `log_map(x, -x)` is refused with
//!   [`Error::CutLocus`]. On the torus `wrap` settles ties, so `log_map`
//!   never fails.
//!
//! The gradient of the half squared distance satisfies
//! `grad_x d(x, y)^2 / 2 = -log_x(y)`; solvers and evaluation lean on this
//! identity, and the tests check it against finite differences.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PI: f64 = std::f64::consts::PI;
const TAU: f64 = std::f64::consts::TAU;

/// Norm below which the sphere exponential falls back to projecting `x + v`.
const EXP_SMALL_ANGLE: f64 = 1e-12;
/// Angle below which the sphere logarithm uses its small-angle limit.
const LOG_SMALL_ANGLE: f64 = 1e-8;
/// `1 + <x, y>` at or below this marks `y` as antipodal to `x`.
const ANTIPODAL_GAP: f64 = 1e-14;
/// Ambient norm below which spherical projection is refused.
const PROJECT_MIN_NORM: f64 = 1e-12;

/// Which manifold a point lives on; carries the intrinsic dimension `p >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManifoldKind {
    Sphere { dim: usize },
    Torus { dim: usize },
}

impl std::fmt::Display for ManifoldKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ManifoldKind::Sphere { dim } => write!(f, "sphere({dim})"),
            ManifoldKind::Torus { dim } => write!(f, "torus({dim})"),
        }
    }
}

impl ManifoldKind {
    /// Intrinsic dimension `p`.
    pub fn intrinsic_dim(&self) -> usize {
        match *self {
            ManifoldKind::Sphere { dim } | ManifoldKind::Torus { dim } => dim,
        }
    }

    /// Number of stored coordinates: `p + 1` on the sphere, `p` on the torus.
    pub fn ambient_dim(&self) -> usize {
        match *self {
            ManifoldKind::Sphere { dim } => dim + 1,
            ManifoldKind::Torus { dim } => dim,
        }
    }

    /// Injectivity radius; `pi` for both families.
    pub fn injectivity_radius(&self) -> f64 {
        PI
    }

    /// Riemannian volume: `vol(S^p) = 2 pi^{(p+1)/2} / Gamma((p+1)/2)`,
    /// `vol(T^p) = (2 pi)^p`.
    pub fn volume(&self) -> f64 {
        self.log_volume().exp()
    }

    /// `ln vol`, computed through the recurrence `V_p = 2 pi V_{p-2} / (p - 1)`
    /// with `V_0 = 2` and `V_1 = 2 pi` on the sphere.
    pub fn log_volume(&self) -> f64 {
        match *self {
            ManifoldKind::Torus { dim } => dim as f64 * TAU.ln(),
            ManifoldKind::Sphere { dim } => {
                let (mut p, mut log_v) = if dim % 2 == 0 { (0usize, 2f64.ln()) } else { (1usize, TAU.ln()) };
                while p < dim {
                    p += 2;
                    log_v += TAU.ln() - ((p - 1) as f64).ln();
                }
                log_v
            }
        }
    }

    fn check_coords(&self, coords: &[f64]) -> Result<()> {
        if coords.len() != self.ambient_dim() {
            return Err(Error::DimensionMismatch { expected: self.ambient_dim(), got: coords.len() });
        }
        Ok(())
    }
}

/// A point on a manifold, stored in ambient coordinates. Torus angles are
/// kept in the canonical chart `(-pi, pi]` per coordinate; every
/// constructor and map in this module preserves that invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldPoint {
    pub manifold: ManifoldKind,
    pub coords: Vec<f64>,
}

impl ManifoldPoint {
    /// Validates the length and (on the sphere) unit norm to `1e-9`; torus
    /// angles are wrapped into the canonical chart.
    pub fn new(manifold: ManifoldKind, mut coords: Vec<f64>) -> Result<Self> {
        manifold.check_coords(&coords)?;
        if !coords.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite("point coordinates".into()));
        }
        match manifold {
            ManifoldKind::Sphere { .. } => {
                let n = norm(&coords);
                if (n - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidParameter(format!("sphere point has norm {n}, expected 1")));
                }
            }
            ManifoldKind::Torus { .. } => {
                coords.iter_mut().for_each(|c| *c = wrap_angle(*c));
            }
        }
        Ok(ManifoldPoint { manifold, coords })
    }
}

/// A tangent vector, stored in ambient coordinates at its base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub base: ManifoldPoint,
    pub components: Vec<f64>,
}

impl TangentVector {
    pub fn zero(base: &ManifoldPoint) -> Self {
        TangentVector { base: base.clone(), components: vec![0.0; base.coords.len()] }
    }

    pub fn norm(&self) -> f64 {
        norm(&self.components)
    }

    pub fn dot(&self, other: &TangentVector) -> f64 {
        dot(&self.components, &other.components)
    }

    pub fn scale(&self, s: f64) -> TangentVector {
        TangentVector { base: self.base.clone(), components: self.components.iter().map(|c| c * s).collect() }
    }

    /// `self + other`, requiring a shared base point.
    pub fn add(&self, other: &TangentVector) -> Result<TangentVector> {
        if self.base != other.base {
            return Err(Error::InvalidParameter("tangent vectors have different base points".into()));
        }
        let components = self.components.iter().zip(&other.components).map(|(a, b)| a + b).collect();
        Ok(TangentVector { base: self.base.clone(), components })
    }
}

/// An orthonormal basis of the tangent space at `base`: `p` ambient columns.
#[derive(Debug, Clone)]
pub struct TangentBasis {
    pub base: ManifoldPoint,
    pub columns: Vec<Vec<f64>>,
}

impl TangentBasis {
    /// Intrinsic coordinates `E^T v` of an ambient vector.
    pub fn to_coords(&self, ambient: &[f64]) -> Vec<f64> {
        self.columns.iter().map(|col| dot(col, ambient)).collect()
    }

    /// Ambient vector `E c` from intrinsic coordinates.
    pub fn from_coords(&self, coords: &[f64]) -> Vec<f64> {
        let d = self.base.coords.len();
        let mut out = vec![0.0; d];
        for (col, &c) in self.columns.iter().zip(coords) {
            for (o, &e) in out.iter_mut().zip(col) {
                *o += c * e;
            }
        }
        out
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Reduces an angle difference to `(-pi, pi]`, with `wrap(pi) = +pi`.
pub fn wrap_angle(delta: f64) -> f64 {
    // Identity on the canonical branch, bit for bit, so canonical angles
    // survive re-wrapping exactly.
    if -PI < delta && delta <= PI {
        return delta;
    }
    let mut w = delta.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

fn check_pair(x: &ManifoldPoint, y: &ManifoldPoint) -> Result<()> {
    if x.manifold != y.manifold {
        return Err(Error::ManifoldMismatch(x.manifold, y.manifold));
    }
    Ok(())
}

/// Geodesic distance; symmetric, in `[0, diam]` with `diam = pi` on the
/// sphere and `pi sqrt(p)` on the torus.
pub fn dist(x: &ManifoldPoint, y: &ManifoldPoint) -> Result<f64> {
    check_pair(x, y)?;
    match x.manifold {
        // Equal coordinates short-circuit to zero: acos(<x, x>) alone cannot
        // resolve below ~1.5e-8 when the stored norm rounds just under 1.
        ManifoldKind::Sphere { .. } if x.coords == y.coords => Ok(0.0),
        ManifoldKind::Sphere { .. } => Ok(dot(&x.coords, &y.coords).clamp(-1.0, 1.0).acos()),
        ManifoldKind::Torus { .. } => {
            let s: f64 = x.coords.iter().zip(&y.coords).map(|(a, b)| wrap_angle(a - b).powi(2)).sum();
            Ok(s.sqrt())
        }
    }
}

/// Exponential map `exp_x(v)`.
///
/// Sphere: `cos(|v|) x + sin(|v|) v / |v|`, with the `|v| < 1e-12` branch
/// returning the normalized `x + v`; the result is renormalized. Torus:
/// per-coordinate `(x_i + v_i) mod 2 pi`. Defined for every `v`; norms past
/// the injectivity radius simply wrap.
pub fn exp_map(v: &TangentVector) -> Result<ManifoldPoint> {
    let x = &v.base;
    x.manifold.check_coords(&v.components)?;
    match x.manifold {
        ManifoldKind::Sphere { .. } => {
            let theta = norm(&v.components);
            let mut out: Vec<f64> = if theta < EXP_SMALL_ANGLE {
                x.coords.iter().zip(&v.components).map(|(a, b)| a + b).collect()
            } else {
                let (s, c) = (theta.sin() / theta, theta.cos());
                x.coords.iter().zip(&v.components).map(|(a, b)| c * a + s * b).collect()
            };
            let n = norm(&out);
            if n < PROJECT_MIN_NORM {
                return Err(Error::DegenerateProjection);
            }
            out.iter_mut().for_each(|c| *c /= n);
            Ok(ManifoldPoint { manifold: x.manifold, coords: out })
        }
        ManifoldKind::Torus { .. } => {
            let coords = x.coords.iter().zip(&v.components).map(|(a, b)| wrap_angle(a + b)).collect();
            Ok(ManifoldPoint { manifold: x.manifold, coords })
        }
    }
}

/// Logarithm map `log_x(y)`: the tangent vector at `x` with
/// `exp_x(log_x(y)) = y` and `|log_x(y)| = dist(x, y)`.
///
/// Sphere: `theta / sin(theta) * (y - cos(theta) x)` with `theta = d(x, y)`,
/// using the limit factor `1` for `theta < 1e-8`; antipodal inputs return
/// [`Error::CutLocus`]. Torus: per-coordinate `wrap(y_i - x_i)`, always
/// defined (`wrap(pi) = +pi` settles the tie on the cut locus).
pub fn log_map(x: &ManifoldPoint, y: &ManifoldPoint) -> Result<TangentVector> {
    check_pair(x, y)?;
    match x.manifold {
        ManifoldKind::Sphere { .. } => {
            let c = dot(&x.coords, &y.coords).clamp(-1.0, 1.0);
            if 1.0 + c <= ANTIPODAL_GAP {
                return Err(Error::CutLocus);
            }
            // Near the antipode the chord |x + y| determines pi - theta far
            // more accurately than acos of the clamped inner product.
            let theta = if c < -0.9 {
                let chord: f64 = x.coords.iter().zip(&y.coords).map(|(a, b)| (a + b).powi(2)).sum();
                PI - 2.0 * (0.5 * chord.sqrt()).asin()
            } else {
                c.acos()
            };
            let factor = if theta < LOG_SMALL_ANGLE { 1.0 } else { theta / theta.sin() };
            let mut components: Vec<f64> =
                x.coords.iter().zip(&y.coords).map(|(a, b)| factor * (b - c * a)).collect();
            // Re-project onto the tangent space to remove rounding drift.
            let along = dot(&components, &x.coords);
            for (comp, a) in components.iter_mut().zip(&x.coords) {
                *comp -= along * a;
            }
            Ok(TangentVector { base: x.clone(), components })
        }
        ManifoldKind::Torus { .. } => {
            let components = x.coords.iter().zip(&y.coords).map(|(a, b)| wrap_angle(b - a)).collect();
            Ok(TangentVector { base: x.clone(), components })
        }
    }
}

/// `log_map` with a cut-locus fallback: if `target` is antipodal to `base`,
/// the target is nudged by `exp_target(s b_1)` for growing `s` (three tries
/// starting at `1e-7`) and the logarithm of the nudged point is returned.
pub fn log_map_robust(base: &ManifoldPoint, target: &ManifoldPoint) -> Result<TangentVector> {
    match log_map(base, target) {
        Err(Error::CutLocus) => {
            let b1 = &tangent_basis(target)?.columns[0];
            let mut scale = 1e-7;
            for _ in 0..3 {
                let nudge = TangentVector {
                    base: target.clone(),
                    components: b1.iter().map(|c| c * scale).collect(),
                };
                let moved = exp_map(&nudge)?;
                if let Ok(v) = log_map(base, &moved) {
                    return Ok(v);
                }
                scale *= 10.0;
            }
            Err(Error::CutLocus)
        }
        other => other,
    }
}

/// Projects an ambient vector onto the manifold: normalization on the sphere
/// (refused below norm `1e-12`), per-coordinate `mod 2 pi` on the torus.
pub fn project(manifold: ManifoldKind, ambient: &[f64]) -> Result<ManifoldPoint> {
    manifold.check_coords(ambient)?;
    match manifold {
        ManifoldKind::Sphere { .. } => {
            let n = norm(ambient);
            if n < PROJECT_MIN_NORM {
                return Err(Error::DegenerateProjection);
            }
            Ok(ManifoldPoint { manifold, coords: ambient.iter().map(|c| c / n).collect() })
        }
        ManifoldKind::Torus { .. } => {
            Ok(ManifoldPoint { manifold, coords: ambient.iter().map(|&c| wrap_angle(c)).collect() })
        }
    }
}

/// Projects an ambient vector onto the tangent space at `x`: removes the
/// radial component on the sphere, identity on the torus.
pub fn tangent_project(x: &ManifoldPoint, ambient: &[f64]) -> Result<TangentVector> {
    x.manifold.check_coords(ambient)?;
    let components = match x.manifold {
        ManifoldKind::Sphere { .. } => {
            let along = dot(ambient, &x.coords);
            ambient.iter().zip(&x.coords).map(|(v, a)| v - along * a).collect()
        }
        ManifoldKind::Torus { .. } => ambient.to_vec(),
    };
    Ok(TangentVector { base: x.clone(), components })
}

/// Deterministic orthonormal tangent basis at `x`.
///
/// Sphere: the last `p` columns of the Householder reflection
/// `H = I - w w^T / (1 - x_1)` with `w = x - e_1`, which maps `e_1` to `x`;
/// when `x` is within `1e-14` of `e_1` the basis is `{e_2, ..., e_{p+1}}`.
/// Torus: the identity basis.
pub fn tangent_basis(x: &ManifoldPoint) -> Result<TangentBasis> {
    let p = x.manifold.intrinsic_dim();
    let d = x.manifold.ambient_dim();
    let columns = match x.manifold {
        ManifoldKind::Torus { .. } => (0..p)
            .map(|j| {
                let mut col = vec![0.0; d];
                col[j] = 1.0;
                col
            })
            .collect(),
        ManifoldKind::Sphere { .. } => {
            let denom = 1.0 - x.coords[0];
            if denom.abs() < 1e-14 {
                (0..p)
                    .map(|j| {
                        let mut col = vec![0.0; d];
                        col[j + 1] = 1.0;
                        col
                    })
                    .collect()
            } else {
                let mut w = x.coords.clone();
                w[0] -= 1.0;
                (0..p)
                    .map(|j| {
                        let mut col: Vec<f64> = w.iter().map(|wi| -wi * w[j + 1] / denom).collect();
                        col[j + 1] += 1.0;
                        col
                    })
                    .collect()
            }
        }
    };
    Ok(TangentBasis { base: x.clone(), columns })
}

/// Draws a point from the uniform (normalized volume) measure.
pub fn sample_uniform<R: Rng + ?Sized>(manifold: ManifoldKind, rng: &mut R) -> ManifoldPoint {
    match manifold {
        ManifoldKind::Sphere { .. } => loop {
            let coords: Vec<f64> = (0..manifold.ambient_dim()).map(|_| rng.sample(StandardNormal)).collect();
            let n = norm(&coords);
            if n > 1e-6 {
                return ManifoldPoint { manifold, coords: coords.iter().map(|c| c / n).collect() };
            }
        },
        ManifoldKind::Torus { .. } => {
            let coords = (0..manifold.ambient_dim()).map(|_| rng.gen_range(-PI..PI)).collect();
            ManifoldPoint { manifold, coords }
        }
    }
}

/// A wrapped normal measure: the pushforward of `N(0, sigma^2 I_p)` on the
/// tangent space at `center` through the exponential map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrappedNormalSpec {
    pub center: ManifoldPoint,
    pub sigma: f64,
}

impl WrappedNormalSpec {
    pub fn new(center: ManifoldPoint, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("wrapped normal sigma must be positive, got {sigma}")));
        }
        Ok(WrappedNormalSpec { center, sigma })
    }

    /// Number of wrapping shells summed on each side of the principal branch:
    /// `K = ceil(6 sigma / 2 pi) + 1`, at least 1.
    pub fn shells(&self) -> i64 {
        ((6.0 * self.sigma / TAU).ceil() as i64 + 1).max(1)
    }
}

/// Draws from the wrapped normal by sampling tangent coordinates in the
/// deterministic basis at the center and pushing through `exp`.
pub fn sample_wrapped_normal<R: Rng + ?Sized>(spec: &WrappedNormalSpec, rng: &mut R) -> Result<ManifoldPoint> {
    let basis = tangent_basis(&spec.center)?;
    let p = spec.center.manifold.intrinsic_dim();
    let coords: Vec<f64> = (0..p).map(|_| spec.sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    let v = TangentVector { base: spec.center.clone(), components: basis.from_coords(&coords) };
    exp_map(&v)
}

/// Log-density of the wrapped normal at `y`, with respect to the Riemannian
/// volume measure.
///
/// Sphere: the preimages of `y` under `exp_center` are `v_k = (r + 2 pi k) u`
/// with `r = d(center, y)` and `u` the unit log direction, and
///
/// ```text
/// nu(y) = sum_k N_p(v_k; 0, sigma^2 I) / |det d exp|(v_k),
/// |det d exp|(v) = (sin |v| / |v|)^{p-1},
/// ```
///
/// summed over `k in {-K..K}`; all terms share `|sin |v_k|| = sin r`. Torus:
/// an independent 1-d wrapped normal per coordinate. Evaluation runs in log
/// space, so the estimate stays usable even where the sphere density blows
/// up (the cut locus of the center; `sin r` is floored at the smallest
/// positive normal float there).
pub fn wrapped_normal_log_density(spec: &WrappedNormalSpec, y: &ManifoldPoint) -> Result<f64> {
    check_pair(&spec.center, y)?;
    let sigma2 = spec.sigma * spec.sigma;
    let kk = spec.shells();
    match y.manifold {
        ManifoldKind::Torus { .. } => {
            let mut log_density = 0.0;
            for (c, t) in spec.center.coords.iter().zip(&y.coords) {
                let delta = wrap_angle(t - c);
                let mut terms = Vec::with_capacity((2 * kk + 1) as usize);
                for k in -kk..=kk {
                    let d = delta + TAU * k as f64;
                    terms.push(-0.5 * d * d / sigma2);
                }
                log_density += log_sum_exp(&terms) - 0.5 * (TAU * sigma2).ln();
            }
            Ok(log_density)
        }
        ManifoldKind::Sphere { dim } => {
            let p = dim as f64;
            let r = dist(&spec.center, y)?;
            let log_sin_r = r.sin().max(f64::MIN_POSITIVE).ln();
            let mut terms = Vec::with_capacity((2 * kk + 1) as usize);
            for k in -kk..=kk {
                let s = (r + TAU * k as f64).abs();
                let log_ratio = if k == 0 && r < 1e-9 {
                    // (s / sin r) -> 1 as r -> 0 on the principal branch.
                    0.0
                } else {
                    s.max(f64::MIN_POSITIVE).ln() - log_sin_r
                };
                terms.push(-0.5 * s * s / sigma2 + (p - 1.0) * log_ratio);
            }
            Ok(log_sum_exp(&terms) - 0.5 * p * (TAU * sigma2).ln())
        }
    }
}

/// Log-density of the uniform measure: `-ln vol(M)` everywhere.
pub fn uniform_log_density(manifold: ManifoldKind) -> f64 {
    -manifold.log_volume()
}

/// `ln sum_i exp(t_i)` with max subtraction.
pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}
