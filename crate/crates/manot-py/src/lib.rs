//! Python bindings for the `manot` library: manifolds, measures, both
//! transport-model families, training entry points, and quantization
//! tables. Points cross the boundary as plain lists of ambient
//! coordinates (unit vectors on spheres, angles on tori).

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use manot::ctransform::{self, InnerSolverConfig};
use manot::embedding;
use manot::geometry::{
    self, ManifoldKind, ManifoldPoint, TangentVector, WrappedNormalSpec,
};
use manot::potential::{Potential as _, PotentialModel};
use manot::rcpm::RcpmModel;
use manot::rng;
use manot::semidual::{self, MeasureSpec, TrainConfig, TrainReport};

fn err(e: manot::error::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn kind_from(kind: &str, dim: usize) -> PyResult<ManifoldKind> {
    match kind {
        "sphere" => Ok(ManifoldKind::Sphere { dim }),
        "torus" => Ok(ManifoldKind::Torus { dim }),
        other => Err(PyValueError::new_err(format!(
            "unknown manifold kind {other:?} (expected \"sphere\" or \"torus\")"
        ))),
    }
}

/// A sphere `S^p` (unit vectors in `R^{p+1}`) or flat torus `T^p`
/// (angle tuples, each coordinate in `(-pi, pi]`).
#[pyclass(module = "manot_py")]
#[derive(Clone)]
struct Manifold {
    inner: ManifoldKind,
}

impl Manifold {
    fn point(&self, coords: Vec<f64>) -> PyResult<ManifoldPoint> {
        ManifoldPoint::new(self.inner, coords).map_err(err)
    }
}

#[pymethods]
impl Manifold {
    #[new]
    fn new(kind: &str, dim: usize) -> PyResult<Manifold> {
        if dim == 0 {
            return Err(PyValueError::new_err("manifold dimension must be positive"));
        }
        Ok(Manifold { inner: kind_from(kind, dim)? })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.inner {
            ManifoldKind::Sphere { .. } => "sphere",
            ManifoldKind::Torus { .. } => "torus",
        }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.intrinsic_dim()
    }

    #[getter]
    fn ambient_dim(&self) -> usize {
        self.inner.ambient_dim()
    }

    /// Geodesic distance.
    fn dist(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        geometry::dist(&self.point(x)?, &self.point(y)?).map_err(err)
    }

    /// Exponential map of an ambient tangent vector at `base`.
    fn exp(&self, base: Vec<f64>, tangent: Vec<f64>) -> PyResult<Vec<f64>> {
        let base = self.point(base)?;
        if tangent.len() != self.inner.ambient_dim() {
            return Err(PyValueError::new_err("tangent vector has the wrong length"));
        }
        let v = TangentVector { base, components: tangent };
        Ok(geometry::exp_map(&v).map_err(err)?.coords)
    }

    /// Logarithm map `log_base(target)` as ambient components; antipodal
    /// sphere inputs resolve along a deterministic direction.
    fn log(&self, base: Vec<f64>, target: Vec<f64>) -> PyResult<Vec<f64>> {
        let v = geometry::log_map_robust(&self.point(base)?, &self.point(target)?).map_err(err)?;
        Ok(v.components)
    }

    /// Nearest manifold point to arbitrary ambient coordinates.
    fn project(&self, coords: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(geometry::project(self.inner, &coords).map_err(err)?.coords)
    }

    /// `n` points from the uniform (normalized volume) measure.
    fn sample_uniform(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::derive(seed, &[0x9e_01]);
        (0..n).map(|_| geometry::sample_uniform(self.inner, &mut r).coords).collect()
    }

    fn __repr__(&self) -> String {
        format!("Manifold({:?}, dim={})", self.kind(), self.dim())
    }
}

enum MeasureInner {
    Uniform,
    WrappedNormal { sigma: f64, center: Option<Vec<f64>> },
    Empirical { points: Vec<Vec<f64>> },
}

/// A probability measure description, resolved against a manifold when
/// used: `Measure.uniform()`, `Measure.wrapped_normal(sigma, center)`,
/// or `Measure.empirical(points)`.
#[pyclass(module = "manot_py")]
struct Measure {
    inner: MeasureInner,
}

impl Measure {
    fn resolve(&self, manifold: ManifoldKind) -> PyResult<MeasureSpec> {
        match &self.inner {
            MeasureInner::Uniform => Ok(MeasureSpec::Uniform),
            MeasureInner::WrappedNormal { sigma, center } => {
                let coords = center.clone().unwrap_or_else(|| {
                    let mut c = vec![0.0; manifold.ambient_dim()];
                    if let ManifoldKind::Sphere { .. } = manifold {
                        c[0] = 1.0;
                    }
                    c
                });
                let center = ManifoldPoint::new(manifold, coords).map_err(err)?;
                Ok(MeasureSpec::WrappedNormal(WrappedNormalSpec::new(center, *sigma).map_err(err)?))
            }
            MeasureInner::Empirical { points } => {
                let points = points
                    .iter()
                    .map(|c| ManifoldPoint::new(manifold, c.clone()))
                    .collect::<manot::error::Result<Vec<_>>>()
                    .map_err(err)?;
                Ok(MeasureSpec::Empirical(points))
            }
        }
    }
}

#[pymethods]
impl Measure {
    /// The uniform measure.
    #[staticmethod]
    fn uniform() -> Measure {
        Measure { inner: MeasureInner::Uniform }
    }

    /// Wrapped normal with scale `sigma`; `center` defaults to the first
    /// basis vector on spheres and the origin on tori.
    #[staticmethod]
    #[pyo3(signature = (sigma, center=None))]
    fn wrapped_normal(sigma: f64, center: Option<Vec<f64>>) -> Measure {
        Measure { inner: MeasureInner::WrappedNormal { sigma, center } }
    }

    /// A finite point cloud, sampled uniformly with replacement.
    #[staticmethod]
    fn empirical(points: Vec<Vec<f64>>) -> Measure {
        Measure { inner: MeasureInner::Empirical { points } }
    }
}

fn raise_on_abort(report: &TrainReport) -> PyResult<()> {
    if let Some(reason) = &report.aborted {
        return Err(PyRuntimeError::new_err(format!("training aborted: {reason}")));
    }
    Ok(())
}

fn losses(report: &TrainReport) -> Vec<f64> {
    report.records.iter().map(|r| r.loss).collect()
}

/// A scalar dual potential on the target side, parameterized by a network
/// over landmark-distance features; the transport map is recovered by the
/// inner conjugate solve.
#[pyclass(name = "Potential", module = "manot_py")]
struct PyPotential {
    inner: PotentialModel,
}

#[pymethods]
impl PyPotential {
    #[staticmethod]
    fn load(path: &str) -> PyResult<PyPotential> {
        Ok(PyPotential { inner: PotentialModel::load_checkpoint_file(path.as_ref()).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save_checkpoint_file(path.as_ref()).map_err(err)
    }

    #[getter]
    fn manifold(&self) -> Manifold {
        Manifold { inner: self.inner.manifold() }
    }

    /// Potential value at a point.
    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        let m = Manifold { inner: self.inner.manifold() };
        self.inner.value(&m.point(x)?).map_err(err)
    }

    /// Ambient tangent gradient at a point.
    fn grad(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let m = Manifold { inner: self.inner.manifold() };
        let (_, g) = self.inner.value_and_grad(&m.point(x)?).map_err(err)?;
        Ok(g.components)
    }

    /// Transports `x` by solving the inner conjugate problem over `pool`
    /// candidates; returns the image point and the solver residual.
    #[pyo3(signature = (x, pool, tol=None))]
    fn transport(&self, py: Python<'_>, x: Vec<f64>, pool: Vec<Vec<f64>>, tol: Option<f64>) -> PyResult<(Vec<f64>, f64)> {
        let m = Manifold { inner: self.inner.manifold() };
        let x = m.point(x)?;
        let pool = pool.into_iter().map(|c| m.point(c)).collect::<PyResult<Vec<_>>>()?;
        let config = match tol {
            Some(t) => InnerSolverConfig::tight_gd(t),
            None => InnerSolverConfig::default(),
        };
        let solved = py
            .allow_threads(|| ctransform::inner_solve(&self.inner, &x, &pool, &config))
            .map_err(err)?;
        Ok((solved.y.coords, solved.residual))
    }

    fn __repr__(&self) -> String {
        format!("Potential(manifold={:?})", self.inner.manifold().to_string())
    }
}

/// A smoothed discrete c-concave potential whose transport map is in
/// closed form: a soft assignment to `m` learned sites.
#[pyclass(name = "SiteMap", module = "manot_py")]
struct PySiteMap {
    inner: RcpmModel,
}

#[pymethods]
impl PySiteMap {
    #[staticmethod]
    fn load(path: &str) -> PyResult<PySiteMap> {
        Ok(PySiteMap { inner: RcpmModel::load_file(path.as_ref()).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save_file(path.as_ref()).map_err(err)
    }

    #[getter]
    fn manifold(&self) -> Manifold {
        Manifold { inner: self.inner.manifold }
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn sites(&self) -> Vec<Vec<f64>> {
        self.inner.sites.iter().map(|s| s.coords.clone()).collect()
    }

    #[getter]
    fn alphas(&self) -> Vec<f64> {
        self.inner.alphas.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.sites.len()
    }

    /// Potential value at a point.
    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        let m = Manifold { inner: self.inner.manifold };
        self.inner.potential(&m.point(x)?).map_err(err)
    }

    /// Closed-form transport of a point.
    fn transport(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let m = Manifold { inner: self.inner.manifold };
        Ok(self.inner.transport(&m.point(x)?).map_err(err)?.coords)
    }

    fn __repr__(&self) -> String {
        format!("SiteMap(m={}, gamma={})", self.inner.sites.len(), self.inner.gamma)
    }
}

/// Trains the network-potential model by stochastic semi-dual descent
/// with farthest-point landmarks. Returns the model and per-step losses.
#[pyfunction]
#[pyo3(signature = (manifold, source, target, steps, batch_size, seed, landmarks=128, hidden=vec![128, 128]))]
#[allow(clippy::too_many_arguments)]
fn train_rnot(
    py: Python<'_>,
    manifold: &Manifold,
    source: &Measure,
    target: &Measure,
    steps: usize,
    batch_size: usize,
    seed: u64,
    landmarks: usize,
    hidden: Vec<usize>,
) -> PyResult<(PyPotential, Vec<f64>)> {
    let kind = manifold.inner;
    let source = source.resolve(kind)?;
    let target = target.resolve(kind)?;
    let config = TrainConfig { steps, batch_size, seed, checkpoint_every: 0, ..TrainConfig::default() };
    let (model, report) = py
        .allow_threads(|| {
            let selected = embedding::select_landmarks_fps(kind, landmarks, seed, None)?;
            let init = semidual::init_model(
                selected,
                hidden,
                manot::network::Activation::default(),
                seed,
            )?;
            semidual::train(&source, &target, init, &config, |_, _| Ok(()))
        })
        .map_err(err)?;
    raise_on_abort(&report)?;
    Ok((PyPotential { inner: model }, losses(&report)))
}

/// Trains the site-map model by the mirrored semi-dual objective.
/// Returns the model and per-step losses.
#[pyfunction]
#[pyo3(signature = (manifold, source, target, m, gamma, steps, batch_size, seed))]
#[allow(clippy::too_many_arguments)]
fn train_rcpm(
    py: Python<'_>,
    manifold: &Manifold,
    source: &Measure,
    target: &Measure,
    m: usize,
    gamma: f64,
    steps: usize,
    batch_size: usize,
    seed: u64,
) -> PyResult<(PySiteMap, Vec<f64>)> {
    let kind = manifold.inner;
    let source = source.resolve(kind)?;
    let target = target.resolve(kind)?;
    let config = TrainConfig { steps, batch_size, seed, checkpoint_every: 0, ..TrainConfig::default() };
    let (model, report) = py
        .allow_threads(|| manot::rcpm::rcpm_train(&source, &target, kind, m, gamma, &config))
        .map_err(err)?;
    raise_on_abort(&report)?;
    Ok((PySiteMap { inner: model }, losses(&report)))
}

/// Geodesic k-means quantization error of a measure over a site-count
/// grid. Returns `([(m, distortion), ...], (slope, stderr))` where the
/// slope fits `log distortion ~ slope * log m`.
#[pyfunction]
#[pyo3(signature = (manifold, measure, m_grid, n_samples=10000, restarts=5, seed=0))]
fn quantization_table(
    py: Python<'_>,
    manifold: &Manifold,
    measure: &Measure,
    m_grid: Vec<usize>,
    n_samples: usize,
    restarts: usize,
    seed: u64,
) -> PyResult<(Vec<(usize, f64)>, (f64, f64))> {
    let kind = manifold.inner;
    let measure = measure.resolve(kind)?;
    let (rows, fit) = py
        .allow_threads(|| {
            manot::rcpm::quantization_table(&measure, kind, &m_grid, n_samples, restarts, seed)
        })
        .map_err(err)?;
    Ok((rows.into_iter().map(|r| (r.m, r.distortion)).collect(), (fit.slope, fit.stderr)))
}

#[pymodule]
fn manot_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Manifold>()?;
    m.add_class::<Measure>()?;
    m.add_class::<PyPotential>()?;
    m.add_class::<PySiteMap>()?;
    m.add_function(wrap_pyfunction!(train_rnot, m)?)?;
    m.add_function(wrap_pyfunction!(train_rcpm, m)?)?;
    m.add_function(wrap_pyfunction!(quantization_table, m)?)?;
    Ok(())
}
