//! TOML experiment configuration.
//!
//! One file drives every subcommand; each command reads the sections it
//! needs and rejects configs that lack them. Unknown keys anywhere are
//! errors, and `schema_version` must match the binary.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use manot::eval::EvalConfig;
use manot::geometry::{ManifoldKind, ManifoldPoint, WrappedNormalSpec};
use manot::io;
use manot::network::Activation;
use manot::semidual::{MeasureSpec, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub manifold: ManifoldKind,
    pub source: MeasureConfig,
    pub target: MeasureConfig,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub eval: Option<EvalConfig>,
    #[serde(default)]
    pub transport: Option<TransportConfig>,
    #[serde(default)]
    pub diagnose: Option<DiagnoseConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub quantize: Option<QuantizeConfig>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .with_context(|| format!("malformed config {}", path.display()))?;
        if config.schema_version != SCHEMA_VERSION {
            bail!(
                "config schema version {} is not supported (expected {})",
                config.schema_version,
                SCHEMA_VERSION
            );
        }
        Ok(config)
    }

    /// Applies a command-line seed override to every seeded section. For
    /// sweeps the seed list collapses to the single override.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(train) = &mut self.train {
            train.seed = seed;
        }
        if let Some(eval) = &mut self.eval {
            eval.seed = seed;
        }
        if let Some(diagnose) = &mut self.diagnose {
            diagnose.seed = seed;
        }
        if let Some(quantize) = &mut self.quantize {
            quantize.seed = seed;
        }
        if let Some(sweep) = &mut self.sweep {
            sweep.seeds = vec![seed];
        }
    }

    /// The seed a command should report: the training seed when present,
    /// otherwise the evaluation seed, otherwise zero.
    pub fn effective_seed(&self) -> u64 {
        self.train
            .as_ref()
            .map(|t| t.seed)
            .or_else(|| self.eval.as_ref().map(|e| e.seed))
            .unwrap_or(0)
    }
}

/// A sampled measure on the configured manifold.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum MeasureConfig {
    Uniform,
    WrappedNormal {
        sigma: f64,
        /// Defaults to the first unit vector on spheres and the origin on
        /// tori.
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    /// Points loaded from a headerless CSV, one ambient row per point.
    Empirical { path: PathBuf },
}

pub fn default_center(manifold: ManifoldKind) -> Vec<f64> {
    let mut center = vec![0.0; manifold.ambient_dim()];
    if let ManifoldKind::Sphere { .. } = manifold {
        center[0] = 1.0;
    }
    center
}

impl MeasureConfig {
    pub fn to_spec(&self, manifold: ManifoldKind) -> Result<MeasureSpec> {
        let spec = match self {
            MeasureConfig::Uniform => MeasureSpec::Uniform,
            MeasureConfig::WrappedNormal { sigma, center } => {
                let coords = center.clone().unwrap_or_else(|| default_center(manifold));
                let center = ManifoldPoint::new(manifold, coords)
                    .context("wrapped normal center is not a valid point")?;
                MeasureSpec::WrappedNormal(
                    WrappedNormalSpec::new(center, *sigma).context("invalid wrapped normal")?,
                )
            }
            MeasureConfig::Empirical { path } => {
                let points = io::read_points_file(path, manifold)
                    .with_context(|| format!("cannot read empirical points {}", path.display()))?;
                MeasureSpec::Empirical(points)
            }
        };
        spec.validate(manifold).context("invalid measure")?;
        Ok(spec)
    }

    /// Same measure family on another manifold of the same kind; used by
    /// dimension sweeps. Empirical measures do not transfer.
    pub fn to_spec_for(&self, manifold: ManifoldKind) -> Result<MeasureSpec> {
        match self {
            MeasureConfig::Empirical { .. } => {
                bail!("empirical measures cannot be swept across dimensions")
            }
            MeasureConfig::WrappedNormal { sigma, .. } => {
                MeasureConfig::WrappedNormal { sigma: *sigma, center: None }.to_spec(manifold)
            }
            MeasureConfig::Uniform => MeasureConfig::Uniform.to_spec(manifold),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rnot,
    Rcpm,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Rnot => write!(f, "rnot"),
            Method::Rcpm => write!(f, "rcpm"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionConfig {
    #[default]
    Fps,
    Random,
}

fn default_method() -> Method {
    Method::Rnot
}
fn default_landmarks() -> usize {
    128
}
fn default_hidden() -> Vec<usize> {
    vec![128, 128]
}
fn default_sites() -> usize {
    64
}

/// Model architecture: a landmark-featurized network for `rnot`, a site
/// family for `rcpm`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_landmarks")]
    pub landmarks: usize,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    /// Site count for `rcpm`.
    #[serde(default = "default_sites")]
    pub m: usize,
    /// Soft-minimum temperature for `rcpm`.
    #[serde(default)]
    pub gamma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            method: default_method(),
            landmarks: default_landmarks(),
            selection: SelectionConfig::default(),
            hidden: default_hidden(),
            activation: Activation::default(),
            m: default_sites(),
            gamma: 0.0,
        }
    }
}

fn default_t() -> f64 {
    1.0
}
fn default_n_points() -> usize {
    256
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportConfig {
    /// Geodesic interpolation parameter: `0` is the identity, `1` the full
    /// map.
    #[serde(default = "default_t")]
    pub t: f64,
    /// Number of source samples when no points file is given.
    #[serde(default = "default_n_points")]
    pub n_points: usize,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig { t: default_t(), n_points: default_n_points() }
    }
}

fn default_schedule() -> Vec<usize> {
    vec![16, 32, 64, 128]
}
fn default_eps() -> f64 {
    manot::embedding::DEFAULT_EPS
}
fn default_n_pairs() -> usize {
    manot::embedding::DEFAULT_N_PAIRS
}
fn default_n_validation() -> usize {
    2000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    /// Landmark counts to report, strictly increasing.
    #[serde(default = "default_schedule")]
    pub schedule: Vec<usize>,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_n_pairs")]
    pub n_pairs: usize,
    #[serde(default = "default_n_validation")]
    pub n_validation: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig {
            schedule: default_schedule(),
            eps: default_eps(),
            n_pairs: default_n_pairs(),
            n_validation: default_n_validation(),
            seed: 0,
        }
    }
}

fn default_dims() -> Vec<usize> {
    vec![2, 3, 4, 5, 6]
}
fn default_sweep_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}
fn default_sweep_methods() -> Vec<Method> {
    vec![Method::Rnot, Method::Rcpm]
}
fn default_sweep_gamma() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Intrinsic dimensions to sweep.
    #[serde(default = "default_dims")]
    pub dims: Vec<usize>,
    #[serde(default = "default_sweep_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_sweep_methods")]
    pub methods: Vec<Method>,
    /// Soft-minimum temperature for the swept `rcpm` cells.
    #[serde(default = "default_sweep_gamma")]
    pub gamma: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            dims: default_dims(),
            seeds: default_sweep_seeds(),
            methods: default_sweep_methods(),
            gamma: default_sweep_gamma(),
        }
    }
}

fn default_m_grid() -> Vec<usize> {
    vec![2, 4, 8, 16, 32, 64]
}
fn default_quantize_samples() -> usize {
    10_000
}
fn default_restarts() -> usize {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizeConfig {
    #[serde(default = "default_m_grid")]
    pub m_grid: Vec<usize>,
    #[serde(default = "default_quantize_samples")]
    pub n_samples: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for QuantizeConfig {
    fn default() -> Self {
        QuantizeConfig {
            m_grid: default_m_grid(),
            n_samples: default_quantize_samples(),
            restarts: default_restarts(),
            seed: 0,
        }
    }
}
