//! Scalar potentials on a manifold and the landmark-feature network model.
//!
//! A [`Potential`] is any differentiable scalar field `psi` on the manifold;
//! the solver in [`crate::ctransform`] and the evaluation code only see this
//! trait. The concrete learned model is [`PotentialModel`]:
//! `psi(y) = f(phi(y))` where `phi(y) = (d(y, l_1), ..., d(y, l_M))` is the
//! landmark distance embedding and `f` is a small network with scalar
//! output.
//!
//! The Riemannian gradient follows from the chain rule together with
//! `grad_y d(y, l) = -log_y(l) / d(y, l)`, the unit tangent at `y` pointing
//! away from `l`. Each summand is skipped when `d(y, l)` is numerically
//! zero: the distance has a cone singularity at its own landmark and the
//! subgradient convention there is zero, matching the kink conventions of
//! the network activations.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{LandmarkSet, Selection};
use crate::error::{Error, Result};
use crate::geometry::{log_map_robust, ManifoldKind, ManifoldPoint, TangentVector};
use crate::network::{MlpConfig, MlpGradient, MlpParams};

/// Distances below this contribute nothing to the feature gradient.
const FEATURE_KINK_DIST: f64 = 1e-8;

/// A differentiable scalar field on a manifold.
pub trait Potential {
    fn manifold(&self) -> ManifoldKind;

    /// `psi(y)`.
    fn value(&self, y: &ManifoldPoint) -> Result<f64>;

    /// `(psi(y), grad psi(y))` with the gradient in the tangent space at
    /// `y`.
    fn value_and_grad(&self, y: &ManifoldPoint) -> Result<(f64, TangentVector)>;
}

/// The learned potential: a network over landmark distance features.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialModel {
    pub landmarks: LandmarkSet,
    pub params: MlpParams,
}

impl PotentialModel {
    /// Couples a parameter vector to a landmark set; the network input width
    /// must equal the number of landmarks.
    pub fn new(landmarks: LandmarkSet, params: MlpParams) -> Result<PotentialModel> {
        if params.input_dim() != landmarks.len() {
            return Err(Error::DimensionMismatch { expected: landmarks.len(), got: params.input_dim() });
        }
        Ok(PotentialModel { landmarks, params })
    }

    pub fn manifold(&self) -> ManifoldKind {
        self.landmarks.manifold
    }

    /// `psi(y)`.
    pub fn psi(&self, y: &ManifoldPoint) -> Result<f64> {
        self.params.forward(&self.landmarks.featurize(y)?)
    }

    /// Gradient of `psi(y)` in the network parameters, for the envelope
    /// gradient of the semi-dual objective.
    pub fn grad_params_psi(&self, y: &ManifoldPoint) -> Result<(f64, MlpGradient)> {
        self.params.value_and_grad_params(&self.landmarks.featurize(y)?)
    }

    /// `(psi(y), grad psi(y))` via the feature chain rule.
    ///
    /// Landmarks at the cut locus of `y` (possible on the sphere) have no
    /// plain logarithm; the robust variant nudges the target off the
    /// antipode and the affected summand picks up an arbitrary but
    /// deterministic direction. The distance gradient is genuinely
    /// non-unique there.
    pub fn riemannian_grad_psi(&self, y: &ManifoldPoint) -> Result<(f64, TangentVector)> {
        let features = self.landmarks.featurize(y)?;
        let (value, dfeat) = self.params.value_and_grad_input(&features)?;
        let mut grad = TangentVector::zero(y);
        for ((landmark, &d), &df) in self.landmarks.points.iter().zip(&features).zip(&dfeat) {
            if d < FEATURE_KINK_DIST || df == 0.0 {
                continue;
            }
            let toward = log_map_robust(y, landmark)?;
            grad = grad.add(&toward.scale(-df / d))?;
        }
        Ok((value, grad))
    }

    /// Serializes the model as one self-contained JSON document.
    pub fn save_checkpoint<W: Write>(&self, w: W) -> Result<()> {
        let file = CheckpointFile {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            network: self.params.config(),
            flat_params: self.params.flatten(),
            landmarks: LandmarksRecord {
                manifold: self.landmarks.manifold,
                selection: self.landmarks.selection,
                seed: self.landmarks.seed,
                points: self.landmarks.points.iter().map(|p| p.coords.clone()).collect(),
            },
        };
        serde_json::to_writer(w, &file)?;
        Ok(())
    }

    pub fn load_checkpoint<R: Read>(r: R) -> Result<PotentialModel> {
        let file: CheckpointFile = serde_json::from_reader(r)?;
        if file.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Malformed(format!(
                "unsupported checkpoint schema version {} (expected {})",
                file.schema_version, CHECKPOINT_SCHEMA_VERSION
            )));
        }
        let points = file
            .landmarks
            .points
            .into_iter()
            .map(|coords| ManifoldPoint::new(file.landmarks.manifold, coords))
            .collect::<Result<Vec<_>>>()?;
        let landmarks = LandmarkSet {
            manifold: file.landmarks.manifold,
            points,
            selection: file.landmarks.selection,
            seed: file.landmarks.seed,
        };
        let params = MlpParams::unflatten(&file.network, &file.flat_params)?;
        PotentialModel::new(landmarks, params)
    }

    pub fn save_checkpoint_file(&self, path: &Path) -> Result<()> {
        self.save_checkpoint(BufWriter::new(File::create(path)?))
    }

    pub fn load_checkpoint_file(path: &Path) -> Result<PotentialModel> {
        PotentialModel::load_checkpoint(BufReader::new(File::open(path)?))
    }
}

impl Potential for PotentialModel {
    fn manifold(&self) -> ManifoldKind {
        self.landmarks.manifold
    }

    fn value(&self, y: &ManifoldPoint) -> Result<f64> {
        self.psi(y)
    }

    fn value_and_grad(&self, y: &ManifoldPoint) -> Result<(f64, TangentVector)> {
        self.riemannian_grad_psi(y)
    }
}

const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    schema_version: u32,
    network: MlpConfig,
    flat_params: Vec<f64>,
    landmarks: LandmarksRecord,
}

#[derive(Serialize, Deserialize)]
struct LandmarksRecord {
    manifold: ManifoldKind,
    selection: Selection,
    seed: u64,
    points: Vec<Vec<f64>>,
}
