//! # manot
//!
//! Neural optimal transport on Riemannian manifolds of constant curvature:
//! the unit hypersphere `S^p` and the flat torus `T^p`.
//!
//! The crate learns a Monge map `T` pushing a source measure `mu` onto a
//! target measure `nu` for the squared-geodesic cost `c(x, y) = d(x, y)^2 / 2`
//! by maximizing the semi-dual objective
//!
//! ```text
//! J(psi) = E_mu[psi^c(x)] + E_nu[psi(y)],
//! psi^c(x) = min_y { c(x, y) - psi(y) },
//! ```
//!
//! where the potential `psi` is a small MLP over landmark-distance features
//! and the inner minimization runs a Riemannian first-order solver with a
//! log-sum-exp warm start. The transported point is the inner argmin itself,
//! `T(x) = argmin_y { c(x, y) - psi(y) } = exp_x(-grad phi(x))` for
//! `phi = psi^c`.
//!
//! Modules:
//!
//! - [`geometry`]: points, tangent vectors, exp/log maps, samplers, densities;
//! - [`embedding`]: landmark selection (FPS / random) and distance features;
//! - [`network`]: a hand-rolled MLP with explicit parameter/input gradients;
//! - [`potential`]: the landmark-feature potential `psi` and checkpoints;
//! - [`ctransform`]: the inner solver computing `psi^c` and transport points;
//! - [`semidual`]: measures, the semi-dual loss, envelope gradients, training;
//! - [`rcpm`]: a discrete c-concave baseline potential and quantization tools;
//! - [`eval`]: KL / ESS diagnostics through transport Jacobians, map RMSE,
//!   and dimension sweeps;
//! - [`assignment`]: an exact linear assignment solver for small discrete
//!   optimal transport problems;
//! - [`io`]: point-cloud CSV and landmark-file formats.

pub mod assignment;
pub mod ctransform;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod network;
pub mod potential;
pub mod rcpm;
pub mod rng;
pub mod semidual;

pub use error::{Error, Result};
