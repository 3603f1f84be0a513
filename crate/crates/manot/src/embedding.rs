//! Landmark selections and the distance-coordinate embedding
//! `phi(x) = (d(x, l_1), ..., d(x, l_M))`.
//!
//! Landmarks are chosen either i.i.d. uniformly (`random`) or by greedy
//! farthest-point sampling (`fps`) over a candidate pool. FPS maximizes the
//! distance to the already-chosen set at each step, approximately minimizing
//! the covering radius, and is *nested*: the first `M` landmarks of a run
//! are a prefix of any longer run over the same pool.
//!
//! `phi` is 1-Lipschitz from geodesic distance to the sup norm: each
//! coordinate is a distance to a fixed point, so
//! `|phi_j(x) - phi_j(y)| <= d(x, y)` by the triangle inequality.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, ManifoldKind, ManifoldPoint};
use crate::io::{format_row, parse_row};
use crate::rng;

/// How a landmark set was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Fps,
    Random,
}

impl std::fmt::Display for Selection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Selection::Fps => write!(f, "fps"),
            Selection::Random => write!(f, "random"),
        }
    }
}

/// An ordered set of landmarks together with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub manifold: ManifoldKind,
    pub points: Vec<ManifoldPoint>,
    pub selection: Selection,
    pub seed: u64,
}

/// Non-collapse statistics of the embedding on a validation set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingDiagnostics {
    /// Minimum pairwise embedded l2 separation over the sampled pairs.
    pub min_separation: f64,
    /// Fraction of sampled pairs with embedded l2 distance below `eps`.
    pub near_collision_fraction: f64,
    /// `eps` used for the near-collision count.
    pub eps: f64,
    /// Covering radius: max over validation of min geodesic distance to a
    /// landmark.
    pub covering_radius: f64,
    /// Number of distinct validation pairs sampled.
    pub n_pairs: usize,
}

/// Default number of uniform candidates per requested landmark for FPS.
pub const FPS_POOL_FACTOR: usize = 16;
/// Default near-collision threshold.
pub const DEFAULT_EPS: f64 = 1e-3;
/// Default number of sampled validation pairs for diagnostics.
pub const DEFAULT_N_PAIRS: usize = 20_000;

const RND_TAG: u64 = 1;
const FPS_TAG: u64 = 2;
const PAIR_TAG: u64 = 3;

/// Draws `m` landmarks i.i.d. from the uniform measure.
pub fn select_landmarks_rnd(manifold: ManifoldKind, m: usize, seed: u64) -> Result<LandmarkSet> {
    if m == 0 {
        return Err(Error::InvalidParameter("landmark count must be positive".into()));
    }
    let mut rng = rng::derive(seed, &[RND_TAG]);
    let points = (0..m).map(|_| geometry::sample_uniform(manifold, &mut rng)).collect();
    Ok(LandmarkSet { manifold, points, selection: Selection::Random, seed })
}

/// Greedy farthest-point sampling over `pool`; a missing pool defaults to
/// `16 m` uniform samples drawn from the seed. The first landmark is the
/// first pool element (itself random for the default pool); each next
/// landmark maximizes the distance to the chosen set, ties resolved by the
/// lowest candidate index.
pub fn select_landmarks_fps(
    manifold: ManifoldKind,
    m: usize,
    seed: u64,
    pool: Option<&[ManifoldPoint]>,
) -> Result<LandmarkSet> {
    if m == 0 {
        return Err(Error::InvalidParameter("landmark count must be positive".into()));
    }
    let default_pool: Vec<ManifoldPoint>;
    let candidates: &[ManifoldPoint] = match pool {
        Some(p) => p,
        None => {
            let mut rng = rng::derive(seed, &[FPS_TAG]);
            default_pool = (0..FPS_POOL_FACTOR * m).map(|_| geometry::sample_uniform(manifold, &mut rng)).collect();
            &default_pool
        }
    };
    if candidates.len() < m {
        return Err(Error::InvalidParameter(format!(
            "candidate pool of {} cannot yield {m} landmarks",
            candidates.len()
        )));
    }
    for c in candidates {
        if c.manifold != manifold {
            return Err(Error::ManifoldMismatch(manifold, c.manifold));
        }
    }

    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    chosen.push(0);
    let mut min_dist: Vec<f64> = candidates
        .iter()
        .map(|c| geometry::dist(c, &candidates[0]).unwrap_or(f64::INFINITY))
        .collect();
    while chosen.len() < m {
        let mut best = 0;
        let mut best_dist = f64::NEG_INFINITY;
        for (i, &d) in min_dist.iter().enumerate() {
            if d > best_dist {
                best = i;
                best_dist = d;
            }
        }
        chosen.push(best);
        for (i, d) in min_dist.iter_mut().enumerate() {
            let nd = geometry::dist(&candidates[i], &candidates[best])?;
            if nd < *d {
                *d = nd;
            }
        }
    }

    let points = chosen.iter().map(|&i| candidates[i].clone()).collect();
    Ok(LandmarkSet { manifold, points, selection: Selection::Fps, seed })
}

impl LandmarkSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The distance-coordinate feature vector `phi(x)`.
    pub fn featurize(&self, x: &ManifoldPoint) -> Result<Vec<f64>> {
        self.points.iter().map(|l| geometry::dist(x, l)).collect()
    }

    /// First `m` landmarks as a set of their own (FPS prefixes are valid
    /// landmark sets by nestedness).
    pub fn prefix(&self, m: usize) -> LandmarkSet {
        LandmarkSet {
            manifold: self.manifold,
            points: self.points[..m.min(self.points.len())].to_vec(),
            selection: self.selection,
            seed: self.seed,
        }
    }

    /// Serializes as a one-line JSON header followed by CSV point rows.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::json!({
            "manifold": self.manifold,
            "count": self.points.len(),
            "selection": self.selection,
            "seed": self.seed,
        });
        writeln!(w, "{header}")?;
        for p in &self.points {
            writeln!(w, "{}", format_row(&p.coords))?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<LandmarkSet> {
        let mut lines = r.lines();
        let header_line = lines.next().ok_or_else(|| Error::Malformed("empty landmark file".into()))??;
        #[derive(Deserialize)]
        struct Header {
            manifold: ManifoldKind,
            count: usize,
            selection: Selection,
            seed: u64,
        }
        let header: Header = serde_json::from_str(&header_line)
            .map_err(|e| Error::Malformed(format!("landmark header: {e}")))?;
        let mut points = Vec::with_capacity(header.count);
        for (idx, line) in lines.enumerate() {
            let line = line?;
            let coords = parse_row(&line, header.manifold.ambient_dim(), idx + 2)?;
            points.push(
                ManifoldPoint::new(header.manifold, coords)
                    .map_err(|e| Error::Malformed(format!("line {}: {e}", idx + 2)))?,
            );
        }
        if points.len() != header.count {
            return Err(Error::Malformed(format!(
                "landmark header promises {} points, file has {}",
                header.count,
                points.len()
            )));
        }
        Ok(LandmarkSet { manifold: header.manifold, points, selection: header.selection, seed: header.seed })
    }

    pub fn save_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.save(std::io::BufWriter::new(file))
    }

    pub fn load_file(path: &Path) -> Result<LandmarkSet> {
        let file = std::fs::File::open(path)?;
        LandmarkSet::load(std::io::BufReader::new(file))
    }
}

/// Embedded-space non-collapse diagnostics over `validation`.
///
/// `n_pairs` distinct index pairs are drawn from the seed; `min_separation`
/// and the near-collision fraction are computed over those pairs, the
/// covering radius over all validation points.
pub fn diagnose(
    landmarks: &LandmarkSet,
    validation: &[ManifoldPoint],
    eps: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<EmbeddingDiagnostics> {
    if validation.len() < 2 {
        return Err(Error::InvalidParameter("need at least two validation points".into()));
    }
    let features: Vec<Vec<f64>> = validation.iter().map(|x| landmarks.featurize(x)).collect::<Result<_>>()?;

    let mut covering_radius: f64 = 0.0;
    for f in &features {
        let nearest = f.iter().cloned().fold(f64::INFINITY, f64::min);
        covering_radius = covering_radius.max(nearest);
    }

    let mut rng = rng::derive(seed, &[PAIR_TAG]);
    let mut min_separation = f64::INFINITY;
    let mut collisions = 0usize;
    for _ in 0..n_pairs {
        let a = rng.gen_range(0..validation.len());
        let b = loop {
            let b = rng.gen_range(0..validation.len());
            if b != a {
                break b;
            }
        };
        let d2: f64 = features[a].iter().zip(&features[b]).map(|(x, y)| (x - y) * (x - y)).sum();
        let d = d2.sqrt();
        min_separation = min_separation.min(d);
        if d < eps {
            collisions += 1;
        }
    }

    Ok(EmbeddingDiagnostics {
        min_separation,
        near_collision_fraction: collisions as f64 / n_pairs as f64,
        eps,
        covering_radius,
        n_pairs,
    })
}

/// Result of the landmark-count search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChosenM {
    pub m: usize,
    /// False when no schedule entry met the thresholds and the largest entry
    /// was returned as a fallback.
    pub satisfied: bool,
}

/// Picks the smallest `M` in `schedule` whose FPS embedding keeps
/// `min_separation > separation_tol` and a zero near-collision fraction on
/// `validation`. Falls back to the largest entry, flagged, when none
/// qualifies. Landmarks are built once at the largest `M`; nested FPS
/// prefixes give the smaller sets.
pub fn choose_m(
    manifold: ManifoldKind,
    schedule: &[usize],
    validation: &[ManifoldPoint],
    eps: f64,
    separation_tol: f64,
    seed: u64,
) -> Result<ChosenM> {
    if schedule.is_empty() {
        return Err(Error::InvalidParameter("empty landmark schedule".into()));
    }
    let mut sorted = schedule.to_vec();
    sorted.sort_unstable();
    let max_m = *sorted.last().unwrap();
    let full = select_landmarks_fps(manifold, max_m, seed, None)?;
    for &m in &sorted {
        let diag = diagnose(&full.prefix(m), validation, eps, DEFAULT_N_PAIRS, seed)?;
        if diag.min_separation > separation_tol && diag.near_collision_fraction == 0.0 {
            return Ok(ChosenM { m, satisfied: true });
        }
    }
    Ok(ChosenM { m: max_m, satisfied: false })
}
