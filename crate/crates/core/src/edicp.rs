//! Edge-guided ICP: pose-guided pre-alignment, kd-tree correspondences with
//! an overlap-adaptive rejection threshold and weighted rigid updates. A
//! plain point-to-point ICP baseline shares the same loop.

use kiddo::{ImmutableKdTree, SquaredEuclidean};

use crate::error::{invalid, Error, Result};
use crate::fusion::nearest_index;
use crate::geom::{log_so3, RigidTransform, Vec3};
use crate::recon::{weighted_kabsch, FramePose, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source: usize,
    pub target: usize,
    /// Meters.
    pub distance: f64,
    pub weight: f64,
}

/// Immutable nearest-neighbour index over a point set.
pub struct NnIndex {
    tree: ImmutableKdTree<f64, 3>,
    len: usize,
}

impl NnIndex {
    pub fn new(points: &[Vec3]) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("cannot index an empty point set"));
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(invalid("point set contains non-finite coordinates"));
        }
        let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let tree = ImmutableKdTree::<f64, 3>::new_from_slice(&raw)
            .map_err(|e| invalid(format!("kd-tree construction failed: {e:?}")))?;
        Ok(Self { tree, len: points.len() })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Index and Euclidean distance of the nearest point.
    pub fn nearest(&self, p: &Vec3) -> (usize, f64) {
        let hit = self.tree.query(&[p.x, p.y, p.z]).nearest_one::<SquaredEuclidean<f64>>().execute();
        (hit.item as usize, hit.distance.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prealignment {
    /// Source → target.
    pub transform: RigidTransform,
    /// False when a reference pose was missing and identity was returned.
    pub aligned: bool,
}

/// `T_target⁻¹ ∘ T_source` from the poses nearest to each cloud's reference
/// time. Poses further than `tol` from the reference count as missing.
pub fn prealign(
    source_poses: &[FramePose],
    source_t: f64,
    target_poses: &[FramePose],
    target_t: f64,
    tol: f64,
) -> Prealignment {
    let pick = |poses: &[FramePose], t: f64| {
        if poses.is_empty() {
            return None;
        }
        let times: Vec<f64> = poses.iter().map(|p| p.t).collect();
        let i = nearest_index(&times, t);
        ((poses[i].t - t).abs() <= tol).then_some(poses[i].camera_to_world)
    };
    match (pick(source_poses, source_t), pick(target_poses, target_t)) {
        (Some(s), Some(t)) => Prealignment { transform: t.inverse() * s, aligned: true },
        _ => {
            log::warn!("prealign: missing reference pose, falling back to identity");
            Prealignment { transform: RigidTransform::identity(), aligned: false }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdEstimate {
    pub threshold: f64,
    pub overlap: f64,
}

/// Nearest-rank quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Overlap is the fraction of distances below three times the median; the
/// threshold is the distance quantile at that overlap, clamped to `bounds`.
pub fn adaptive_threshold_with(distances: &[f64], bounds: (f64, f64)) -> Result<ThresholdEstimate> {
    if distances.is_empty() {
        return Err(invalid("adaptive threshold needs at least one distance"));
    }
    if distances.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
        return Err(invalid("distances must be finite and non-negative"));
    }
    if !(0.0 < bounds.0 && bounds.0 <= bounds.1 && bounds.1 <= 1.0) {
        return Err(invalid("overlap bounds must satisfy 0 < lo <= hi <= 1"));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[(sorted.len() - 1) / 2];
    let cut = 3.0 * median;
    let overlap = sorted.iter().filter(|d| **d < cut).count() as f64 / sorted.len() as f64;
    let threshold = quantile_sorted(&sorted, overlap.clamp(bounds.0, bounds.1));
    Ok(ThresholdEstimate { threshold, overlap })
}

pub fn adaptive_threshold(distances: &[f64]) -> Result<ThresholdEstimate> {
    adaptive_threshold_with(distances, (0.5, 0.95))
}

/// `w = 1/(1 + d/d̄)` with `d̄` the mean distance; all ones when `d̄ = 0`.
pub fn distance_weights(distances: &[f64]) -> Vec<f64> {
    if distances.is_empty() {
        return Vec::new();
    }
    let mean = distances.iter().sum::<f64>() / distances.len() as f64;
    if mean <= 0.0 {
        return vec![1.0; distances.len()];
    }
    distances.iter().map(|d| 1.0 / (1.0 + d / mean)).collect()
}

/// Weighted rigid fit `target ≈ T · source` over the correspondences.
pub fn estimate_weighted_transform(
    corrs: &[Correspondence],
    source: &[Vec3],
    target: &[Vec3],
) -> Result<RigidTransform> {
    let mut s = Vec::with_capacity(corrs.len());
    let mut t = Vec::with_capacity(corrs.len());
    let mut w = Vec::with_capacity(corrs.len());
    for c in corrs {
        if c.source >= source.len() || c.target >= target.len() {
            return Err(invalid("correspondence index out of range"));
        }
        if !(c.weight > 0.0) {
            return Err(invalid("correspondence weights must be positive"));
        }
        s.push(source[c.source]);
        t.push(target[c.target]);
        w.push(c.weight);
    }
    Ok(weighted_kabsch(&s, &t, &w)?.transform())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationConfig {
    pub max_iterations: usize,
    /// Stop once the per-iteration update is smaller than this
    /// (rotation angle in radians plus translation norm in meters).
    pub tolerance: f64,
    pub overlap_bounds: (f64, f64),
    /// Plain ICP: uniform weights and the fixed threshold below.
    pub baseline: bool,
    /// Threshold used in baseline mode, meters.
    pub baseline_threshold: f64,
    /// Force uniform weights outside baseline mode.
    pub uniform_weights: bool,
    /// Fixed threshold outside baseline mode; `None` selects the adaptive rule.
    pub fixed_threshold: Option<f64>,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-10,
            overlap_bounds: (0.5, 0.95),
            baseline: false,
            baseline_threshold: f64::INFINITY,
            uniform_weights: false,
            fixed_threshold: None,
        }
    }
}

impl RegistrationConfig {
    pub fn plain_icp() -> Self {
        Self { baseline: true, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(invalid("max iterations must be at least 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(invalid("tolerance must be positive"));
        }
        let (lo, hi) = self.overlap_bounds;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(invalid("overlap bounds must satisfy 0 < lo <= hi <= 1"));
        }
        if !(self.baseline_threshold > 0.0) {
            return Err(invalid("baseline threshold must be positive"));
        }
        if let Some(t) = self.fixed_threshold {
            if !(t > 0.0) {
                return Err(invalid("fixed threshold must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// RMSE of all source nearest-neighbour distances after the update.
    pub rmse: f64,
    pub overlap: f64,
    pub threshold: f64,
    pub correspondences: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Source → target.
    pub transform: RigidTransform,
    pub rmse_trace: Vec<f64>,
    pub overlap: f64,
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
}

impl RegistrationResult {
    pub fn final_rmse(&self) -> f64 {
        *self.rmse_trace.last().expect("trace is never empty")
    }
}

fn nn_pass(index: &NnIndex, source: &[Vec3], t: &RigidTransform) -> (Vec<usize>, Vec<f64>) {
    source
        .iter()
        .map(|p| index.nearest(&t.transform_point(p)))
        .unzip()
}

fn rms(d: &[f64]) -> f64 {
    (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt()
}

/// Registers `source` onto `target` starting from `init` (source → target).
///
/// An update that would raise the overall RMSE is rejected and ends the
/// loop, so the trace never increases.
pub fn register(
    source: &PointCloud,
    target: &PointCloud,
    cfg: &RegistrationConfig,
    init: &RigidTransform,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    if source.len() < 3 || target.len() < 3 {
        return Err(invalid("registration needs at least 3 points per cloud"));
    }
    let index = NnIndex::new(&target.points)?;
    register_indexed(&source.points, &target.points, &index, cfg, init)
}

/// [`register`] against a prebuilt index of `target`.
pub fn register_indexed(
    source: &[Vec3],
    target: &[Vec3],
    index: &NnIndex,
    cfg: &RegistrationConfig,
    init: &RigidTransform,
) -> Result<RegistrationResult> {
    let uniform = cfg.baseline || cfg.uniform_weights;
    let mut t = *init;
    let (mut nn, mut dist) = nn_pass(index, source, &t);
    let mut current = rms(&dist);
    let mut trace = Vec::new();
    let mut history = Vec::new();
    let mut overlap = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let (threshold, ov) = if cfg.baseline {
            (cfg.baseline_threshold, 1.0)
        } else if let Some(fixed) = cfg.fixed_threshold {
            (fixed, 1.0)
        } else {
            let e = adaptive_threshold_with(&dist, cfg.overlap_bounds)?;
            (e.threshold, e.overlap)
        };
        overlap = ov;
        let kept: Vec<usize> = (0..source.len()).filter(|&i| dist[i] <= threshold).collect();
        if kept.is_empty() {
            return Err(Error::NoOverlap);
        }
        if kept.iter().all(|&i| dist[i] == 0.0) {
            // Already exact on every retained pair.
            trace.push(current);
            history.push(IterationRecord { rmse: current, overlap, threshold, correspondences: kept.len() });
            converged = true;
            break;
        }
        let kept_d: Vec<f64> = kept.iter().map(|&i| dist[i]).collect();
        let weights = if uniform { vec![1.0; kept.len()] } else { distance_weights(&kept_d) };
        let corrs: Vec<Correspondence> = kept
            .iter()
            .zip(&weights)
            .map(|(&i, &w)| Correspondence { source: i, target: nn[i], distance: dist[i], weight: w })
            .collect();
        let moved: Vec<Vec3> = source.iter().map(|p| t.transform_point(p)).collect();
        let delta = estimate_weighted_transform(&corrs, &moved, target)?;
        let candidate = delta * t;
        let (nn_new, dist_new) = nn_pass(index, source, &candidate);
        let next = rms(&dist_new);
        if next > current + 1e-12 {
            if trace.is_empty() {
                trace.push(current);
                history.push(IterationRecord { rmse: current, overlap, threshold, correspondences: kept.len() });
            }
            converged = true;
            break;
        }
        t = candidate;
        nn = nn_new;
        dist = dist_new;
        current = next;
        trace.push(current);
        history.push(IterationRecord { rmse: current, overlap, threshold, correspondences: kept.len() });
        let step = log_so3(&delta.rotation).norm() + delta.translation.norm();
        if step < cfg.tolerance {
            converged = true;
            break;
        }
    }
    Ok(RegistrationResult { transform: t, rmse_trace: trace, overlap, converged, iterations, history })
}

/// How [`rmse`] pairs the points of two clouds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    /// Each point of `a` with its nearest neighbour in `b`.
    Nearest,
    /// The larger of the two nearest-neighbour directions.
    Symmetric,
    /// `a[i]` with `b[i]`; the clouds must have equal length.
    Index,
}

/// Root-mean-square distance between paired points of `a` and `b`.
pub fn rmse(a: &[Vec3], b: &[Vec3], pairing: Pairing) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("rmse needs two nonempty clouds"));
    }
    let one_way = |a: &[Vec3], b: &[Vec3]| -> Result<f64> {
        let index = NnIndex::new(b)?;
        let d: Vec<f64> = a.iter().map(|p| index.nearest(p).1).collect();
        Ok(rms(&d))
    };
    match pairing {
        Pairing::Nearest => one_way(a, b),
        Pairing::Symmetric => Ok(one_way(a, b)?.max(one_way(b, a)?)),
        Pairing::Index => {
            if a.len() != b.len() {
                return Err(invalid(format!("index pairing needs equal sizes, got {} and {}", a.len(), b.len())));
            }
            let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| (p - q).norm()).collect();
            Ok(rms(&d))
        }
    }
}
