//! Point-cloud generation: ray–plane triangulation, frame poses for the
//! translation, rotation and translation–rotation scan modes, and stripe
//! gating around detected pipeline edges.

use image::GrayImage;
use nalgebra::Matrix3;

use crate::camera::{undistort_pixel, DistortionCoeffs, Intrinsics, UndistortConfig, Vec2};
use crate::error::{degenerate, invalid, Error, Result};
use crate::fusion::nearest_index;
use crate::geom::{RigidTransform, RotationMatrix, Vec3};
use crate::lightplane::{rotate_plane, LightPlane, RotationAxis};

/// How the displacement between frames is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DisplacementMode {
    /// Constant calibrated velocity (`μ = 0`).
    #[default]
    Uniform,
    /// Fused vehicle velocity (`μ = 1`).
    Fused,
}

impl DisplacementMode {
    pub fn mu(&self) -> u8 {
        match self {
            DisplacementMode::Uniform => 0,
            DisplacementMode::Fused => 1,
        }
    }

    pub fn from_mu(mu: u8) -> Result<Self> {
        match mu {
            0 => Ok(DisplacementMode::Uniform),
            1 => Ok(DisplacementMode::Fused),
            _ => Err(invalid(format!("mode flag must be 0 or 1, got {mu}"))),
        }
    }
}

/// Stripe centerline of one camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StripeFrame {
    pub id: usize,
    pub t: f64,
    pub pixels: Vec<Vec2>,
    /// Servo angle, radians.
    pub theta_r: f64,
    pub mode: DisplacementMode,
}

/// Camera → world at a frame time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePose {
    pub t: f64,
    pub camera_to_world: RigidTransform,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub frame_ids: Vec<usize>,
    pub weights: Vec<f64>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vec3>) -> Self {
        let n = points.len();
        Self { points, frame_ids: vec![0; n], weights: vec![1.0; n] }
    }

    pub fn push(&mut self, p: Vec3, frame_id: usize, weight: f64) {
        self.points.push(p);
        self.frame_ids.push(frame_id);
        self.weights.push(weight);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            points: self.points.iter().map(|p| t.transform_point(p)).collect(),
            frame_ids: self.frame_ids.clone(),
            weights: self.weights.clone(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            frame_ids: indices.iter().map(|&i| self.frame_ids[i]).collect(),
            weights: indices.iter().map(|&i| self.weights[i]).collect(),
        }
    }

    pub fn extend(&mut self, other: &Self) {
        self.points.extend_from_slice(&other.points);
        self.frame_ids.extend_from_slice(&other.frame_ids);
        self.weights.extend_from_slice(&other.weights);
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_ids.len() != self.points.len() || self.weights.len() != self.points.len() {
            return Err(invalid("point cloud attribute lengths differ"));
        }
        if self.points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(invalid("point cloud contains non-finite coordinates"));
        }
        Ok(())
    }
}

/// Ordered pixel vertices of a detected edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePolyline {
    vertices: Vec<Vec2>,
}

impl EdgePolyline {
    pub fn new(vertices: Vec<Vec2>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(invalid("edge polyline needs at least 2 vertices"));
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    /// Polyline length in pixels.
    pub fn length(&self) -> f64 {
        self.vertices.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn distance(&self, p: &Vec2) -> f64 {
        self.vertices
            .windows(2)
            .map(|w| point_segment_distance(p, &w[0], &w[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

fn point_segment_distance(p: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let s = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * s)).norm()
}

/// Intersects the viewing ray of `pixel` with the camera-frame `plane`.
pub fn triangulate(
    pixel: &Vec2,
    k: &Intrinsics,
    c: &DistortionCoeffs,
    plane: &LightPlane,
    cfg: &UndistortConfig,
) -> Result<Vec3> {
    let und = undistort_pixel(pixel, k, c, cfg)?;
    if !und.converged {
        return Err(Error::Numerical {
            reason: format!("undistortion did not converge in {} iterations", und.iterations),
            condition: f64::NAN,
        });
    }
    let ray = Vec3::new(und.point.x, und.point.y, 1.0);
    let n = plane.normal();
    let denom = n.dot(&ray);
    if denom.abs() <= 1e-9 * ray.norm() {
        return Err(Error::NoIntersection);
    }
    let s = -plane.d / denom;
    if s <= 0.0 {
        return Err(Error::BehindCamera(s));
    }
    Ok(ray * s)
}

/// Rigid alignment of camera-frame points to their world-frame counterparts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameAlignment {
    /// `R_W^C`.
    pub rotation: RotationMatrix,
    /// `t = P_W − R_W^C P_C` at the centroids.
    pub translation: Vec3,
    /// RMS residual of the aligned correspondences, meters.
    pub rms: f64,
    /// The unconstrained optimum was a reflection and was flipped.
    pub reflection_fixed: bool,
}

impl FrameAlignment {
    pub fn transform(&self) -> RigidTransform {
        RigidTransform::new(self.rotation, self.translation)
    }
}

/// Weighted Kabsch alignment `world ≈ R · camera + t`.
pub fn weighted_kabsch(camera: &[Vec3], world: &[Vec3], weights: &[f64]) -> Result<FrameAlignment> {
    if camera.len() != world.len() || camera.len() != weights.len() {
        return Err(invalid("correspondence lists differ in length"));
    }
    if camera.len() < 3 {
        return Err(degenerate("rigid alignment needs at least 3 correspondences"));
    }
    let wsum: f64 = weights.iter().sum();
    if !(wsum > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(invalid("weights must be non-negative with a positive sum"));
    }
    let cc = camera.iter().zip(weights).map(|(p, w)| p * *w).sum::<Vec3>() / wsum;
    let cw = world.iter().zip(weights).map(|(p, w)| p * *w).sum::<Vec3>() / wsum;
    let mut h = Matrix3::zeros();
    for ((a, b), w) in camera.iter().zip(world).zip(weights) {
        h += (a - cc) * (b - cw).transpose() * *w;
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut sv = svd.singular_values;
    // Order descending to inspect the two leading singular values.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let scale = sv[order[0]];
    if !(scale > 0.0) || sv[order[1]] <= 1e-12 * scale {
        return Err(degenerate("correspondences are collinear or coincident"));
    }
    let v = v_t.transpose();
    let mut r = v * u.transpose();
    let mut reflection_fixed = false;
    if r.determinant() < 0.0 {
        // Flip the singular vector of the smallest singular value.
        let mut d = Matrix3::identity();
        d[(order[2], order[2])] = -1.0;
        r = v * d * u.transpose();
        reflection_fixed = true;
        sv[order[2]] = -sv[order[2]];
    }
    let rotation = RotationMatrix::from_matrix_unchecked(r);
    let translation = cw - rotation.apply(&cc);
    let mut sq = 0.0;
    for ((a, b), w) in camera.iter().zip(world).zip(weights) {
        sq += w * (rotation.apply(a) + translation - b).norm_squared();
    }
    Ok(FrameAlignment { rotation, translation, rms: (sq / wsum).sqrt(), reflection_fixed })
}

/// `R_W^C` and `t` from camera/world correspondences of the calibration
/// target, e.g. the recovered target points and their board coordinates.
pub fn solve_frame_rotation(camera: &[Vec3], world: &[Vec3]) -> Result<FrameAlignment> {
    weighted_kabsch(camera, world, &vec![1.0; camera.len()])
}

/// Uniform-velocity pose: the base pose moved by `Δt · Δτ`, with
/// `Δt = (t2 − t1)/(τ2 − τ1)`.
pub fn translation_pose(
    t1: &Vec3,
    t2: &Vec3,
    tau1: f64,
    tau2: f64,
    r_wc: &RotationMatrix,
    t_base: &Vec3,
    dtau: f64,
) -> Result<FramePose> {
    let velocity = calibrated_velocity(t1, t2, tau1, tau2)?;
    Ok(FramePose { t: tau1 + dtau, camera_to_world: RigidTransform::new(*r_wc, velocity * dtau + t_base) })
}

/// `Δt = (t2 − t1)/(τ2 − τ1)`.
pub fn calibrated_velocity(t1: &Vec3, t2: &Vec3, tau1: f64, tau2: f64) -> Result<Vec3> {
    if !(tau2 > tau1) {
        return Err(invalid(format!("calibration times must increase, got {tau1} and {tau2}")));
    }
    Ok((t2 - t1) / (tau2 - tau1))
}

/// Fused velocity samples `(t, v)` sorted by time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VelocityTrack {
    pub times: Vec<f64>,
    pub velocities: Vec<Vec3>,
}

impl VelocityTrack {
    pub fn new(times: Vec<f64>, velocities: Vec<Vec3>) -> Result<Self> {
        if times.len() != velocities.len() {
            return Err(invalid("velocity track lengths differ"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("velocity track times must increase"));
        }
        Ok(Self { times, velocities })
    }

    /// Nearest sample to `t`, or a stale-velocity error if it is farther
    /// than `tol`.
    pub fn at(&self, t: f64, tol: f64) -> Result<Vec3> {
        if self.times.is_empty() {
            return Err(Error::StaleVelocity { gap: f64::INFINITY });
        }
        let i = nearest_index(&self.times, t);
        let gap = (self.times[i] - t).abs();
        if gap > tol {
            return Err(Error::StaleVelocity { gap });
        }
        Ok(self.velocities[i])
    }
}

/// One translation–rotation pose step: the previous translation `t_base`
/// advanced over `Δτ` either by the calibrated velocity (`μ = 0`) or by the
/// fused velocity rotated by `R_C^A` (`μ = 1`).
pub fn tr_pose(
    mode: DisplacementMode,
    calibrated: &Vec3,
    dtau: f64,
    fused: Option<&Vec3>,
    r_ca: &RotationMatrix,
    r_wc: &RotationMatrix,
    t_base: &Vec3,
) -> Result<RigidTransform> {
    let displacement = match mode {
        DisplacementMode::Uniform => calibrated * dtau,
        DisplacementMode::Fused => {
            let v = fused.ok_or(Error::StaleVelocity { gap: f64::INFINITY })?;
            r_ca.apply(v) * dtau
        }
    };
    Ok(RigidTransform::new(*r_wc, displacement + t_base))
}

/// Inputs shared by every frame of a translation–rotation pose chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseChain {
    pub r_wc: RotationMatrix,
    /// Translation at `tau0`.
    pub t0: Vec3,
    pub tau0: f64,
    /// Calibrated velocity `Δt`.
    pub calibrated: Vec3,
    /// Rotation of fused velocities into the reconstruction world frame.
    pub r_ca: RotationMatrix,
    pub sync_tol: f64,
}

/// Chains [`tr_pose`] over frame times. In fused mode each interval uses the
/// mean of the fused velocities at its two ends.
pub fn chain_poses(
    times: &[f64],
    modes: &[DisplacementMode],
    chain: &PoseChain,
    fused: &VelocityTrack,
) -> Result<Vec<FramePose>> {
    if times.len() != modes.len() {
        return Err(invalid("frame times and modes differ in length"));
    }
    let mut out: Vec<FramePose> = Vec::with_capacity(times.len());
    let mut prev_t = chain.tau0;
    let mut prev_v: Option<Vec3> = None;
    let mut t_cur = chain.t0;
    for (&tau, &mode) in times.iter().zip(modes) {
        let dtau = tau - prev_t;
        if dtau < 0.0 {
            return Err(invalid("frame times must not decrease"));
        }
        let pose = match mode {
            DisplacementMode::Uniform => {
                prev_v = None;
                tr_pose(mode, &chain.calibrated, dtau, None, &chain.r_ca, &chain.r_wc, &t_cur)?
            }
            DisplacementMode::Fused => {
                let v1 = fused.at(tau, chain.sync_tol)?;
                let v0 = match prev_v {
                    Some(v) => v,
                    None => fused.at(prev_t, chain.sync_tol)?,
                };
                prev_v = Some(v1);
                let mean = 0.5 * (v0 + v1);
                tr_pose(mode, &chain.calibrated, dtau, Some(&mean), &chain.r_ca, &chain.r_wc, &t_cur)?
            }
        };
        t_cur = pose.translation;
        prev_t = tau;
        out.push(FramePose { t: tau, camera_to_world: pose });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatedStripe {
    pub frame: StripeFrame,
    /// Indices of the retained pixels in the input frame.
    pub kept: Vec<usize>,
    /// False when no edges were available and nothing was gated.
    pub gated: bool,
}

/// Keeps the stripe pixels within `eps_px` of any edge polyline, in order.
pub fn gate_stripe(stripe: &StripeFrame, edges: &[EdgePolyline], eps_px: f64) -> Result<GatedStripe> {
    if !(eps_px > 0.0) {
        return Err(invalid("gating threshold must be positive"));
    }
    if edges.is_empty() || eps_px == f64::INFINITY {
        return Ok(GatedStripe {
            frame: stripe.clone(),
            kept: (0..stripe.pixels.len()).collect(),
            gated: !edges.is_empty(),
        });
    }
    let kept: Vec<usize> = stripe
        .pixels
        .iter()
        .enumerate()
        .filter(|(_, p)| edges.iter().any(|e| e.distance(p) <= eps_px))
        .map(|(i, _)| i)
        .collect();
    let frame = StripeFrame { pixels: kept.iter().map(|&i| stripe.pixels[i]).collect(), ..stripe.clone() };
    Ok(GatedStripe { frame, kept, gated: true })
}

/// Pluggable pipeline-edge detector.
pub trait EdgeDetector {
    fn detect(&self, image: &GrayImage) -> Vec<EdgePolyline>;
}

/// Canny edges linked into polylines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CannyDetector {
    pub low: f32,
    pub high: f32,
    /// Minimum number of linked edge pixels.
    pub min_pixels: usize,
    /// Douglas–Peucker tolerance, pixels.
    pub simplify_tol: f64,
}

impl Default for CannyDetector {
    fn default() -> Self {
        Self { low: 50.0, high: 150.0, min_pixels: 10, simplify_tol: 0.5 }
    }
}

impl EdgeDetector for CannyDetector {
    fn detect(&self, image: &GrayImage) -> Vec<EdgePolyline> {
        if image.width() < 3 || image.height() < 3 {
            return Vec::new();
        }
        let edges = imageproc::edges::canny(image, self.low, self.high);
        link_edges(&edges, self.min_pixels)
            .into_iter()
            .filter_map(|chain| EdgePolyline::new(douglas_peucker(&chain, self.simplify_tol)).ok())
            .collect()
    }
}

pub fn detect_edges(image: &GrayImage) -> Vec<EdgePolyline> {
    CannyDetector::default().detect(image)
}

const NEIGHBOURS: [(i64, i64); 8] = [(1, 0), (0, 1), (-1, 0), (0, -1), (1, 1), (-1, 1), (-1, -1), (1, -1)];

/// Traces 8-connected chains of nonzero pixels, starting from chain ends.
fn link_edges(edges: &GrayImage, min_pixels: usize) -> Vec<Vec<Vec2>> {
    let (w, h) = (edges.width() as i64, edges.height() as i64);
    let on = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && edges.get_pixel(x as u32, y as u32)[0] > 0;
    let idx = |x: i64, y: i64| (y * w + x) as usize;
    let mut visited = vec![false; (w * h) as usize];
    let degree = |x: i64, y: i64| NEIGHBOURS.iter().filter(|(dx, dy)| on(x + dx, y + dy)).count();
    let mut chains = Vec::new();
    let trace = |x0: i64, y0: i64, visited: &mut Vec<bool>| {
        let mut chain = vec![(x0, y0)];
        visited[idx(x0, y0)] = true;
        // Walk forward, then from the start in the other direction.
        for pass in 0..2 {
            if pass == 1 {
                chain.reverse();
            }
            let (mut x, mut y) = *chain.last().expect("nonempty");
            loop {
                let next = NEIGHBOURS
                    .iter()
                    .map(|(dx, dy)| (x + dx, y + dy))
                    .find(|&(nx, ny)| on(nx, ny) && !visited[idx(nx, ny)]);
                let Some((nx, ny)) = next else { break };
                visited[idx(nx, ny)] = true;
                chain.push((nx, ny));
                x = nx;
                y = ny;
            }
        }
        chain
    };
    for pass in 0..2 {
        for y in 0..h {
            for x in 0..w {
                if !on(x, y) || visited[idx(x, y)] || (pass == 0 && degree(x, y) > 1) {
                    continue;
                }
                let chain = trace(x, y, &mut visited);
                if chain.len() >= min_pixels {
                    chains.push(chain.into_iter().map(|(x, y)| Vec2::new(x as f64, y as f64)).collect());
                }
            }
        }
    }
    chains
}

fn douglas_peucker(points: &[Vec2], tol: f64) -> Vec<Vec2> {
    if points.len() < 3 {
        return points.to_vec();
    }
    let mut keep = vec![false; points.len()];
    keep[0] = true;
    keep[points.len() - 1] = true;
    let mut stack = vec![(0, points.len() - 1)];
    while let Some((a, b)) = stack.pop() {
        let (mut worst, mut at) = (0.0, a);
        for i in a + 1..b {
            let d = point_segment_distance(&points[i], &points[a], &points[b]);
            if d > worst {
                worst = d;
                at = i;
            }
        }
        if worst > tol {
            keep[at] = true;
            stack.push((a, at));
            stack.push((at, b));
        }
    }
    points.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| *p).collect()
}

/// Light plane of a frame.
pub trait PlaneProvider {
    fn plane_for(&self, frame: &StripeFrame) -> Result<LightPlane>;
}

/// Same plane for every frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPlane(pub LightPlane);

impl PlaneProvider for FixedPlane {
    fn plane_for(&self, _frame: &StripeFrame) -> Result<LightPlane> {
        Ok(self.0)
    }
}

/// Calibrated plane rotated by each frame's servo angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatingPlane {
    pub plane: LightPlane,
    pub axis: RotationAxis,
}

impl PlaneProvider for RotatingPlane {
    fn plane_for(&self, frame: &StripeFrame) -> Result<LightPlane> {
        rotate_plane(&self.plane, &self.axis, frame.theta_r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloudBuild {
    pub cloud: PointCloud,
    /// Index of each point's pixel in its frame.
    pub pixel_indices: Vec<usize>,
    /// Frames with no pose within the sync tolerance.
    pub dropped_frames: usize,
    /// Pixels whose ray missed the plane or failed to undistort.
    pub failed_pixels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloudConfig {
    pub undistort: UndistortConfig,
    /// Maximum frame–pose time offset, seconds.
    pub sync_tol: f64,
}

impl Default for CloudConfig {
    fn default() -> Self {
        Self { undistort: UndistortConfig { tol: 1e-12, max_iter: 500 }, sync_tol: 1e-6 }
    }
}

/// Triangulates every stripe pixel and maps it to the world with the pose of
/// its frame.
pub fn build_cloud(
    frames: &[StripeFrame],
    poses: &[FramePose],
    planes: &dyn PlaneProvider,
    k: &Intrinsics,
    c: &DistortionCoeffs,
    cfg: &CloudConfig,
) -> Result<CloudBuild> {
    let pose_times: Vec<f64> = poses.iter().map(|p| p.t).collect();
    if pose_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("poses must be sorted by time"));
    }
    let mut out =
        CloudBuild { cloud: PointCloud::default(), pixel_indices: Vec::new(), dropped_frames: 0, failed_pixels: 0 };
    for frame in frames {
        let pose = if poses.is_empty() {
            None
        } else {
            let i = nearest_index(&pose_times, frame.t);
            ((poses[i].t - frame.t).abs() <= cfg.sync_tol).then_some(&poses[i])
        };
        let Some(pose) = pose else {
            out.dropped_frames += 1;
            continue;
        };
        let plane = planes.plane_for(frame)?;
        for (i, px) in frame.pixels.iter().enumerate() {
            match triangulate(px, k, c, &plane, &cfg.undistort) {
                Ok(pc) => {
                    out.cloud.push(pose.camera_to_world.transform_point(&pc), frame.id, 1.0);
                    out.pixel_indices.push(i);
                }
                Err(_) => out.failed_pixels += 1,
            }
        }
    }
    if out.dropped_frames > 0 {
        log::warn!("build_cloud: {} frames had no pose", out.dropped_frames);
    }
    Ok(out)
}
