//! Synthetic ground truth: pipeline scenes with defects, laser-stripe
//! projection, vehicle trajectories and IMU/DVL traces.
//!
//! Every generator is a pure function of its spec and a `u64` seed. Separate
//! ChaCha8 streams feed independent noise sources so that enabling one source
//! does not shift the samples of another.

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::camera::{distort, project_normalized, undistort_newton, DistortionCoeffs, Intrinsics, Vec2};
use crate::error::{invalid, Error, Result};
use crate::fixtures;
use crate::fusion::{DvlSample, ImuSample};
use crate::geom::{exp_se3, exp_so3, Mat3, RigidTransform, RotationMatrix, Twist, Vec3};
use crate::handeye::{predict_dvl_motion, PosePair};
use crate::lightplane::{
    axis_from_planes, rotate_plane, EdgeLine, Frame, LightPlane, RotationAxis, TargetLine, TargetObservation,
};
use crate::recon::{DisplacementMode, StripeFrame};

const STREAM_SCENE: u64 = 1;
const STREAM_SPEED: u64 = 2;
const STREAM_IMU: u64 = 3;
const STREAM_DVL: u64 = 4;
const STREAM_PIXELS: u64 = 5;
const STREAM_PAIRS: u64 = 6;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gauss(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn spec_error(msg: impl Into<String>) -> Error {
    Error::InvalidSpec(msg.into())
}

// ---------------------------------------------------------------------------
// Scene

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DefectKind {
    /// Circular cutout in the wall.
    Leak,
    /// Inward Gaussian bump.
    Depression,
    /// Outward Gaussian bump.
    Attachment,
}

/// Straight pipe segment. In its local frame the axis is `y`, the segment
/// spans `y ∈ [−length/2, length/2]` and the azimuth `φ` is measured from `x`
/// toward `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipeSegment {
    pub radius: f64,
    pub length: f64,
    /// Local → world.
    pub pose: RigidTransform,
}

impl PipeSegment {
    /// Segment lying on a flat bed `z = bed` with its axis along world `x`,
    /// centered at `x = x_center`, `y = 0`.
    pub fn on_bed(radius: f64, length: f64, x_center: f64, bed: f64) -> Self {
        // Local x → world −y, local y → world x, local z → world z.
        let r = RotationMatrix::from_matrix_unchecked(Mat3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0));
        Self { radius, length, pose: RigidTransform::new(r, Vec3::new(x_center, 0.0, bed + radius)) }
    }

    pub fn axis_direction(&self) -> Vec3 {
        self.pose.rotation.apply(&Vec3::y())
    }

    pub fn center(&self) -> Vec3 {
        self.pose.translation
    }

    fn endpoints(&self) -> (Vec3, Vec3) {
        let h = self.axis_direction() * (0.5 * self.length);
        (self.center() - h, self.center() + h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefectSpec {
    pub kind: DefectKind,
    pub segment: usize,
    /// Axial position in the segment frame, meters.
    pub axial: f64,
    /// Azimuth, radians.
    pub azimuth: f64,
    /// Gaussian width of a bump or radius of a leak, meters.
    pub size: f64,
    /// Bump height, meters; ignored for leaks.
    pub height: f64,
}

impl DefectSpec {
    fn signed_height(&self) -> f64 {
        match self.kind {
            DefectKind::Attachment => self.height,
            DefectKind::Depression => -self.height,
            DefectKind::Leak => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
}

/// Random rocks scattered on the bed away from the pipes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClutterSpec {
    pub count: usize,
    pub radius_range: (f64, f64),
    /// `[x_min, x_max, y_min, y_max]` on the bed.
    pub region: [f64; 4],
    /// Minimum horizontal clearance from any pipe surface, meters.
    pub clearance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneSpec {
    pub segments: Vec<PipeSegment>,
    pub defects: Vec<DefectSpec>,
    /// Flat bed `z = h`, meters.
    pub terrain_height: Option<f64>,
    pub clutter: Option<ClutterSpec>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.radius > 0.0) || !(s.length > 0.0) {
                return Err(spec_error(format!("segment {i}: radius and length must be positive")));
            }
        }
        for i in 0..self.segments.len() {
            for j in i + 1..self.segments.len() {
                let (a, b) = (&self.segments[i], &self.segments[j]);
                let (a0, a1) = a.endpoints();
                let (b0, b1) = b.endpoints();
                if segment_distance(&a0, &a1, &b0, &b1) < a.radius + b.radius {
                    return Err(spec_error(format!("segments {i} and {j} overlap")));
                }
            }
        }
        for (i, d) in self.defects.iter().enumerate() {
            let Some(seg) = self.segments.get(d.segment) else {
                return Err(spec_error(format!("defect {i}: no segment {}", d.segment)));
            };
            if !(d.size > 0.0) || d.size >= seg.radius {
                return Err(spec_error(format!("defect {i}: size must be in (0, radius)")));
            }
            if d.kind != DefectKind::Leak && (!(d.height > 0.0) || d.height >= seg.radius) {
                return Err(spec_error(format!("defect {i}: height must be in (0, radius)")));
            }
            if d.axial.abs() > 0.5 * seg.length {
                return Err(spec_error(format!("defect {i}: axial position outside the segment")));
            }
        }
        if let Some(c) = &self.clutter {
            if self.terrain_height.is_none() {
                return Err(spec_error("clutter needs a terrain height"));
            }
            let (lo, hi) = c.radius_range;
            if !(lo > 0.0 && hi >= lo) || !(c.region[1] > c.region[0] && c.region[3] > c.region[2]) {
                return Err(spec_error("clutter radius range or region is empty"));
            }
        }
        Ok(())
    }
}

/// Closest distance between segments `p0–p1` and `q0–q1`.
fn segment_distance(p0: &Vec3, p1: &Vec3, q0: &Vec3, q1: &Vec3) -> f64 {
    let (d1, d2, r) = (p1 - p0, q1 - q0, p0 - q0);
    let (a, e, f) = (d1.dot(&d1), d2.dot(&d2), d2.dot(&r));
    let c = d1.dot(&r);
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let mut s = if denom > 1e-15 { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    ((p0 + d1 * s) - (q0 + d2 * t)).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceLabel {
    Pipeline(usize),
    Terrain,
    Clutter(usize),
}

impl SurfaceLabel {
    pub fn is_pipeline(&self) -> bool {
        matches!(self, SurfaceLabel::Pipeline(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    pub label: SurfaceLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub rocks: Vec<Sphere>,
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let w = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if w <= -std::f64::consts::PI {
        w + two_pi
    } else {
        w
    }
}

pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rocks = Vec::new();
    if let (Some(c), Some(bed)) = (&spec.clutter, spec.terrain_height) {
        let mut rng = rng_for(seed, STREAM_SCENE);
        let mut attempts = 0;
        while rocks.len() < c.count && attempts < 1000 * (c.count + 1) {
            attempts += 1;
            let radius = rng.random_range(c.radius_range.0..=c.radius_range.1);
            let x = rng.random_range(c.region[0]..c.region[1]);
            let y = rng.random_range(c.region[2]..c.region[3]);
            // Half-buried rocks.
            let center = Vec3::new(x, y, bed);
            let clear = spec.segments.iter().all(|s| {
                let local = s.pose.inverse().transform_point(&center);
                let axial = local.y.clamp(-0.5 * s.length, 0.5 * s.length);
                let closest = s.pose.transform_point(&Vec3::new(0.0, axial, 0.0));
                let horiz = Vec3::new(center.x - closest.x, center.y - closest.y, 0.0).norm();
                horiz > s.radius + radius + c.clearance
            });
            if clear {
                rocks.push(Sphere { center, radius });
            }
        }
    }
    Ok(Scene { spec: spec.clone(), rocks })
}

impl Scene {
    /// Radial offset of the wall of segment `seg` at `(y, φ)` in its frame.
    pub fn surface_offset(&self, seg: usize, y: f64, phi: f64) -> f64 {
        let r = self.spec.segments[seg].radius;
        self.spec
            .defects
            .iter()
            .filter(|d| d.segment == seg && d.kind != DefectKind::Leak)
            .map(|d| {
                let arc = r * wrap_angle(phi - d.azimuth);
                let dy = y - d.axial;
                d.signed_height() * (-(arc * arc + dy * dy) / (2.0 * d.size * d.size)).exp()
            })
            .sum()
    }

    /// Whether `(y, φ)` falls inside a leak cutout of segment `seg`.
    pub fn in_leak(&self, seg: usize, y: f64, phi: f64) -> bool {
        let r = self.spec.segments[seg].radius;
        self.spec.defects.iter().filter(|d| d.segment == seg && d.kind == DefectKind::Leak).any(|d| {
            let arc = r * wrap_angle(phi - d.azimuth);
            let dy = y - d.axial;
            arc * arc + dy * dy < d.size * d.size
        })
    }

    /// Radial signed distance to the wall of segment `seg`, positive outside.
    /// Exact for a bare cylinder; for bumps it is the radial gap to the wall,
    /// which vanishes exactly on the surface.
    pub fn pipe_signed_distance(&self, seg: usize, p: &Vec3) -> f64 {
        let s = &self.spec.segments[seg];
        let l = s.pose.inverse().transform_point(p);
        let rho = (l.x * l.x + l.z * l.z).sqrt();
        rho - s.radius - self.surface_offset(seg, l.y, l.z.atan2(l.x))
    }

    /// Signed distance to the closest surface: pipes (radially), bed and
    /// rocks.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.spec.segments.len() {
            best = best.min(self.pipe_signed_distance(i, p));
        }
        if let Some(h) = self.spec.terrain_height {
            best = best.min(p.z - h);
        }
        for r in &self.rocks {
            best = best.min((p - r.center).norm() - r.radius);
        }
        best
    }

    /// Pipe azimuth and axial position of a world point.
    pub fn pipe_coordinates(&self, seg: usize, p: &Vec3) -> (f64, f64) {
        let l = self.spec.segments[seg].pose.inverse().transform_point(p);
        (l.y, l.z.atan2(l.x))
    }

    fn raycast_pipe(&self, seg: usize, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let s = &self.spec.segments[seg];
        let inv = s.pose.inverse();
        let o = inv.transform_point(origin);
        let d = inv.transform_vector(dir);
        let outer = s.radius
            + self
                .spec
                .defects
                .iter()
                .filter(|x| x.segment == seg && x.kind == DefectKind::Attachment)
                .map(|x| x.height)
                .sum::<f64>();
        let (t_in, t_out) = cylinder_interval(&o, &d, outer)?;
        let (mut t_in, mut t_out) = (t_in.max(0.0), t_out);
        // Offsets are radial, so the wall lies within the axial slab.
        let half = 0.5 * s.length;
        if d.y.abs() > 1e-15 {
            let (a, b) = ((-half - o.y) / d.y, (half - o.y) / d.y);
            t_in = t_in.max(a.min(b));
            t_out = t_out.min(a.max(b));
        } else if o.y.abs() > half {
            return None;
        }
        if t_out <= t_in {
            return None;
        }
        let defects: Vec<&DefectSpec> = self.spec.defects.iter().filter(|x| x.segment == seg).collect();
        // Away from every bump the wall is the bare cylinder to within
        // e^-40 of the bump height.
        let bare = cylinder_interval(&o, &d, s.radius).map(|(t0, _)| t0);
        let reach: f64 = defects.iter().filter(|x| x.kind != DefectKind::Leak).map(|x| x.height.abs()).sum();
        let t_end = bare.filter(|t| *t >= t_in && *t <= t_out).unwrap_or(t_out);
        let clear = defects.iter().filter(|x| x.kind != DefectKind::Leak).all(|x| {
            let c = Vec3::new(s.radius * x.azimuth.cos(), x.axial, s.radius * x.azimuth.sin());
            let t = (c - o).dot(&d).clamp(t_in, t_end);
            (o + d * t - c).norm() > 9.0 * x.size + reach
        });
        if clear && !defects.iter().all(|x| x.kind == DefectKind::Leak) {
            let t0 = bare.filter(|t| *t >= t_in && *t > 0.0)?;
            let p = o + d * t0;
            if p.y.abs() > half || self.in_leak(seg, p.y, p.z.atan2(p.x)) {
                return None;
            }
            return Some(t0);
        }
        let f = |t: f64| {
            let p = o + d * t;
            (p.x * p.x + p.z * p.z).sqrt() - s.radius - self.surface_offset(seg, p.y, p.z.atan2(p.x))
        };
        let t_hit = if defects.iter().all(|x| x.kind == DefectKind::Leak) {
            let (t0, _) = cylinder_interval(&o, &d, s.radius)?;
            if t0 <= 0.0 {
                return None;
            }
            t0
        } else {
            // Sphere tracing with a Lipschitz bound on the wall offset, and a
            // floor on the step so grazing rays still advance.
            let inner = s.radius
                - defects.iter().filter(|x| x.kind == DefectKind::Depression).map(|x| x.height.abs()).sum::<f64>();
            let slope: f64 = defects
                .iter()
                .filter(|x| x.kind != DefectKind::Leak)
                .map(|x| x.height.abs() / x.size * (-0.5f64).exp())
                .sum();
            let lipschitz = 1.0 + slope * (s.radius / inner.max(1e-3 * s.radius)).max(1.0);
            let min_step = defects.iter().map(|x| x.size).fold(f64::INFINITY, f64::min) / 64.0;
            let mut a = t_in;
            let mut fa = f(a);
            if fa <= 0.0 {
                return None;
            }
            let mut bracket = None;
            while a < t_out {
                let b = (a + (fa / lipschitz).max(min_step)).min(t_out);
                let fb = f(b);
                if fb <= 0.0 {
                    bracket = Some((a, b));
                    break;
                }
                a = b;
                fa = fb;
            }
            // Illinois false position on the sign-change bracket.
            let (mut lo, mut hi) = bracket?;
            let (mut flo, mut fhi) = (fa, f(hi));
            let (mut wlo, mut whi) = (flo, fhi);
            let mut side = 0i8;
            for _ in 0..200 {
                let mut m = hi - whi * (hi - lo) / (whi - wlo);
                if !(m > lo && m < hi) {
                    m = 0.5 * (lo + hi);
                    if m <= lo || m >= hi {
                        break;
                    }
                }
                let fm = f(m);
                if fm == 0.0 {
                    lo = m;
                    flo = 0.0;
                    break;
                }
                if fm > 0.0 {
                    lo = m;
                    flo = fm;
                    wlo = fm;
                    if side == 1 {
                        whi *= 0.5;
                    }
                    side = 1;
                } else {
                    hi = m;
                    fhi = fm;
                    whi = fm;
                    if side == -1 {
                        wlo *= 0.5;
                    }
                    side = -1;
                }
                if flo.abs().min(fhi.abs()) < 1e-17 || hi - lo <= 4.0 * f64::EPSILON * hi.abs() {
                    break;
                }
            }
            if flo.abs() < fhi.abs() {
                lo
            } else {
                hi
            }
        };
        let p = o + d * t_hit;
        if p.y.abs() > 0.5 * s.length || self.in_leak(seg, p.y, p.z.atan2(p.x)) {
            return None;
        }
        Some(t_hit)
    }

    /// First surface hit along `origin + t·dir`, `t > 0`. `dir` must be unit.
    pub fn raycast(&self, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        let mut best: Option<(f64, SurfaceLabel)> = None;
        let mut consider = |t: f64, label: SurfaceLabel| {
            if t > 1e-12 && best.map_or(true, |(bt, _)| t < bt) {
                best = Some((t, label));
            }
        };
        for i in 0..self.spec.segments.len() {
            if let Some(t) = self.raycast_pipe(i, origin, dir) {
                consider(t, SurfaceLabel::Pipeline(i));
            }
        }
        if let Some(h) = self.spec.terrain_height {
            if dir.z.abs() > 1e-15 {
                consider((h - origin.z) / dir.z, SurfaceLabel::Terrain);
            }
        }
        for (i, r) in self.rocks.iter().enumerate() {
            let oc = origin - r.center;
            let b = oc.dot(dir);
            let disc = b * b - (oc.dot(&oc) - r.radius * r.radius);
            if disc >= 0.0 {
                consider(-b - disc.sqrt(), SurfaceLabel::Clutter(i));
            }
        }
        best.map(|(t, label)| Hit { t, point: origin + dir * t, label })
    }
}

/// Parameter interval where the ray is inside the infinite cylinder
/// `x² + z² = r²` of the local frame.
fn cylinder_interval(o: &Vec3, d: &Vec3, r: f64) -> Option<(f64, f64)> {
    let a = d.x * d.x + d.z * d.z;
    if a < 1e-18 {
        return None;
    }
    let b = o.x * d.x + o.z * d.z;
    let c = o.x * o.x + o.z * o.z - r * r;
    let disc = b * b - a * c;
    if disc <= 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // Stable roots.
    let q = -(b + b.signum() * sq);
    let (t1, t2) = if q.abs() > 0.0 { (q / a, c / q) } else { (-sq / a, sq / a) };
    let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
    if hi <= 0.0 {
        None
    } else {
        Some((lo, hi))
    }
}

// ---------------------------------------------------------------------------
// Camera rig and stripe projection

/// Camera, line laser and servo geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub intrinsics: Intrinsics,
    pub distortion: DistortionCoeffs,
    pub width: u32,
    pub height: u32,
    /// Light plane at servo angle 0, camera frame.
    pub plane: LightPlane,
    /// Servo axis, camera frame; passes through the laser origin.
    pub axis: RotationAxis,
    pub fan_half_angle: f64,
    pub fan_samples: usize,
    /// Camera → vehicle body.
    pub camera_to_body: RigidTransform,
}

impl Rig {
    /// Reference camera with a laser 0.1 m to the side along camera `−x`,
    /// tilted so the plane crosses the optical axis at 0.35 m, rotating about
    /// camera `y`.
    pub fn reference() -> Self {
        let (baseline, depth) = (0.1, 0.35);
        let origin = Vec3::new(-baseline, 0.0, 0.0);
        let normal = Vec3::new(depth, 0.0, -baseline).normalize();
        let plane = LightPlane::from_normal_point(&normal, &origin, Frame::Camera).expect("finite plane");
        Self {
            intrinsics: fixtures::intrinsics(),
            distortion: fixtures::distortion(),
            width: fixtures::IMAGE_WIDTH,
            height: fixtures::IMAGE_HEIGHT,
            plane,
            axis: RotationAxis { direction: Vec3::y(), point: origin, fallback: false },
            fan_half_angle: 40f64.to_radians(),
            fan_samples: 801,
            camera_to_body: RigidTransform::identity(),
        }
    }

    pub fn plane_at(&self, theta: f64) -> Result<LightPlane> {
        rotate_plane(&self.plane, &self.axis, theta)
    }

    /// What a calibration would report: the zero-angle plane and the axis
    /// recovered from it and a second plane at `theta`.
    pub fn calibrated_axis(&self, theta: f64) -> Result<RotationAxis> {
        axis_from_planes(&self.plane, &self.plane_at(theta)?)
    }

    fn in_image(&self, p: &Vec2) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.width as f64 && p.y < self.height as f64
    }
}

/// Per-frame metadata copied into the emitted [`StripeFrame`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMeta {
    pub id: usize,
    pub t: f64,
    pub theta_r: f64,
    pub mode: DisplacementMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StripeProjection {
    pub frame: StripeFrame,
    /// World-frame truth point of each stripe pixel.
    pub truth: Vec<Vec3>,
    pub labels: Vec<SurfaceLabel>,
}

/// Traces the laser fan of `plane` into the scene and projects the lit points
/// that the camera sees. `camera_pose` maps camera to world.
pub fn project_stripe(
    scene: &Scene,
    camera_pose: &RigidTransform,
    plane: &LightPlane,
    rig: &Rig,
    meta: FrameMeta,
) -> Result<StripeProjection> {
    let n = plane.normal();
    // Laser origin: the axis point, dropped onto the plane.
    let origin = rig.axis.point - n * plane.signed_distance(&rig.axis.point);
    let forward = Vec3::z() - n * n.z;
    if forward.norm() < 1e-9 {
        return Err(invalid("light plane is parallel to the image plane"));
    }
    let d0 = forward.normalize();
    let u = n.cross(&d0);
    let o_w = camera_pose.transform_point(&origin);
    let cam_w = camera_pose.translation;
    let inv = camera_pose.inverse();
    let mut frame =
        StripeFrame { id: meta.id, t: meta.t, pixels: Vec::new(), theta_r: meta.theta_r, mode: meta.mode };
    let mut truth = Vec::new();
    let mut labels = Vec::new();
    let m = rig.fan_samples.max(2);
    for i in 0..m {
        let a = -rig.fan_half_angle + 2.0 * rig.fan_half_angle * i as f64 / (m - 1) as f64;
        let dir = camera_pose.transform_vector(&(d0 * a.cos() + u * a.sin()));
        let Some(hit) = scene.raycast(&o_w, &dir) else { continue };
        let to_hit = hit.point - cam_w;
        let range = to_hit.norm();
        match scene.raycast(&cam_w, &(to_hit / range)) {
            Some(h) if h.t < range - 1e-7 => continue,
            _ => {}
        }
        let pc = inv.transform_point(&hit.point);
        if pc.z <= 0.0 {
            continue;
        }
        let px = project_normalized(&Vec2::new(pc.x / pc.z, pc.y / pc.z), &rig.intrinsics, &rig.distortion);
        if !rig.in_image(&px) {
            continue;
        }
        frame.pixels.push(px);
        truth.push(hit.point);
        labels.push(hit.label);
    }
    Ok(StripeProjection { frame, truth, labels })
}

/// Adds seeded isotropic Gaussian noise to stripe pixels.
pub fn add_pixel_noise(frame: &mut StripeFrame, sigma: f64, seed: u64) {
    if sigma <= 0.0 {
        return;
    }
    let mut rng = rng_for(seed ^ (frame.id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), STREAM_PIXELS);
    for p in &mut frame.pixels {
        p.x += sigma * gauss(&mut rng);
        p.y += sigma * gauss(&mut rng);
    }
}

/// Grayscale albedo of each surface class.
const ALBEDO_PIPE: u8 = 200;
const ALBEDO_BED: u8 = 70;
const ALBEDO_BACKGROUND: u8 = 20;

/// Unit viewing ray of every pixel, camera frame; `None` where the
/// undistortion fails.
#[derive(Debug, Clone, PartialEq)]
pub struct RayTable {
    pub width: u32,
    pub height: u32,
    rays: Vec<Option<Vec3>>,
}

impl RayTable {
    pub fn new(rig: &Rig) -> Self {
        let mut rays = Vec::with_capacity(rig.width as usize * rig.height as usize);
        for v in 0..rig.height {
            for u in 0..rig.width {
                let n = rig.intrinsics.pixel_to_normalized(&Vec2::new(u as f64, v as f64));
                rays.push(
                    undistort_newton(&n, &rig.distortion, 50, 1e-12).map(|p| Vec3::new(p.x, p.y, 1.0).normalize()),
                );
            }
        }
        Self { width: rig.width, height: rig.height, rays }
    }

    pub fn ray(&self, u: u32, v: u32) -> Option<&Vec3> {
        self.rays[(v * self.width + u) as usize].as_ref()
    }
}

/// Flat-shaded label image: pipes bright, bed and rocks share one albedo.
pub fn render(scene: &Scene, camera_pose: &RigidTransform, rig: &Rig) -> Result<GrayImage> {
    Ok(render_with(scene, camera_pose, &RayTable::new(rig)))
}

/// [`render`] with precomputed pixel rays.
pub fn render_with(scene: &Scene, camera_pose: &RigidTransform, rays: &RayTable) -> GrayImage {
    let o = camera_pose.translation;
    GrayImage::from_fn(rays.width, rays.height, |u, v| {
        let value = match rays.ray(u, v) {
            Some(r) => match scene.raycast(&o, &camera_pose.transform_vector(r)).map(|h| h.label) {
                Some(SurfaceLabel::Pipeline(_)) => ALBEDO_PIPE,
                Some(_) => ALBEDO_BED,
                None => ALBEDO_BACKGROUND,
            },
            None => ALBEDO_BACKGROUND,
        };
        Luma([value])
    })
}

/// Image of the two silhouette generators of a bare segment, sampled every
/// `step` meters along the axis. Camera pose maps camera to world.
pub fn silhouette_curves(
    segment: &PipeSegment,
    camera_pose: &RigidTransform,
    rig: &Rig,
    step: f64,
) -> Option<[Vec<Vec2>; 2]> {
    let axis = segment.axis_direction();
    let a = segment.center();
    let c = camera_pose.translation;
    let w = (c - a) - axis * (c - a).dot(&axis);
    let dist = w.norm();
    if dist <= segment.radius {
        return None;
    }
    let w_hat = w / dist;
    let v_hat = axis.cross(&w_hat);
    let cos_a = segment.radius / dist;
    let sin_a = (1.0 - cos_a * cos_a).sqrt();
    let inv = camera_pose.inverse();
    let n = (segment.length / step).ceil() as usize;
    let curve = |sign: f64| {
        let base = a + segment.radius * (w_hat * cos_a + v_hat * (sign * sin_a));
        (0..=n)
            .filter_map(|i| {
                let s = -0.5 * segment.length + segment.length * i as f64 / n as f64;
                let pc = inv.transform_point(&(base + axis * s));
                (pc.z > 0.0).then(|| {
                    project_normalized(&Vec2::new(pc.x / pc.z, pc.y / pc.z), &rig.intrinsics, &rig.distortion)
                })
            })
            .filter(|p| rig.in_image(p))
            .collect::<Vec<_>>()
    };
    Some([curve(1.0), curve(-1.0)])
}

// ---------------------------------------------------------------------------
// Calibration target

/// Two target lines on a planar board, with the `Y` of `A, B, C, D` on each.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetLayout {
    pub edges: [EdgeLine; 2],
    pub ys: [[f64; 4]; 2],
}

impl Default for TargetLayout {
    fn default() -> Self {
        Self {
            edges: [EdgeLine { x0: -0.05, slope: 0.15 }, EdgeLine { x0: 0.06, slope: -0.1 }],
            ys: [[-0.07, -0.03, 0.012, 0.06], [-0.06, -0.015, 0.025, 0.07]],
        }
    }
}

impl TargetLayout {
    /// Two vertical lines mirrored about the board center.
    pub fn symmetric() -> Self {
        Self {
            edges: [EdgeLine { x0: -0.05, slope: 0.0 }, EdgeLine { x0: 0.05, slope: 0.0 }],
            ys: [[-0.06, -0.02, 0.02, 0.06]; 2],
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = *self;
        for e in &mut out.edges {
            e.x0 *= s;
        }
        for line in &mut out.ys {
            for y in line {
                *y *= s;
            }
        }
        out
    }
}

/// Projects the target points into the camera. `pose` maps the target frame
/// (board in `Z = 0`) to the camera frame.
pub fn synthetic_target(
    pose: &RigidTransform,
    layout: &TargetLayout,
    intrinsics: &Intrinsics,
    distortion: Option<DistortionCoeffs>,
    pixel_sigma: f64,
    seed: u64,
) -> Result<TargetObservation> {
    let mut rng = rng_for(seed, STREAM_PIXELS);
    let dist = distortion.unwrap_or_default();
    let mut lines = Vec::with_capacity(2);
    for (edge, ys) in layout.edges.iter().zip(&layout.ys) {
        let mut pixels = [Vec2::zeros(); 4];
        for (px, &y) in pixels.iter_mut().zip(ys) {
            let pc = pose.transform_point(&Vec3::new(edge.x_at(y), y, 0.0));
            if pc.z <= 0.0 {
                return Err(Error::BehindCamera(pc.z));
            }
            *px = project_normalized(&Vec2::new(pc.x / pc.z, pc.y / pc.z), intrinsics, &dist);
            if pixel_sigma > 0.0 {
                px.x += pixel_sigma * gauss(&mut rng);
                px.y += pixel_sigma * gauss(&mut rng);
            }
        }
        lines.push(TargetLine { pixels, y_a: ys[0], y_b: ys[1], y_d: ys[3], edge: *edge });
    }
    Ok(TargetObservation {
        lines: [lines[0], lines[1]],
        intrinsics: *intrinsics,
        distortion,
    })
}

// ---------------------------------------------------------------------------
// Hand-eye motion pairs

/// Random rigid motion: rotation of 0.3–1.5 rad about a random axis and a
/// translation within ±0.5 m per axis.
pub fn random_motion(rng: &mut impl Rng) -> RigidTransform {
    let axis = loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() > 0.1 {
            break v.normalize();
        }
    };
    let angle = rng.random_range(0.3..1.5);
    let t = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
    RigidTransform::new(exp_so3(&(axis * angle)), t)
}

/// `n` camera motions and the DVL motions they imply through `x`, the DVL
/// side optionally perturbed on the right by a Gaussian twist with
/// `(σ_translation m, σ_rotation rad)` per axis.
pub fn synthetic_pose_pairs(x: &RigidTransform, n: usize, seed: u64, noise: Option<(f64, f64)>) -> Vec<PosePair> {
    let mut rng = rng_for(seed, STREAM_PAIRS);
    (0..n)
        .map(|_| {
            let tc = random_motion(&mut rng);
            let mut td = predict_dvl_motion(x, &tc);
            if let Some((st, sr)) = noise {
                let rho = Vec3::new(gauss(&mut rng), gauss(&mut rng), gauss(&mut rng)) * st;
                let phi = Vec3::new(gauss(&mut rng), gauss(&mut rng), gauss(&mut rng)) * sr;
                td = td * exp_se3(&Twist::new(rho, phi));
            }
            PosePair::with_default_covariance(tc, td)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Trajectories and inertial/acoustic traces

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanMode {
    Translation,
    Rotation,
    TranslationRotation,
}

impl std::str::FromStr for ScanMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translation" => Ok(ScanMode::Translation),
            "rotation" => Ok(ScanMode::Rotation),
            "translation-rotation" => Ok(ScanMode::TranslationRotation),
            other => Err(invalid(format!("unknown scan mode '{other}' (translation|rotation|translation-rotation)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpeedProfile {
    Uniform(f64),
    /// Random walk of knot speeds every `knot_interval` seconds, clamped to
    /// `[min, max]`, blended with a smoothstep between knots.
    Variable { mean: f64, min: f64, max: f64, step_sigma: f64, knot_interval: f64 },
}

impl SpeedProfile {
    /// Variable profile around the nominal 3 mm/s scan speed.
    pub fn variable_default() -> Self {
        SpeedProfile::Variable {
            mean: fixtures::SCAN_SPEED,
            min: 1e-3,
            max: 6e-3,
            step_sigma: 1.5e-3,
            knot_interval: 2.0,
        }
    }
}

/// Triangular servo sweep starting at `min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoSweep {
    pub min: f64,
    pub max: f64,
    /// rad/s.
    pub rate: f64,
}

impl ServoSweep {
    pub fn angle(&self, t: f64) -> f64 {
        let span = self.max - self.min;
        if span <= 0.0 || self.rate <= 0.0 {
            return self.min;
        }
        let half = span / self.rate;
        let tau = t.rem_euclid(2.0 * half);
        if tau <= half {
            self.min + self.rate * tau
        } else {
            self.max - self.rate * (tau - half)
        }
    }

    /// Duration of one monotone half sweep.
    pub fn half_period(&self) -> f64 {
        (self.max - self.min) / self.rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseSpec {
    /// m/s² per sample.
    pub accel: f64,
    /// rad/s per sample.
    pub gyro: f64,
    /// m/s per sample and axis.
    pub dvl: f64,
    /// Constant body-frame accelerometer bias, m/s².
    pub accel_bias: Vec3,
}

/// Sinusoidal perturbation per world axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wobble {
    pub amplitude: Vec3,
    /// Hz.
    pub frequency: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub mode: ScanMode,
    pub speed: SpeedProfile,
    /// World direction of travel, unit.
    pub direction: Vec3,
    /// Body position at `t = 0`.
    pub start: Vec3,
    /// Body → world at `t = 0`.
    pub attitude: RotationMatrix,
    pub wobble: Option<Wobble>,
    /// Body yaw oscillation `(amplitude rad, frequency Hz)`.
    pub yaw: Option<(f64, f64)>,
    pub servo: ServoSweep,
    pub duration: f64,
    pub imu_rate: f64,
    pub dvl_rate: f64,
    pub frame_rate: f64,
    pub noise: NoiseSpec,
    pub outages: Vec<(f64, f64)>,
    /// DVL → IMU (body).
    pub t_i_d: RigidTransform,
}

/// Body attitude of a camera looking straight down with image `x` along
/// world `x`.
pub fn downward_attitude() -> RotationMatrix {
    RotationMatrix::from_matrix_unchecked(Mat3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0))
}

impl TrajectorySpec {
    /// Straight scan along world `x`, looking down from height `height`.
    pub fn scan(mode: ScanMode, speed: SpeedProfile, start_x: f64, height: f64, duration: f64) -> Self {
        Self {
            mode,
            speed,
            direction: Vec3::x(),
            start: Vec3::new(start_x, 0.0, height),
            attitude: downward_attitude(),
            wobble: None,
            yaw: None,
            servo: ServoSweep { min: -30f64.to_radians(), max: 30f64.to_radians(), rate: 10f64.to_radians() },
            duration,
            imu_rate: 200.0,
            dvl_rate: 10.0,
            frame_rate: 10.0,
            noise: NoiseSpec::default(),
            outages: Vec::new(),
            t_i_d: RigidTransform::identity(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.imu_rate > 0.0 && self.dvl_rate > 0.0 && self.frame_rate > 0.0 && self.duration > 0.0) {
            return Err(spec_error("rates and duration must be positive"));
        }
        if (self.direction.norm() - 1.0).abs() > 1e-9 {
            return Err(spec_error("travel direction must be a unit vector"));
        }
        for &(a, b) in &self.outages {
            if !(0.0 <= a && a < b && b <= self.duration) {
                return Err(spec_error(format!("outage [{a}, {b}] is not inside [0, {}]", self.duration)));
            }
        }
        if let SpeedProfile::Variable { min, max, knot_interval, .. } = self.speed {
            if !(0.0 <= min && min <= max && knot_interval > 0.0) {
                return Err(spec_error("variable speed bounds or knot interval invalid"));
            }
        }
        let n = [self.noise.accel, self.noise.gyro, self.noise.dvl];
        if n.iter().any(|s| !(*s >= 0.0)) {
            return Err(spec_error("noise levels must be non-negative"));
        }
        if !self.noise.accel_bias.iter().all(|b| b.is_finite()) {
            return Err(spec_error("accelerometer bias must be finite"));
        }
        Ok(())
    }

    pub fn in_outage(&self, t: f64) -> bool {
        self.outages.iter().any(|&(a, b)| a <= t && t <= b)
    }
}

/// Continuous-time truth motion of the vehicle body.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub spec: TrajectorySpec,
    /// Speeds at knots `k · knot_interval`; a single entry for uniform motion.
    knots: Vec<f64>,
    knot_interval: f64,
}

impl Trajectory {
    pub fn new(spec: &TrajectorySpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let (knots, knot_interval) = match spec.speed {
            _ if spec.mode == ScanMode::Rotation => (vec![0.0], f64::INFINITY),
            SpeedProfile::Uniform(v) => (vec![v], f64::INFINITY),
            SpeedProfile::Variable { mean, min, max, step_sigma, knot_interval } => {
                let mut rng = rng_for(seed, STREAM_SPEED);
                let n = (spec.duration / knot_interval).ceil() as usize + 2;
                let mut v = mean.clamp(min, max);
                let mut knots = vec![v];
                for _ in 1..n {
                    v = (v + step_sigma * gauss(&mut rng)).clamp(min, max);
                    knots.push(v);
                }
                (knots, knot_interval)
            }
        };
        Ok(Self { spec: spec.clone(), knots, knot_interval })
    }

    /// Distance travelled, speed and tangential acceleration at `t`.
    fn arc(&self, t: f64) -> (f64, f64, f64) {
        if self.knots.len() == 1 {
            return (self.knots[0] * t, self.knots[0], 0.0);
        }
        let h = self.knot_interval;
        let k = ((t / h).floor().max(0.0) as usize).min(self.knots.len() - 2);
        // Full intervals before k.
        let mut s = 0.0;
        for j in 0..k {
            s += 0.5 * h * (self.knots[j] + self.knots[j + 1]);
        }
        let (v0, v1) = (self.knots[k], self.knots[k + 1]);
        let u = (t - k as f64 * h) / h;
        let dv = v1 - v0;
        s += h * (v0 * u + dv * (u * u * u - 0.5 * u * u * u * u));
        let v = v0 + dv * (3.0 * u * u - 2.0 * u * u * u);
        let a = dv * (6.0 * u - 6.0 * u * u) / h;
        (s, v, a)
    }

    pub fn position(&self, t: f64) -> Vec3 {
        let (s, _, _) = self.arc(t);
        let mut p = self.spec.start + self.spec.direction * s;
        if let Some(w) = &self.spec.wobble {
            for i in 0..3 {
                p[i] += w.amplitude[i] * (std::f64::consts::TAU * w.frequency[i] * t).sin();
            }
        }
        p
    }

    pub fn velocity(&self, t: f64) -> Vec3 {
        let (_, v, _) = self.arc(t);
        let mut out = self.spec.direction * v;
        if let Some(w) = &self.spec.wobble {
            for i in 0..3 {
                let om = std::f64::consts::TAU * w.frequency[i];
                out[i] += w.amplitude[i] * om * (om * t).cos();
            }
        }
        out
    }

    pub fn acceleration(&self, t: f64) -> Vec3 {
        let (_, _, a) = self.arc(t);
        let mut out = self.spec.direction * a;
        if let Some(w) = &self.spec.wobble {
            for i in 0..3 {
                let om = std::f64::consts::TAU * w.frequency[i];
                out[i] -= w.amplitude[i] * om * om * (om * t).sin();
            }
        }
        out
    }

    fn yaw(&self, t: f64) -> (f64, f64) {
        match self.spec.yaw {
            Some((amp, f)) => {
                let om = std::f64::consts::TAU * f;
                (amp * (om * t).sin(), amp * om * (om * t).cos())
            }
            None => (0.0, 0.0),
        }
    }

    /// Body → world.
    pub fn attitude(&self, t: f64) -> RotationMatrix {
        let (psi, _) = self.yaw(t);
        self.spec.attitude * exp_so3(&(Vec3::z() * psi))
    }

    /// Body-frame angular rate.
    pub fn body_rate(&self, t: f64) -> Vec3 {
        Vec3::z() * self.yaw(t).1
    }

    /// Body → world.
    pub fn pose(&self, t: f64) -> RigidTransform {
        RigidTransform::new(self.attitude(t), self.position(t))
    }

    /// Camera → world.
    pub fn camera_pose(&self, t: f64, rig: &Rig) -> RigidTransform {
        self.pose(t) * rig.camera_to_body
    }

    pub fn servo_angle(&self, t: f64) -> f64 {
        match self.spec.mode {
            ScanMode::Translation => 0.0,
            _ => self.spec.servo.angle(t),
        }
    }

    pub fn frame_times(&self) -> Vec<f64> {
        sample_times(self.spec.duration, self.spec.frame_rate)
    }
}

fn sample_times(duration: f64, rate: f64) -> Vec<f64> {
    let n = (duration * rate + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 / rate).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub trajectory: Trajectory,
    /// Body poses at the IMU timestamps.
    pub imu_poses: Vec<RigidTransform>,
    /// World-frame body velocity at the IMU timestamps.
    pub imu_velocities: Vec<Vec3>,
}

/// IMU and DVL traces of a trajectory. IMU samples carry the exact body-frame
/// acceleration (plus the configured bias) and rate; DVL samples the body
/// velocity in the DVL frame, flagged unhealthy inside outage windows.
pub fn synth_inertial_acoustic(
    spec: &TrajectorySpec,
    seed: u64,
) -> Result<(Vec<ImuSample>, Vec<DvlSample>, GroundTruth)> {
    let traj = Trajectory::new(spec, seed)?;
    let mut imu_rng = rng_for(seed, STREAM_IMU);
    let mut dvl_rng = rng_for(seed, STREAM_DVL);
    let noise3 = |rng: &mut ChaCha8Rng, s: f64| {
        if s > 0.0 {
            Vec3::new(gauss(rng), gauss(rng), gauss(rng)) * s
        } else {
            Vec3::zeros()
        }
    };
    let mut imu = Vec::new();
    let mut imu_poses = Vec::new();
    let mut imu_velocities = Vec::new();
    for t in sample_times(spec.duration, spec.imu_rate) {
        let r = traj.attitude(t);
        let accel = r.transpose().apply(&traj.acceleration(t)) + spec.noise.accel_bias + noise3(&mut imu_rng, spec.noise.accel);
        let gyro = traj.body_rate(t) + noise3(&mut imu_rng, spec.noise.gyro);
        imu.push(ImuSample { t, accel, gyro });
        imu_poses.push(traj.pose(t));
        imu_velocities.push(traj.velocity(t));
    }
    let r_i_d = spec.t_i_d.rotation;
    let mut dvl = Vec::new();
    for t in sample_times(spec.duration, spec.dvl_rate) {
        let body = traj.attitude(t).transpose().apply(&traj.velocity(t));
        let velocity = r_i_d.transpose().apply(&body) + noise3(&mut dvl_rng, spec.noise.dvl);
        dvl.push(DvlSample { t, velocity, healthy: !spec.in_outage(t) });
    }
    Ok((imu, dvl, GroundTruth { trajectory: traj, imu_poses, imu_velocities }))
}

// ---------------------------------------------------------------------------
// Full scans

#[derive(Debug, Clone, PartialEq)]
pub struct ScanData {
    pub frames: Vec<StripeFrame>,
    /// Per frame, the world truth point of each pixel.
    pub truth: Vec<Vec<Vec3>>,
    pub labels: Vec<Vec<SurfaceLabel>>,
    /// Camera → world at each frame.
    pub camera_poses: Vec<RigidTransform>,
    /// Light plane of each frame, camera frame.
    pub planes: Vec<LightPlane>,
}

/// Stripe frames of a whole scan at the trajectory frame rate.
pub fn simulate_scan(
    scene: &Scene,
    traj: &Trajectory,
    rig: &Rig,
    mode: DisplacementMode,
    pixel_sigma: f64,
    seed: u64,
) -> Result<ScanData> {
    let mut out = ScanData {
        frames: Vec::new(),
        truth: Vec::new(),
        labels: Vec::new(),
        camera_poses: Vec::new(),
        planes: Vec::new(),
    };
    for (id, t) in traj.frame_times().into_iter().enumerate() {
        let theta_r = traj.servo_angle(t);
        let plane = rig.plane_at(theta_r)?;
        let pose = traj.camera_pose(t, rig);
        let meta = FrameMeta { id, t, theta_r, mode };
        let mut proj = project_stripe(scene, &pose, &plane, rig, meta)?;
        add_pixel_noise(&mut proj.frame, pixel_sigma, seed);
        out.frames.push(proj.frame);
        out.truth.push(proj.truth);
        out.labels.push(proj.labels);
        out.camera_poses.push(pose);
        out.planes.push(plane);
    }
    Ok(out)
}

/// Pointwise distortion displacement, for cross-checks against the camera
/// model.
pub fn distortion_shift(n: &Vec2, c: &DistortionCoeffs, k: &Intrinsics) -> Vec2 {
    k.normalized_to_pixel(&distort(n, c)) - k.normalized_to_pixel(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recon::triangulate;

    fn bare_pipe_scene() -> SceneSpec {
        SceneSpec {
            segments: vec![PipeSegment::on_bed(0.08, 0.3, 0.0, 0.0)],
            defects: vec![],
            terrain_height: Some(0.0),
            clutter: None,
        }
    }

    #[test]
    fn cylinder_signed_distance() {
        let spec = SceneSpec {
            segments: vec![PipeSegment { radius: 0.05, length: 1.0, pose: RigidTransform::identity() }],
            ..Default::default()
        };
        let scene = generate_scene(&spec, 0).unwrap();
        assert_eq!(scene.pipe_signed_distance(0, &Vec3::new(0.05, 0.0, 0.0)), 0.0);
        assert!((scene.signed_distance(&Vec3::new(0.0, 0.3, 0.2)) - 0.15).abs() < 1e-15);
        assert!((scene.signed_distance(&Vec3::zeros()) + 0.05).abs() < 1e-15);
    }

    #[test]
    fn bump_height_is_exact_at_center() {
        let mut spec = bare_pipe_scene();
        let top = std::f64::consts::FRAC_PI_2;
        spec.defects.push(DefectSpec {
            kind: DefectKind::Attachment,
            segment: 0,
            axial: 0.02,
            azimuth: top,
            size: 0.01,
            height: 0.012,
        });
        spec.defects.push(DefectSpec {
            kind: DefectKind::Depression,
            segment: 0,
            axial: -0.08,
            azimuth: top,
            size: 0.01,
            height: 0.005,
        });
        let scene = generate_scene(&spec, 0).unwrap();
        let mut max_dev: f64 = 0.0;
        for i in -200..=200 {
            let y = 0.02 + i as f64 * 1e-4;
            max_dev = max_dev.max(scene.surface_offset(0, y, top));
        }
        assert!((max_dev - 0.012).abs() < 1e-9);
        assert!((scene.surface_offset(0, -0.08, top) + 0.005).abs() < 1e-9);
        // A vertical ray onto the bump center hits the bump apex.
        let top_world = spec.segments[0].pose.transform_point(&Vec3::new(0.0, 0.02, 0.08 + 0.012));
        let hit = scene.raycast(&(top_world + Vec3::z() * 0.3), &-Vec3::z()).unwrap();
        assert!((hit.point - top_world).norm() < 1e-9);
        assert!(scene.pipe_signed_distance(0, &hit.point).abs() < 1e-12);
    }

    #[test]
    fn leak_is_a_hole() {
        let mut spec = bare_pipe_scene();
        let top = std::f64::consts::FRAC_PI_2;
        spec.defects.push(DefectSpec { kind: DefectKind::Leak, segment: 0, axial: 0.0, azimuth: top, size: 0.01, height: 0.0 });
        let scene = generate_scene(&spec, 0).unwrap();
        let hit = scene.raycast(&Vec3::new(0.0, 0.0, 0.5), &-Vec3::z()).unwrap();
        assert_ne!(hit.label, SurfaceLabel::Pipeline(0));
        let hit = scene.raycast(&Vec3::new(0.05, 0.0, 0.5), &-Vec3::z()).unwrap();
        assert_eq!(hit.label, SurfaceLabel::Pipeline(0));
    }

    #[test]
    fn scene_validation() {
        let mut spec = bare_pipe_scene();
        spec.segments.push(PipeSegment::on_bed(0.08, 0.3, 0.1, 0.0));
        assert!(matches!(generate_scene(&spec, 0), Err(Error::InvalidSpec(_))));
        let mut spec = bare_pipe_scene();
        spec.defects.push(DefectSpec {
            kind: DefectKind::Attachment,
            segment: 0,
            axial: 0.0,
            azimuth: 0.0,
            size: 0.09,
            height: 0.01,
        });
        assert!(generate_scene(&spec, 0).is_err());
    }

    #[test]
    fn clutter_is_deterministic_and_clear_of_pipe() {
        let mut spec = bare_pipe_scene();
        spec.clutter =
            Some(ClutterSpec { count: 20, radius_range: (0.01, 0.03), region: [-0.3, 0.3, -0.3, 0.3], clearance: 0.02 });
        let a = generate_scene(&spec, 11).unwrap();
        let b = generate_scene(&spec, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rocks.len(), 20);
        assert_ne!(a, generate_scene(&spec, 12).unwrap());
        for r in a.rocks.iter().filter(|r| r.center.x.abs() <= 0.15) {
            assert!(r.center.y.abs() > 0.08 + r.radius + 0.02 - 1e-12);
        }
    }

    fn down_pose(x: f64, z: f64) -> RigidTransform {
        RigidTransform::new(downward_attitude(), Vec3::new(x, 0.0, z))
    }

    #[test]
    fn frontal_wall_gives_straight_stripe() {
        let spec = SceneSpec { terrain_height: Some(0.0), ..Default::default() };
        let scene = generate_scene(&spec, 0).unwrap();
        let mut rig = Rig::reference();
        rig.distortion = DistortionCoeffs::default();
        let meta = FrameMeta { id: 0, t: 0.0, theta_r: 0.0, mode: DisplacementMode::Uniform };
        let proj = project_stripe(&scene, &down_pose(0.0, 0.4), &rig.plane, &rig, meta).unwrap();
        assert!(proj.frame.pixels.len() > 100);
        // The plane contains camera y, so the stripe is a constant-u line.
        let k = &rig.intrinsics;
        let x0 = k.pixel_to_normalized(&proj.frame.pixels[0]).x;
        for p in &proj.frame.pixels {
            assert!((k.pixel_to_normalized(p).x - x0).abs() < 1e-12);
        }
    }

    #[test]
    fn stripe_round_trip_on_cylinder() {
        let scene = generate_scene(&bare_pipe_scene(), 0).unwrap();
        let rig = Rig::reference();
        let pose = down_pose(0.0, 0.51);
        let meta = FrameMeta { id: 0, t: 0.0, theta_r: 0.0, mode: DisplacementMode::Uniform };
        let proj = project_stripe(&scene, &pose, &rig.plane, &rig, meta).unwrap();
        let pipe_px = proj.labels.iter().filter(|l| l.is_pipeline()).count();
        assert!(pipe_px > 100, "{pipe_px}");
        let cfg = crate::camera::UndistortConfig { tol: 1e-13, max_iter: 1000 };
        for ((px, truth), label) in proj.frame.pixels.iter().zip(&proj.truth).zip(&proj.labels) {
            let pc = triangulate(px, &rig.intrinsics, &rig.distortion, &rig.plane, &cfg).unwrap();
            let pw = pose.transform_point(&pc);
            assert!((pw - truth).norm() < 1e-9, "{}", (pw - truth).norm());
            if label.is_pipeline() {
                assert!(scene.pipe_signed_distance(0, &pw).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn distortion_cross_check() {
        let scene = generate_scene(&bare_pipe_scene(), 0).unwrap();
        let mut rig = Rig::reference();
        let pose = down_pose(0.0, 0.51);
        let meta = FrameMeta { id: 0, t: 0.0, theta_r: 0.1, mode: DisplacementMode::Uniform };
        let plane = rig.plane_at(0.1).unwrap();
        let with = project_stripe(&scene, &pose, &plane, &rig, meta).unwrap();
        let c = rig.distortion;
        rig.distortion = DistortionCoeffs::default();
        let without = project_stripe(&scene, &pose, &plane, &rig, meta).unwrap();
        // Distortion changes which samples land inside the image, so pair
        // samples by their surface point.
        let mut matched = 0;
        for (a, t) in with.frame.pixels.iter().zip(&with.truth) {
            let Some(j) = without.truth.iter().position(|u| u == t) else { continue };
            let b = &without.frame.pixels[j];
            matched += 1;
            let pc = pose.inverse().transform_point(t);
            let n = Vec2::new(pc.x / pc.z, pc.y / pc.z);
            let shift = distortion_shift(&n, &c, &rig.intrinsics);
            assert!((a - b - shift).norm() < 1e-9);
        }
        assert!(matched > 300, "{matched}");
    }

    fn imu_spec(speed: SpeedProfile) -> TrajectorySpec {
        let mut s = TrajectorySpec::scan(ScanMode::Translation, speed, 0.0, 0.5, 10.0);
        s.outages = vec![(4.0, 6.0)];
        s
    }

    #[test]
    fn constant_velocity_traces() {
        let (imu, dvl, truth) = synth_inertial_acoustic(&imu_spec(SpeedProfile::Uniform(3e-3)), 1).unwrap();
        assert_eq!(imu.len(), 2001);
        assert!(imu.iter().all(|s| s.accel == Vec3::zeros() && s.gyro == Vec3::zeros()));
        let body_v = downward_attitude().transpose().apply(&Vec3::new(3e-3, 0.0, 0.0));
        assert!(dvl.iter().all(|d| (d.velocity - body_v).norm() < 1e-18));
        for d in &dvl {
            assert_eq!(d.healthy, !(4.0..=6.0).contains(&d.t));
        }
        assert_eq!(truth.imu_poses.len(), imu.len());
    }

    #[test]
    fn variable_speed_stays_in_bounds() {
        let spec = imu_spec(SpeedProfile::variable_default());
        let traj = Trajectory::new(&spec, 5).unwrap();
        // Sample off the knots, where the speed's second derivative jumps.
        for i in 0..1000 {
            let t = i as f64 * 0.01 + 0.005;
            let v = traj.velocity(t).x;
            assert!((1e-3 - 1e-15..=6e-3 + 1e-15).contains(&v));
            // Acceleration and velocity are derivatives of the position.
            let h = 1e-4;
            let fd_v = (traj.position(t + h) - traj.position(t - h)) / (2.0 * h);
            assert!((fd_v - traj.velocity(t)).norm() < 1e-9);
            let fd_a = (traj.velocity(t + h) - traj.velocity(t - h)) / (2.0 * h);
            assert!((fd_a - traj.acceleration(t)).norm() < 1e-8);
        }
    }

    #[test]
    fn noiseless_imu_integrates_to_truth() {
        use crate::fusion::{propagate_dr, Mat9, NavState};
        let mut spec = imu_spec(SpeedProfile::variable_default());
        spec.wobble = Some(Wobble { amplitude: Vec3::new(0.01, 0.02, 0.005), frequency: Vec3::new(0.1, 0.05, 0.2) });
        spec.yaw = Some((0.2, 0.05));
        let (imu, _, truth) = synth_inertial_acoustic(&spec, 9).unwrap();
        let traj = &truth.trajectory;
        let mut s = NavState::new(
            0.0,
            traj.position(0.0),
            traj.velocity(0.0),
            traj.attitude(0.0).to_quaternion(),
            Mat9::zeros(),
        );
        for k in 1..imu.len() {
            s = propagate_dr(&s, &imu[k], &imu[k - 1], imu[k].t - imu[k - 1].t).unwrap();
        }
        // The velocity update has no jerk term, which leaves a first-order
        // drift of about dt/2 * (v(T) - v(0) - a(0) T).
        let dt = imu[1].t - imu[0].t;
        let drift = 0.5 * dt * (traj.velocity(10.0) - traj.velocity(0.0) - traj.acceleration(0.0) * 10.0).norm();
        let err = (s.p - traj.position(10.0)).norm();
        assert!(err < 1.25 * drift + 1e-6, "{err} vs {drift}");
    }

    #[test]
    fn dvl_noise_scales() {
        let mut spec = TrajectorySpec::scan(ScanMode::Translation, SpeedProfile::Uniform(3e-3), 0.0, 0.5, 1000.0);
        spec.dvl_rate = 20.0;
        let sd = |sigma: f64| {
            let mut s = spec.clone();
            s.noise.dvl = sigma;
            let (_, dvl, truth) = synth_inertial_acoustic(&s, 3).unwrap();
            let r = truth.trajectory.attitude(0.0).transpose();
            let v = r.apply(&Vec3::new(3e-3, 0.0, 0.0));
            let e: Vec<f64> = dvl.iter().map(|d| d.velocity.x - v.x).collect();
            let m = e.iter().sum::<f64>() / e.len() as f64;
            (e.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / e.len() as f64).sqrt()
        };
        let (a, b) = (sd(1e-3), sd(2e-3));
        assert!((b / a - 2.0).abs() < 0.1);
        assert!((a / 1e-3 - 1.0).abs() < 0.05);
    }

    #[test]
    fn generators_are_reproducible() {
        let spec = imu_spec(SpeedProfile::variable_default());
        let mut noisy = spec.clone();
        noisy.noise = NoiseSpec { accel: 1e-3, gyro: 1e-4, dvl: 1e-3, ..Default::default() };
        let a = synth_inertial_acoustic(&noisy, 21).unwrap();
        let b = synth_inertial_acoustic(&noisy, 21).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_ne!(a.0, synth_inertial_acoustic(&noisy, 22).unwrap().0);
    }

    #[test]
    fn servo_sweep_is_triangular() {
        let s = ServoSweep { min: -0.5, max: 0.5, rate: 0.25 };
        assert_eq!(s.angle(0.0), -0.5);
        assert!((s.angle(4.0) - 0.5).abs() < 1e-15);
        assert!((s.angle(6.0) - 0.0).abs() < 1e-15);
        assert!((s.angle(8.0) + 0.5).abs() < 1e-15);
        assert_eq!(s.half_period(), 4.0);
    }

    #[test]
    fn segment_distance_cases() {
        let d = segment_distance(&Vec3::zeros(), &Vec3::x(), &Vec3::new(0.5, 1.0, 0.0), &Vec3::new(0.5, 2.0, 0.0));
        assert!((d - 1.0).abs() < 1e-15);
        let d = segment_distance(&Vec3::zeros(), &Vec3::x(), &Vec3::new(2.0, 0.0, 0.0), &Vec3::new(3.0, 0.0, 0.0));
        assert!((d - 1.0).abs() < 1e-15);
    }
}
