//! Light-plane estimation from a single view of a two-line target, and
//! rotation of a calibrated plane about the projector axis.

use nalgebra::Matrix3xX;

use crate::camera::{undistort_pixel, DistortionCoeffs, Intrinsics, UndistortConfig, Vec2};
use crate::error::{degenerate, invalid, Error, Result};
use crate::geom::{rodrigues, Vec3};

/// Tie tolerance of the plane sign convention.
const SIGN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Camera,
    World,
}

/// Plane `a x + b y + c z + d = 0` with unit normal, oriented so that
/// `c ≥ 0`, then `a ≥ 0`, then `b ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LightPlane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub frame: Frame,
}

impl LightPlane {
    pub fn new(a: f64, b: f64, c: f64, d: f64, frame: Frame) -> Result<Self> {
        let n = Vec3::new(a, b, c);
        let len = n.norm();
        if !(len > 1e-15) || !len.is_finite() || !d.is_finite() {
            return Err(invalid("plane normal must be finite and nonzero"));
        }
        let (mut n, mut d) = (n / len, d / len);
        let flip = if n.z.abs() > SIGN_TOL {
            n.z < 0.0
        } else if n.x.abs() > SIGN_TOL {
            n.x < 0.0
        } else {
            n.y < 0.0
        };
        if flip {
            n = -n;
            d = -d;
        }
        Ok(Self { a: n.x, b: n.y, c: n.z, d, frame })
    }

    pub fn from_normal_point(normal: &Vec3, point: &Vec3, frame: Frame) -> Result<Self> {
        Self::new(normal.x, normal.y, normal.z, -normal.dot(point), frame)
    }

    pub fn normal(&self) -> Vec3 {
        Vec3::new(self.a, self.b, self.c)
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal().dot(p) + self.d
    }

    /// Angle between the two normals, ignoring orientation.
    pub fn normal_angle_to(&self, other: &Self) -> f64 {
        self.normal().dot(&other.normal()).abs().min(1.0).acos()
    }
}

/// Total-least-squares plane through `points`; returns the plane and the RMS
/// point-to-plane distance.
pub fn fit_plane(points: &[Vec3], frame: Frame) -> Result<(LightPlane, f64)> {
    if points.len() < 3 {
        return Err(degenerate("plane fit needs at least 3 points"));
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vec3>() / n;
    let m = Matrix3xX::from_columns(&points.iter().map(|p| p - centroid).collect::<Vec<_>>());
    let svd = (&m * m.transpose()).symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| svd.eigenvalues[i].total_cmp(&svd.eigenvalues[j]));
    let (l0, l1) = (svd.eigenvalues[order[0]], svd.eigenvalues[order[1]]);
    if l1 <= 1e-24 * (1.0 + svd.eigenvalues[order[2]]) {
        return Err(degenerate("plane fit points are collinear or coincident"));
    }
    let normal: Vec3 = svd.eigenvectors.column(order[0]).into_owned();
    let plane = LightPlane::from_normal_point(&normal, &centroid, frame)?;
    let rms = (l0.max(0.0) / n).sqrt();
    Ok((plane, rms))
}

/// `((C−A)(D−B)) / ((D−A)(C−B))` on signed line coordinates.
pub fn cross_ratio(a: f64, b: f64, c: f64, d: f64) -> f64 {
    ((c - a) * (d - b)) / ((d - a) * (c - b))
}

/// Inverts [`cross_ratio`] for the third point.
pub fn cross_ratio_locate(y_a: f64, y_b: f64, y_d: f64, r: f64) -> Result<f64> {
    let den = r * (y_d - y_a) - (y_d - y_b);
    if den.abs() < 1e-12 || !den.is_finite() {
        return Err(degenerate("cross-ratio inversion denominator vanishes"));
    }
    Ok((y_b - y_a) * (y_d - y_b) / den + y_b)
}

/// Target line `X = x0 + slope · Y` in the target plane `Z = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeLine {
    pub x0: f64,
    pub slope: f64,
}

impl EdgeLine {
    pub fn x_at(&self, y: f64) -> f64 {
        self.x0 + self.slope * y
    }

    /// World distance between the points of the line at `y1` and `y2`.
    pub fn span(&self, y1: f64, y2: f64) -> f64 {
        (y2 - y1).abs() * (1.0 + self.slope * self.slope).sqrt()
    }
}

/// One target line: pixels of `A, B, C, D` in that order along the line, with
/// `C` the laser crossing between `B` and `D`, and the known `Y` of `A, B, D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetLine {
    pub pixels: [Vec2; 4],
    pub y_a: f64,
    pub y_b: f64,
    pub y_d: f64,
    pub edge: EdgeLine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetObservation {
    pub lines: [TargetLine; 2],
    pub intrinsics: Intrinsics,
    pub distortion: Option<DistortionCoeffs>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneEstimate {
    pub camera: LightPlane,
    pub world: LightPlane,
    /// `A, B, C, D, A', B', C', D'` in the camera frame, meters.
    pub points_camera: [Vec3; 8],
    /// The same points in the target frame, meters.
    pub points_world: [Vec3; 8],
    pub rms_camera: f64,
    /// `| |C C'|_camera − |C C'|_world |`, meters.
    pub cc_residual: f64,
    /// Relative mismatch of `|BD| / |B'D'|` between the frames.
    pub bd_ratio_residual: f64,
}

/// Points farther than this fraction of the target extent from the fitted
/// plane make the observation inconsistent.
const COPLANARITY_TOL: f64 = 0.02;

fn rays(line: &TargetLine, obs: &TargetObservation) -> Result<[Vec3; 4]> {
    let dist = obs.distortion.unwrap_or_default();
    let cfg = UndistortConfig { tol: 1e-12, max_iter: 200 };
    let mut out = [Vec3::zeros(); 4];
    for (o, px) in out.iter_mut().zip(&line.pixels) {
        let n = undistort_pixel(px, &obs.intrinsics, &dist, &cfg)?.point;
        *o = Vec3::new(n.x, n.y, 1.0).normalize();
    }
    Ok(out)
}

/// Signed positions of four image points along their best-fit line.
fn line_coordinates(p: &[Vec2; 4]) -> Result<[f64; 4]> {
    let centroid = p.iter().sum::<Vec2>() / 4.0;
    let mut cov = nalgebra::Matrix2::<f64>::zeros();
    for q in p {
        let d = q - centroid;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let i = if eig.eigenvalues[0] > eig.eigenvalues[1] { 0 } else { 1 };
    let mut dir: Vec2 = eig.eigenvectors.column(i).into_owned();
    if (p[3] - p[0]).dot(&dir) < 0.0 {
        dir = -dir;
    }
    let mut out = [0.0; 4];
    for (o, q) in out.iter_mut().zip(p) {
        *o = (q - centroid).dot(&dir);
    }
    for w in out.windows(2) {
        if (w[1] - w[0]).abs() < 1e-12 {
            return Err(invalid("target line points coincide"));
        }
    }
    Ok(out)
}

fn angle(u: &Vec3, v: &Vec3) -> f64 {
    // atan2 keeps precision for nearly parallel rays.
    u.cross(v).norm().atan2(u.dot(v))
}

fn checked_sin(x: f64, name: &str) -> Result<f64> {
    let s = x.sin();
    if s.abs() < 1e-9 {
        return Err(Error::Degenerate(format!("sine-law denominator sin({name}) vanishes")));
    }
    Ok(s)
}

struct LineSolution {
    camera: [Vec3; 4],
    world: [Vec3; 4],
}

fn solve_line(line: &TargetLine, obs: &TargetObservation) -> Result<LineSolution> {
    let [oa, ob, oc, od] = rays(line, obs)?;
    // Cross-ratios are projective invariants of undistorted points.
    let und: [Vec2; 4] = [oa, ob, oc, od].map(|r| Vec2::new(r.x / r.z, r.y / r.z));
    let s = line_coordinates(&und)?;
    let r = cross_ratio(s[0], s[1], s[2], s[3]);
    let y_c = cross_ratio_locate(line.y_a, line.y_b, line.y_d, r)?;
    let ys = [line.y_a, line.y_b, y_c, line.y_d];
    let world = ys.map(|y| Vec3::new(line.edge.x_at(y), y, 0.0));

    let th1 = angle(&oa, &ob);
    let th2 = angle(&ob, &oc);
    let th3 = angle(&oc, &od);
    let bd = line.edge.span(line.y_b, line.y_d);
    let bc = line.edge.span(line.y_b, y_c);
    let ac = line.edge.span(line.y_a, y_c);
    if bc < 1e-12 || ac < 1e-12 {
        return Err(degenerate("laser crossing coincides with a target point"));
    }
    let k = bd / bc * th2.sin() / checked_sin(th2 + th3, "theta2 + theta3")?;
    let mut th4 = (-k * th3.sin()).atan2(1.0 - k * th3.cos());
    // The angle at C of triangle O-A-C lies in (0, π).
    if th4 < 0.0 {
        th4 += std::f64::consts::PI;
    }
    let s12 = checked_sin(th1 + th2, "theta1 + theta2")?;
    let gamma = (std::f64::consts::PI - th1 - th2 - th4).sin() / s12;
    let s_b = checked_sin(std::f64::consts::PI - th2 - th4, "pi - theta2 - theta4")?;
    let s_d = checked_sin(th4 - th3, "theta4 - theta3")?;
    let len_a = th4.sin() * ac / s12;
    let len_b = gamma * th4.sin() * ac / s_b;
    let len_c = gamma * ac;
    let len_d = gamma * (std::f64::consts::PI - th4).sin() / s_d * ac;
    for l in [len_a, len_b, len_c, len_d] {
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::InconsistentObservation(
                "sine-law reconstruction gives a non-positive depth".into(),
            ));
        }
    }
    Ok(LineSolution {
        camera: [oa * len_a, ob * len_b, oc * len_c, od * len_d],
        world,
    })
}

/// Recovers the target points in the camera frame by the sine law along each
/// line, then fits planes through them in the camera and target frames.
pub fn estimate_plane(obs: &TargetObservation) -> Result<PlaneEstimate> {
    let l1 = solve_line(&obs.lines[0], obs)?;
    let l2 = solve_line(&obs.lines[1], obs)?;
    let mut points_camera = [Vec3::zeros(); 8];
    let mut points_world = [Vec3::zeros(); 8];
    points_camera[..4].copy_from_slice(&l1.camera);
    points_camera[4..].copy_from_slice(&l2.camera);
    points_world[..4].copy_from_slice(&l1.world);
    points_world[4..].copy_from_slice(&l2.world);

    let (camera, rms_camera) = fit_plane(&points_camera, Frame::Camera)?;
    let (world, _) = fit_plane(&points_world, Frame::World)?;
    let extent = points_world
        .iter()
        .flat_map(|p| points_world.iter().map(move |q| (p - q).norm()))
        .fold(0.0, f64::max);
    let worst = points_camera
        .iter()
        .map(|p| camera.signed_distance(p).abs())
        .fold(0.0, f64::max);
    if worst > COPLANARITY_TOL * extent {
        return Err(Error::InconsistentObservation(format!(
            "recovered points are off-plane by {worst:.3e} m over a {extent:.3e} m target"
        )));
    }
    let cc_residual = ((points_camera[6] - points_camera[2]).norm()
        - (points_world[6] - points_world[2]).norm())
    .abs();
    let ratio_c = (points_camera[3] - points_camera[1]).norm() / (points_camera[7] - points_camera[5]).norm();
    let ratio_w = (points_world[3] - points_world[1]).norm() / (points_world[7] - points_world[5]).norm();
    Ok(PlaneEstimate {
        camera,
        world,
        points_camera,
        points_world,
        rms_camera,
        cc_residual,
        bd_ratio_residual: (ratio_c / ratio_w - 1.0).abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationAxis {
    /// Unit direction.
    pub direction: Vec3,
    /// Point on the axis, at `z = 0` unless `fallback` is set.
    pub point: Vec3,
    /// The axis does not cross `z = 0`; `point` is the axis point nearest the
    /// origin instead.
    pub fallback: bool,
}

/// Intersection line of two planes, anchored at `z = 0`.
pub fn axis_from_planes(p1: &LightPlane, p2: &LightPlane) -> Result<RotationAxis> {
    let (n1, n2) = (p1.normal(), p2.normal());
    let cross = n1.cross(&n2);
    if cross.norm() <= 1e-9 {
        return Err(Error::NoAxis);
    }
    let direction = cross.normalize();
    let det = n1.x * n2.y - n1.y * n2.x;
    if det.abs() > 1e-9 {
        let x = (-p1.d * n2.y + p2.d * n1.y) / det;
        let y = (-p2.d * n1.x + p1.d * n2.x) / det;
        return Ok(RotationAxis { direction, point: Vec3::new(x, y, 0.0), fallback: false });
    }
    let c = n1.dot(&n2);
    let (h1, h2) = (-p1.d, -p2.d);
    let point = ((h1 - h2 * c) * n1 + (h2 - h1 * c) * n2) / (1.0 - c * c);
    Ok(RotationAxis { direction, point, fallback: true })
}

/// Rotates `plane` by `theta` about `axis`; the axis point stays on the plane.
pub fn rotate_plane(plane: &LightPlane, axis: &RotationAxis, theta: f64) -> Result<LightPlane> {
    let r = rodrigues(&axis.direction, theta)?;
    let n = r.apply(&plane.normal());
    LightPlane::from_normal_point(&n, &axis.point, plane.frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::geom::{exp_so3, RigidTransform};
    use crate::sim::{synthetic_target, TargetLayout};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn plane_sign_convention() {
        let p = LightPlane::new(0.0, 0.0, -2.0, 1.0, Frame::Camera).unwrap();
        assert_eq!((p.c, p.d), (1.0, -0.5));
        let p = LightPlane::new(-1.0, 3.0, 0.0, 1.0, Frame::Camera).unwrap();
        assert!(p.a > 0.0 && p.b < 0.0);
        let p = LightPlane::new(0.0, -1.0, 0.0, 1.0, Frame::World).unwrap();
        assert_eq!((p.b, p.d), (1.0, -1.0));
        assert!(LightPlane::new(0.0, 0.0, 0.0, 1.0, Frame::World).is_err());
    }

    #[test]
    fn cross_ratio_fixtures() {
        let r = cross_ratio(0.0, 1.0, 2.0, 3.0);
        assert!((r - 4.0 / 3.0).abs() < 1e-15);
        assert!((cross_ratio_locate(0.0, 1.0, 3.0, r).unwrap() - 2.0).abs() < 1e-12);
        // C on B: the numerator (C − A)(D − B) over (D − A)(C − B) blows up,
        // so approach it from the inversion side with a huge ratio.
        let yc = cross_ratio_locate(0.0, 1.0, 3.0, 1e12).unwrap();
        assert!((yc - 1.0).abs() < 1e-9);
        let shifted = cross_ratio_locate(10.0, 11.0, 13.0, r).unwrap();
        assert!((shifted - 12.0).abs() < 1e-12);
        // Denominator r (D − A) − (D − B) = 0.
        assert!(cross_ratio_locate(0.0, 1.0, 3.0, 2.0 / 3.0).is_err());
    }

    #[test]
    fn cross_ratio_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let a = rng.random_range(-1.0..1.0);
            let b = a + rng.random_range(0.01..1.0);
            let c = b + rng.random_range(0.01..1.0);
            let d = c + rng.random_range(0.01..1.0);
            let r = cross_ratio(a, b, c, d);
            let yc = cross_ratio_locate(a, b, d, r).unwrap();
            assert!((cross_ratio(a, b, yc, d) - r).abs() < 1e-9);
        }
    }

    fn frontal_pose(depth: f64) -> RigidTransform {
        RigidTransform::from_translation(Vec3::new(0.0, 0.0, depth))
    }

    #[test]
    fn frontal_target_recovers_plane() {
        let layout = TargetLayout::default();
        let obs = synthetic_target(&frontal_pose(0.5), &layout, &fixtures::intrinsics(), None, 0.0, 0).unwrap();
        let est = estimate_plane(&obs).unwrap();
        let truth = LightPlane::new(0.0, 0.0, 1.0, -0.5, Frame::Camera).unwrap();
        assert!(est.camera.normal_angle_to(&truth) < 1e-4);
        assert!((est.camera.d - truth.d).abs() < 1e-5);
        assert!(est.rms_camera < 1e-6);
        assert!(est.cc_residual < 1e-9);
        assert!(est.bd_ratio_residual < 1e-9);
        assert_eq!(est.world.normal(), Vec3::z());
    }

    #[test]
    fn symmetric_target_normal_is_optical_axis() {
        let layout = TargetLayout::symmetric();
        let obs = synthetic_target(&frontal_pose(0.4), &layout, &fixtures::intrinsics(), None, 0.0, 0).unwrap();
        let est = estimate_plane(&obs).unwrap();
        assert!(est.camera.normal_angle_to(&LightPlane::new(0.0, 0.0, 1.0, 0.0, Frame::Camera).unwrap()) < 1e-9);
    }

    #[test]
    fn tilted_target_with_distortion() {
        let pose = RigidTransform::new(exp_so3(&Vec3::new(0.3, -0.2, 0.1)), Vec3::new(0.02, -0.01, 0.45));
        let layout = TargetLayout::default();
        let dist = fixtures::distortion();
        let obs = synthetic_target(&pose, &layout, &fixtures::intrinsics(), Some(dist), 0.0, 0).unwrap();
        let est = estimate_plane(&obs).unwrap();
        let n = pose.rotation.apply(&Vec3::z());
        let truth = LightPlane::from_normal_point(&n, &pose.translation, Frame::Camera).unwrap();
        assert!(est.camera.normal_angle_to(&truth) < 1e-9);
        assert!((est.camera.d - truth.d).abs() < 1e-9);
        for (pc, pw) in est.points_camera.iter().zip(&est.points_world) {
            assert!((pose.transform_point(pw) - pc).norm() < 1e-9);
        }
        // Collinearity of each line's recovered points.
        for line in est.points_camera.chunks(4) {
            let dir = (line[3] - line[0]).normalize();
            for p in line {
                assert!((p - line[0]).cross(&dir).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn scale_consistency() {
        let pose = RigidTransform::new(exp_so3(&Vec3::new(-0.2, 0.25, 0.0)), Vec3::new(0.0, 0.0, 0.5));
        let layout = TargetLayout::default();
        let base = estimate_plane(&synthetic_target(&pose, &layout, &fixtures::intrinsics(), None, 0.0, 0).unwrap())
            .unwrap();
        let scaled_pose = RigidTransform::new(pose.rotation, pose.translation * 1.5);
        let scaled = estimate_plane(
            &synthetic_target(&scaled_pose, &layout.scaled(1.5), &fixtures::intrinsics(), None, 0.0, 0).unwrap(),
        )
        .unwrap();
        assert!(base.camera.normal_angle_to(&scaled.camera) < 1e-9);
        assert!((scaled.camera.d / base.camera.d - 1.5).abs() < 1e-9);
    }

    #[test]
    fn coincident_points_rejected() {
        let layout = TargetLayout::default();
        let mut obs = synthetic_target(&frontal_pose(0.5), &layout, &fixtures::intrinsics(), None, 0.0, 0).unwrap();
        obs.lines[0].pixels[1] = obs.lines[0].pixels[0];
        assert!(estimate_plane(&obs).is_err());
    }

    #[test]
    fn axis_from_coordinate_planes() {
        let px = LightPlane::new(1.0, 0.0, 0.0, 0.0, Frame::Camera).unwrap();
        let py = LightPlane::new(0.0, 1.0, 0.0, 0.0, Frame::Camera).unwrap();
        let axis = axis_from_planes(&px, &py).unwrap();
        assert_eq!(axis.direction.z.abs(), 1.0);
        assert_eq!(axis.point, Vec3::zeros());
        assert!(!axis.fallback);
        assert!(matches!(axis_from_planes(&px, &px), Err(Error::NoAxis)));
    }

    #[test]
    fn axis_fallback_when_parallel_to_z0() {
        // Both planes contain the x axis direction shifted to z = 2.
        let p1 = LightPlane::new(0.0, 1.0, 1.0, -2.0, Frame::Camera).unwrap();
        let p2 = LightPlane::new(0.0, -1.0, 1.0, -2.0, Frame::Camera).unwrap();
        let axis = axis_from_planes(&p1, &p2).unwrap();
        assert!(axis.fallback);
        assert!((axis.point - Vec3::new(0.0, 0.0, 2.0f64.sqrt() * 2.0f64.sqrt())).norm() < 1e-12);
        assert!(p1.signed_distance(&axis.point).abs() < 1e-12);
        assert!(p2.signed_distance(&axis.point).abs() < 1e-12);
    }

    #[test]
    fn axis_recovered_from_rotated_planes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let dir = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.3..1.0))
                .normalize();
            let point = Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0);
            let truth = RotationAxis { direction: dir, point, fallback: false };
            let seed_n = dir.cross(&Vec3::new(rng.random_range(-1.0..1.0), 1.0, 0.2)).normalize();
            let p1 = LightPlane::from_normal_point(&seed_n, &point, Frame::Camera).unwrap();
            let p2 = rotate_plane(&p1, &truth, rng.random_range(0.2..1.0)).unwrap();
            let axis = axis_from_planes(&p1, &p2).unwrap();
            assert!(axis.direction.cross(&dir).norm() < 1e-9);
            assert!((axis.point - point).norm() < 1e-9);
            for p in [&p1, &p2] {
                assert!(p.signed_distance(&axis.point).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rotate_plane_properties() {
        let px = LightPlane::new(1.0, 0.0, 0.0, 0.0, Frame::Camera).unwrap();
        let z_axis = RotationAxis { direction: Vec3::z(), point: Vec3::zeros(), fallback: false };
        assert_eq!(rotate_plane(&px, &z_axis, 0.0).unwrap(), px);
        let q = rotate_plane(&px, &z_axis, FRAC_PI_2).unwrap();
        assert!((q.normal() - Vec3::y()).norm() < 1e-15 && q.d.abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let axis = RotationAxis {
            direction: Vec3::new(0.2, 0.9, 0.4).normalize(),
            point: Vec3::new(0.03, -0.02, 0.0),
            fallback: false,
        };
        let plane = LightPlane::new(0.7, 0.1, 0.7, -0.3, Frame::Camera).unwrap();
        let axis_angle = |p: &LightPlane| p.normal().dot(&axis.direction).abs();
        for _ in 0..100 {
            let (t1, t2) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let a = rotate_plane(&rotate_plane(&plane, &axis, t1).unwrap(), &axis, t2).unwrap();
            let b = rotate_plane(&plane, &axis, t1 + t2).unwrap();
            assert!((a.normal() - b.normal()).norm() < 1e-12 && (a.d - b.d).abs() < 1e-12);
            let back = rotate_plane(&rotate_plane(&plane, &axis, t1).unwrap(), &axis, -t1).unwrap();
            assert!((back.normal() - plane.normal()).norm() < 1e-12);
            assert!(b.signed_distance(&axis.point).abs() < 1e-12);
            assert!((axis_angle(&b) - axis_angle(&plane)).abs() < 1e-12);
        }
    }

    #[test]
    fn plane_fit_rejects_collinear() {
        let pts = [Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
        assert!(fit_plane(&pts, Frame::World).is_err());
    }
}
