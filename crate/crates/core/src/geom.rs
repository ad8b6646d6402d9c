//! Rotations, rigid transforms and the SE(3) exponential/logarithm.
//!
//! Conventions:
//! - quaternions are Hamilton, scalar-first, right-handed;
//! - twists are ordered translation-first: `(rho, phi)`;
//! - `RigidTransform` maps points from its source frame into its target frame,
//!   `p' = R p + t`, and composes left-to-right like matrices.

use std::ops::{Add, Mul};

use nalgebra::{Matrix3, Matrix4, Vector3, Vector6};

use crate::error::{degenerate, invalid, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance used for unit-norm and orthogonality checks on inputs.
pub const UNIT_TOL: f64 = 1e-9;

/// Below this rotation angle the closed forms are replaced by their series.
const SMALL_ANGLE: f64 = 1e-6;

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

fn all_finite(it: impl IntoIterator<Item = f64>) -> bool {
    it.into_iter().all(f64::is_finite)
}

/// A general (not necessarily unit) quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub const fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 0.0)
    }

    /// Pure quaternion `(0, v)`.
    pub fn pure(v: &Vec3) -> Self {
        Self::new(0.0, v.x, v.y, v.z)
    }

    pub fn vector(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn is_finite(&self) -> bool {
        all_finite([self.w, self.x, self.y, self.z])
    }

    /// Hamilton product `self ⊗ rhs`.
    pub fn hamilton(&self, rhs: &Self) -> Self {
        let (a, b) = (self, rhs);
        Self::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }
}

impl Add for Quaternion {
    type Output = Quaternion;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.w + rhs.w, self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, rhs: Self) -> Self {
        self.hamilton(&rhs)
    }
}

impl From<Vec3> for Quaternion {
    fn from(v: Vec3) -> Self {
        Self::pure(&v)
    }
}

impl From<RotationQuaternion> for Quaternion {
    fn from(q: RotationQuaternion) -> Self {
        q.0
    }
}

/// Unit quaternion representing a rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationQuaternion(Quaternion);

impl RotationQuaternion {
    /// Builds a rotation quaternion, normalizing the input.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        Self::from_quaternion(Quaternion::new(w, x, y, z))
    }

    pub fn from_quaternion(q: Quaternion) -> Result<Self> {
        if !q.is_finite() {
            return Err(invalid("quaternion has non-finite components"));
        }
        let n = q.norm();
        if n < 1e-12 {
            return Err(invalid("quaternion has zero norm"));
        }
        Ok(Self(q.scale(1.0 / n)))
    }

    pub const fn identity() -> Self {
        Self(Quaternion::identity())
    }

    /// Rotation by `‖phi‖` radians about `phi / ‖phi‖`.
    pub fn from_rotation_vector(phi: &Vec3) -> Self {
        let theta = phi.norm();
        let half = 0.5 * theta;
        let k = if theta < SMALL_ANGLE {
            0.5 - theta * theta / 48.0
        } else {
            half.sin() / theta
        };
        Self(Quaternion::new(half.cos(), k * phi.x, k * phi.y, k * phi.z))
    }

    pub fn w(&self) -> f64 {
        self.0.w
    }
    pub fn x(&self) -> f64 {
        self.0.x
    }
    pub fn y(&self) -> f64 {
        self.0.y
    }
    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn as_quaternion(&self) -> Quaternion {
        self.0
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.conjugate())
    }

    /// `self ⊗ rhs`, renormalized.
    pub fn compose(&self, rhs: &Self) -> Self {
        let q = self.0.hamilton(&rhs.0);
        Self(q.scale(1.0 / q.norm()))
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.to_rotation_matrix().apply(v)
    }

    pub fn to_rotation_matrix(&self) -> RotationMatrix {
        let Quaternion { w, x, y, z } = self.0;
        RotationMatrix(Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ))
    }

    /// Shepperd's method; the result has non-negative scalar part.
    pub fn from_rotation_matrix(r: &RotationMatrix) -> Self {
        let m = &r.0;
        let tr = m.trace();
        let q = if tr > 0.0 {
            let s = 2.0 * (tr + 1.0).sqrt();
            Quaternion::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            Quaternion::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt();
            Quaternion::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = 2.0 * (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt();
            Quaternion::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        let q = if q.w < 0.0 { q.scale(-1.0) } else { q };
        Self(q.scale(1.0 / q.norm()))
    }

    /// Geodesic angle between two rotations, radians.
    pub fn angle_to(&self, other: &Self) -> f64 {
        let d = (self.0.w * other.0.w
            + self.0.x * other.0.x
            + self.0.y * other.0.y
            + self.0.z * other.0.z)
            .abs()
            .min(1.0);
        2.0 * d.acos()
    }
}

/// Hamilton product of a unit quaternion with a quaternion or a 3-vector
/// (promoted to the pure quaternion `(0, v)`).
pub fn quat_multiply(a: &RotationQuaternion, b: impl Into<Quaternion>) -> Result<Quaternion> {
    let b = b.into();
    if !b.is_finite() {
        return Err(invalid("quaternion operand has non-finite components"));
    }
    Ok(a.0.hamilton(&b))
}

/// 3×3 rotation matrix.
///
/// Values built from raw matrices are not checked; use
/// [`RotationMatrix::orthogonality_error`] to flag drifted iterates and
/// [`orthonormalize`] to project back onto SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Mat3);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Self(m)
    }

    /// Accepts `m` only if it is a proper rotation within [`UNIT_TOL`].
    pub fn try_from_matrix(m: Mat3) -> Result<Self> {
        let r = Self(m);
        if !all_finite(m.iter().copied()) {
            return Err(invalid("rotation matrix has non-finite entries"));
        }
        let err = r.orthogonality_error();
        if err > UNIT_TOL {
            return Err(invalid(format!(
                "matrix is not a rotation (orthogonality error {err:e})"
            )));
        }
        Ok(r)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    /// `max(|RᵀR − I|, |det R − 1|)`.
    pub fn orthogonality_error(&self) -> f64 {
        let e = (self.0.transpose() * self.0 - Mat3::identity()).abs().max();
        e.max((self.0.determinant() - 1.0).abs())
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        log_so3(self).norm()
    }

    /// Geodesic distance to `other`, radians.
    pub fn angle_to(&self, other: &Self) -> f64 {
        (self.transpose() * *other).angle()
    }

    pub fn to_quaternion(&self) -> RotationQuaternion {
        RotationQuaternion::from_rotation_matrix(self)
    }
}

impl Mul for RotationMatrix {
    type Output = RotationMatrix;
    fn mul(self, rhs: Self) -> Self {
        Self(self.0 * rhs.0)
    }
}

/// Element of SE(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: RotationMatrix,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: RotationMatrix, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(RotationMatrix::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(RotationMatrix::identity(), t)
    }

    pub fn from_rotation(r: RotationMatrix) -> Self {
        Self::new(r, Vec3::zeros())
    }

    pub fn from_quaternion(q: &RotationQuaternion, t: Vec3) -> Self {
        Self::new(q.to_rotation_matrix(), t)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -rt.apply(&self.translation))
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.apply(p) + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation.apply(v)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Largest absolute entry of the difference of the homogeneous matrices.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.to_homogeneous() - other.to_homogeneous()).abs().max()
    }

    pub fn rotation_angle_to(&self, other: &Self) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    pub fn translation_distance_to(&self, other: &Self) -> f64 {
        (self.translation - other.translation).norm()
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: Self) -> Self {
        Self::new(
            self.rotation * rhs.rotation,
            self.rotation.apply(&rhs.translation) + self.translation,
        )
    }
}

/// se(3) element, translation part first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    /// Translational part, meters.
    pub rho: Vec3,
    /// Rotational part, radians.
    pub phi: Vec3,
}

impl Twist {
    pub fn new(rho: Vec3, phi: Vec3) -> Self {
        Self { rho, phi }
    }

    pub fn zero() -> Self {
        Self::new(Vec3::zeros(), Vec3::zeros())
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(
            Vec3::new(v[0], v[1], v[2]),
            Vec3::new(v[3], v[4], v[5]),
        )
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z,
        )
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }
}

/// `R = I + sinθ K + (1 − cosθ) K²` for a unit `axis`.
pub fn rodrigues(axis: &Vec3, angle: f64) -> Result<RotationMatrix> {
    if !all_finite([axis.x, axis.y, axis.z, angle]) {
        return Err(invalid("rodrigues: non-finite input"));
    }
    if (axis.norm() - 1.0).abs() > UNIT_TOL {
        return Err(invalid(format!(
            "rodrigues: axis norm {} is not 1",
            axis.norm()
        )));
    }
    let k = skew(axis);
    Ok(RotationMatrix(
        Mat3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos()),
    ))
}

/// Coefficients `(sinθ/θ, (1−cosθ)/θ²)` without cancellation.
fn so3_coefficients(theta: f64) -> (f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        let s = (0.5 * theta).sin();
        (theta.sin() / theta, 2.0 * s * s / (theta * theta))
    }
}

pub fn exp_so3(phi: &Vec3) -> RotationMatrix {
    let theta = phi.norm();
    let (a, b) = so3_coefficients(theta);
    let k = skew(phi);
    RotationMatrix(Mat3::identity() + k * a + k * k * b)
}

/// Principal logarithm of a rotation, `‖φ‖ ∈ [0, π]`.
pub fn log_so3(r: &RotationMatrix) -> Vec3 {
    let m = r.matrix();
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let w = vee(m);
    let sin = 0.5 * w.norm();
    let theta = sin.atan2(cos);
    if theta < SMALL_ANGLE {
        // θ / sinθ ≈ 1 + θ²/6
        return w * (0.5 * (1.0 + theta * theta / 6.0));
    }
    if cos > -0.9 {
        return w * (0.5 * theta / sin);
    }
    // Near π the antisymmetric part vanishes; read the axis from the
    // symmetric part (1 − cosθ) n nᵀ, column with the largest diagonal.
    let s = (m + m.transpose()) * 0.5 - Mat3::identity() * cos;
    let i = (0..3)
        .max_by(|&a, &b| s[(a, a)].total_cmp(&s[(b, b)]))
        .unwrap_or(0);
    let mut n: Vec3 = s.column(i).into_owned();
    n /= n.norm();
    if n.dot(&w) < 0.0 {
        n = -n;
    }
    n * theta
}

/// Left Jacobian of SO(3), the `V` matrix of the SE(3) exponential.
pub fn left_jacobian_so3(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let (_, b) = so3_coefficients(theta);
    let c = if theta < 1e-2 {
        let t2 = theta * theta;
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    } else {
        (theta - theta.sin()) / (theta * theta * theta)
    };
    let k = skew(phi);
    Mat3::identity() + k * b + k * k * c
}

/// Inverse of [`left_jacobian_so3`].
pub fn left_jacobian_so3_inv(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let d = if theta < 1e-2 {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half / half.tan()) / (theta * theta)
    };
    let k = skew(phi);
    Mat3::identity() - k * 0.5 + k * k * d
}

pub fn exp_se3(xi: &Twist) -> RigidTransform {
    let r = exp_so3(&xi.phi);
    let v = left_jacobian_so3(&xi.phi);
    RigidTransform::new(r, v * xi.rho)
}

pub fn log_se3(t: &RigidTransform) -> Result<Twist> {
    if !all_finite(t.rotation.matrix().iter().chain(t.translation.iter()).copied()) {
        return Err(invalid("log_se3: non-finite transform"));
    }
    let phi = log_so3(&t.rotation);
    let rho = left_jacobian_so3_inv(&phi) * t.translation;
    Ok(Twist::new(rho, phi))
}

/// Nearest rotation in Frobenius norm, `U Vᵀ` from the SVD of `m`.
pub fn orthonormalize(m: &Mat3) -> Result<RotationMatrix> {
    if !all_finite(m.iter().copied()) {
        return Err(invalid("orthonormalize: non-finite matrix"));
    }
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(degenerate("orthonormalize: SVD failed")),
    };
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax <= 0.0 || smin <= 1e-12 * smax {
        return Err(degenerate("orthonormalize: rank-deficient matrix"));
    }
    let r = u * v_t;
    if r.determinant() < 0.0 {
        return Err(degenerate(
            "orthonormalize: projection is a reflection (det < 0)",
        ));
    }
    Ok(RotationMatrix(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_unit(rng: &mut impl Rng) -> Vec3 {
        loop {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 && n <= 1.0 {
                return v / n;
            }
        }
    }

    #[test]
    fn rodrigues_quarter_turn() {
        let r = rodrigues(&Vec3::z(), FRAC_PI_2).unwrap();
        let p = r.apply(&Vec3::x());
        assert!((p - Vec3::y()).norm() < 1e-15);
    }

    #[test]
    fn rodrigues_zero_angle_is_identity() {
        let r = rodrigues(&Vec3::new(0.6, 0.0, 0.8), 0.0).unwrap();
        assert_eq!(*r.matrix(), Mat3::identity());
    }

    #[test]
    fn rodrigues_rejects_non_unit_axis() {
        assert!(rodrigues(&Vec3::new(1.0, 1.0, 0.0), 0.3).is_err());
    }

    #[test]
    fn rodrigues_matches_quaternion() {
        let q = RotationQuaternion::new((PI / 6.0).cos(), 0.0, (PI / 6.0).sin(), 0.0).unwrap();
        let r = rodrigues(&Vec3::y(), PI / 3.0).unwrap();
        let diff = (q.to_rotation_matrix().matrix() - r.matrix()).abs().max();
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn log_identity_and_pure_translation() {
        let xi = log_se3(&RigidTransform::identity()).unwrap();
        assert_eq!(xi.norm(), 0.0);
        let xi = log_se3(&RigidTransform::from_translation(Vec3::new(0.1, 0.0, 0.0))).unwrap();
        assert!((xi.to_vector() - Vector6::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn exp_pure_rotation_matches_rodrigues() {
        let t = exp_se3(&Twist::new(Vec3::zeros(), Vec3::new(0.0, 0.0, FRAC_PI_2)));
        let r = rodrigues(&Vec3::z(), FRAC_PI_2).unwrap();
        assert!((t.rotation.matrix() - r.matrix()).abs().max() < 1e-15);
        assert_eq!(t.translation, Vec3::zeros());
        assert_eq!(exp_se3(&Twist::zero()), RigidTransform::identity());
    }

    #[test]
    fn log_at_pi_is_stable() {
        for axis in [Vec3::x(), Vec3::y(), Vec3::z(), Vec3::new(1.0, 2.0, -2.0) / 3.0] {
            let r = rodrigues(&axis, PI).unwrap();
            let phi = log_so3(&r);
            assert!((phi.norm() - PI).abs() < 1e-12);
            assert!(phi.cross(&axis).norm() < 1e-9);
            assert!((exp_so3(&phi).matrix() - r.matrix()).abs().max() < 1e-12);
        }
        let near = rodrigues(&Vec3::new(0.0, 0.6, 0.8), PI - 1e-7).unwrap();
        assert!((exp_so3(&log_so3(&near)).matrix() - near.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn log_rejects_nan() {
        let t = RigidTransform::from_translation(Vec3::new(f64::NAN, 0.0, 0.0));
        assert!(log_se3(&t).is_err());
    }

    #[test]
    fn small_angle_branch_round_trip() {
        for s in [0.0, 1e-12, 1e-9, 5e-7, 2e-6, 1e-4, 5e-3, 2e-2] {
            let xi = Twist::new(Vec3::new(0.3, -0.2, 0.1), Vec3::new(s, -0.5 * s, 0.25 * s));
            let back = log_se3(&exp_se3(&xi)).unwrap();
            assert!((back.to_vector() - xi.to_vector()).norm() < 1e-14, "s = {s}");
        }
    }

    #[test]
    fn exp_first_order_jacobian() {
        // exp(ξ + h e_i) ≈ exp(ξ) · exp(J_r(ξ) h e_i), with the right Jacobian
        // estimated by finite differences; the residual must be O(h²).
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let xi = Twist::new(
                random_unit(&mut rng) * 0.3,
                random_unit(&mut rng) * rng.random_range(0.1..2.5),
            );
            let base = exp_se3(&xi);
            let mut jac = nalgebra::Matrix6::<f64>::zeros();
            let h = 1e-6;
            for i in 0..6 {
                let mut v = xi.to_vector();
                v[i] += h;
                let plus = exp_se3(&Twist::from_vector(&v));
                v[i] -= 2.0 * h;
                let minus = exp_se3(&Twist::from_vector(&v));
                let dp = log_se3(&(base.inverse() * plus)).unwrap().to_vector();
                let dm = log_se3(&(base.inverse() * minus)).unwrap().to_vector();
                jac.set_column(i, &((dp - dm) / (2.0 * h)));
            }
            for i in 0..6 {
                let step = 1e-4;
                let mut v = xi.to_vector();
                v[i] += step;
                let exact = exp_se3(&Twist::from_vector(&v));
                let approx = base * exp_se3(&Twist::from_vector(&(jac.column(i) * step)));
                assert!(exact.max_abs_diff(&approx) < 1e-7);
            }
        }
    }

    #[test]
    fn orthonormalize_fixed_point_and_reflection() {
        let r = rodrigues(&Vec3::new(0.0, 0.6, 0.8), 1.1).unwrap();
        let o = orthonormalize(r.matrix()).unwrap();
        assert!((o.matrix() - r.matrix()).abs().max() < 1e-12);
        let mirror = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(matches!(orthonormalize(&mirror), Err(crate::Error::Degenerate(_))));
        assert!(orthonormalize(&Mat3::zeros()).is_err());
    }

    #[test]
    fn orthonormalize_perturbed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let r = exp_so3(&(random_unit(&mut rng) * rng.random_range(0.0..3.0)));
            let noise = Mat3::from_fn(|_, _| rng.random_range(-0.01..0.01));
            let o = orthonormalize(&(r.matrix() + noise)).unwrap();
            let e = (o.matrix().transpose() * o.matrix() - Mat3::identity()).abs().max();
            assert!(e < 1e-12);
            assert!((o.matrix().determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quaternion_products() {
        let a = RotationQuaternion::new(0.5, 0.5, -0.5, 0.5).unwrap();
        let p = quat_multiply(&a, RotationQuaternion::identity()).unwrap();
        assert_eq!(p, a.as_quaternion());
        let i = RotationQuaternion::new(0.0, 1.0, 0.0, 0.0).unwrap();
        let ij = quat_multiply(&i, Vec3::y()).unwrap();
        assert_eq!(ij, Quaternion::new(0.0, 0.0, 0.0, 1.0));
        assert!(quat_multiply(&i, Vec3::new(f64::NAN, 0.0, 0.0)).is_err());
    }

    #[test]
    fn quaternion_matrix_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let q = RotationQuaternion::from_rotation_vector(
                &(random_unit(&mut rng) * rng.random_range(0.0..PI)),
            );
            let back = RotationQuaternion::from_rotation_matrix(&q.to_rotation_matrix());
            assert!(q.angle_to(&back) < 1e-7);
            let r = exp_so3(&log_so3(&q.to_rotation_matrix()));
            assert!((r.matrix() - q.to_rotation_matrix().matrix()).abs().max() < 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn twist() -> impl Strategy<Value = Twist> {
            (
                prop::array::uniform3(-2.0..2.0f64),
                prop::array::uniform3(-1.0..1.0f64),
                0.0..(PI - 1e-3),
            )
                .prop_filter_map("non-degenerate axis", |(rho, axis, angle)| {
                    let a = Vec3::from(axis);
                    (a.norm() > 1e-3).then(|| Twist::new(Vec3::from(rho), a.normalize() * angle))
                })
        }

        proptest! {
            #[test]
            fn hamilton_norm_is_multiplicative(
                a in prop::array::uniform4(-2.0..2.0f64),
                b in prop::array::uniform4(-2.0..2.0f64),
            ) {
                let qa = Quaternion::new(a[0], a[1], a[2], a[3]);
                let qb = Quaternion::new(b[0], b[1], b[2], b[3]);
                let lhs = (qa * qb).norm();
                prop_assert!((lhs - qa.norm() * qb.norm()).abs() < 1e-12);
            }

            #[test]
            fn transform_inverse_composes_to_identity(xi in twist()) {
                let t = exp_se3(&xi);
                prop_assert!((t.inverse() * t).max_abs_diff(&RigidTransform::identity()) < 1e-9);
            }

            #[test]
            fn orthonormalize_is_idempotent(xi in twist(), noise in prop::array::uniform9(-0.05..0.05f64)) {
                let m = exp_so3(&xi.phi).matrix() + Mat3::from_row_slice(&noise);
                let once = orthonormalize(&m).unwrap();
                let twice = orthonormalize(once.matrix()).unwrap();
                prop_assert!((once.matrix() - twice.matrix()).abs().max() < 1e-12);
            }
        }
    }
}
