//! Inertial–acoustic pose estimation: stream synchronization, strapdown dead
//! reckoning, DVL correction and the (adaptive) error-state Kalman filter.
//!
//! The filter keeps a nominal state `(p, v, q)` and a 9-dimensional error
//! state `[δp, δv, δθ]` with `q_true = q ⊗ exp(δθ)`.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::error::{invalid, Error, Result};
use crate::geom::{quat_multiply, RigidTransform, RotationQuaternion, Vec3};

pub type Mat9 = SMatrix<f64, 9, 9>;
pub type Vec9 = SVector<f64, 9>;
pub type Mat6 = SMatrix<f64, 6, 6>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// Gravity-compensated specific force, body frame, m/s².
    pub accel: Vec3,
    /// Body rate, rad/s.
    pub gyro: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DvlSample {
    pub t: f64,
    /// Velocity in the DVL frame, m/s.
    pub velocity: Vec3,
    pub healthy: bool,
}

impl DvlSample {
    pub fn lambda(&self) -> f64 {
        if self.healthy {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub t: f64,
    pub p: Vec3,
    pub v: Vec3,
    /// Body → world.
    pub q: RotationQuaternion,
    /// Error-state covariance over `[δp, δv, δθ]`.
    pub cov: Mat9,
}

impl NavState {
    pub fn new(t: f64, p: Vec3, v: Vec3, q: RotationQuaternion, cov: Mat9) -> Self {
        Self { t, p, v, q, cov }
    }

    /// `self ⊞ δ`.
    fn boxplus(&self, d: &Vec9) -> Self {
        let dth = Vec3::new(d[6], d[7], d[8]);
        Self {
            p: self.p + Vec3::new(d[0], d[1], d[2]),
            v: self.v + Vec3::new(d[3], d[4], d[5]),
            q: self.q.compose(&RotationQuaternion::from_rotation_vector(&dth)),
            ..*self
        }
    }

    /// `self ⊟ other`, the error taking `other` to `self`.
    fn boxminus(&self, other: &Self) -> Vec9 {
        let dp = self.p - other.p;
        let dv = self.v - other.v;
        let dq = other.q.inverse().compose(&self.q).to_rotation_matrix();
        let dth = crate::geom::log_so3(&dq);
        Vec9::from_iterator(dp.iter().chain(dv.iter()).chain(dth.iter()).copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    /// Input noise covariance over `[accel (3), gyro (3)]`.
    pub q: Mat6,
    /// DVL velocity noise covariance, m²/s².
    pub r: Matrix3<f64>,
    pub k_m: f64,
    pub p0: Mat9,
    /// DVL → IMU.
    pub t_i_d: RigidTransform,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let mut q = Mat6::zeros();
        for i in 0..3 {
            q[(i, i)] = 1e-3;
            q[(i + 3, i + 3)] = 1e-5;
        }
        Self {
            q,
            r: Matrix3::identity() * 1e-4,
            k_m: 2.0,
            p0: Mat9::identity() * 1e-6,
            t_i_d: RigidTransform::identity(),
        }
    }
}

fn is_symmetric_psd<const N: usize>(m: &SMatrix<f64, N, N>) -> bool {
    let asym = (m - m.transpose()).abs().max();
    if !(asym <= 1e-12 * (1.0 + m.abs().max())) {
        return false;
    }
    let d = nalgebra::DMatrix::from_column_slice(N, N, m.as_slice());
    d.symmetric_eigenvalues().min() >= -1e-12
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !is_symmetric_psd(&self.q) || !is_symmetric_psd(&self.r) || !is_symmetric_psd(&self.p0) {
            return Err(invalid("filter Q, R and P0 must be symmetric PSD"));
        }
        if !(self.k_m > 0.1) {
            return Err(invalid("adaptive threshold K_m must exceed 0.1"));
        }
        Ok(())
    }
}

/// Pairs samples across streams.
///
/// The stream with the largest mean sampling interval anchors the matching.
/// Each anchor sample takes the nearest sample of every other stream; the
/// tuple is emitted only if all of them lie within `tol` seconds and none has
/// been used by an earlier tuple. Returned tuples hold one index per stream.
pub fn sync_streams(streams: &[&[f64]], tol: f64) -> Vec<Vec<usize>> {
    if streams.is_empty() || streams.iter().any(|s| s.is_empty()) {
        return Vec::new();
    }
    let mean_interval = |s: &[f64]| {
        if s.len() < 2 {
            f64::INFINITY
        } else {
            (s[s.len() - 1] - s[0]) / (s.len() - 1) as f64
        }
    };
    let mut anchor = 0;
    for (i, s) in streams.iter().enumerate() {
        if mean_interval(s) > mean_interval(streams[anchor]) {
            anchor = i;
        }
    }
    let mut used: Vec<Vec<bool>> = streams.iter().map(|s| vec![false; s.len()]).collect();
    let mut out = Vec::new();
    'anchors: for (ai, &t) in streams[anchor].iter().enumerate() {
        let mut tuple = vec![0; streams.len()];
        for (si, s) in streams.iter().enumerate() {
            if si == anchor {
                tuple[si] = ai;
                continue;
            }
            let j = nearest_index(s, t);
            if (s[j] - t).abs() > tol || used[si][j] {
                continue 'anchors;
            }
            tuple[si] = j;
        }
        for (si, &j) in tuple.iter().enumerate() {
            used[si][j] = true;
        }
        out.push(tuple);
    }
    out
}

/// Index of the sample nearest to `t` in a sorted, nonempty slice.
pub fn nearest_index(s: &[f64], t: f64) -> usize {
    let k = s.partition_point(|&x| x < t);
    if k == 0 {
        0
    } else if k == s.len() {
        s.len() - 1
    } else if (s[k] - t).abs() < (t - s[k - 1]).abs() {
        k
    } else {
        k - 1
    }
}

/// Strapdown step with additive input noise `w = [accel, gyro]` held over
/// the interval.
fn propagate_with_noise(
    s: &NavState,
    imu: &ImuSample,
    imu_prev: &ImuSample,
    dt: f64,
    w: &SVector<f64, 6>,
) -> NavState {
    let na = Vec3::new(w[0], w[1], w[2]);
    let ng = Vec3::new(w[3], w[4], w[5]);
    let a = imu_prev.accel + na;
    let omega = imu_prev.gyro + ng;
    let r = s.q.to_rotation_matrix();
    let jerk = r.apply(&((imu.accel - imu_prev.accel) / dt));
    let alpha = (imu.gyro - imu_prev.gyro) / dt;
    let ra = r.apply(&a);
    let p = s.p + s.v * dt + 0.5 * ra * dt * dt + jerk * (dt * dt * dt / 6.0);
    let v = s.v + ra * dt;
    // The vector operands are finite here, so the products cannot fail.
    let q0 = s.q.as_quaternion();
    let q1 = quat_multiply(&s.q, omega).unwrap_or(q0);
    let q2 = quat_multiply(&s.q, alpha).unwrap_or(q0);
    let q = q0 + q1.scale(0.5 * dt) + q2.scale(0.25 * dt * dt);
    let q = RotationQuaternion::from_quaternion(q).unwrap_or(s.q);
    NavState { t: s.t + dt, p, v, q, cov: s.cov }
}

/// One strapdown step from `imu_prev` to `imu`.
///
/// Jerk and angular acceleration are backward differences of the two
/// samples; the jerk is rotated into the world frame with the prior attitude.
pub fn propagate_dr(s: &NavState, imu: &ImuSample, imu_prev: &ImuSample, dt: f64) -> Result<NavState> {
    if !(dt > 0.0) {
        return Err(invalid(format!("propagate_dr: dt = {dt} must be positive")));
    }
    Ok(propagate_with_noise(s, imu, imu_prev, dt, &SVector::zeros()))
}

/// Last healthy DVL epoch, the origin of the integrated DVL position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DvlAnchor {
    pub t: f64,
    pub p: Vec3,
    pub v: Vec3,
}

impl DvlAnchor {
    pub fn from_state(s: &NavState) -> Self {
        Self { t: s.t, p: s.p, v: s.v }
    }
}

/// Applies a DVL sample to an already propagated state.
///
/// An unhealthy sample returns `propagated` untouched. A healthy one replaces
/// the velocity with the DVL velocity rotated to the world frame and the
/// position with the anchor position plus the trapezoidal integral of DVL
/// velocity since the anchor; the anchor then moves to this epoch.
pub fn dvl_correct(
    propagated: &NavState,
    dvl: &DvlSample,
    t_i_d: &RigidTransform,
    anchor: &mut DvlAnchor,
) -> NavState {
    if !dvl.healthy {
        return *propagated;
    }
    let body = t_i_d.rotation.apply(&dvl.velocity);
    let v = propagated.q.rotate(&body);
    let p = anchor.p + 0.5 * (anchor.v + v) * (propagated.t - anchor.t);
    *anchor = DvlAnchor { t: propagated.t, p, v };
    NavState { p, v, ..*propagated }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Adaptation {
    /// Plain EKF covariance update.
    None,
    /// η from the innovation consistency ratio.
    Adaptive,
    /// Fixed η, bypassing the ratio.
    ForcedEta(f64),
}

/// η as a function of the consistency ratio `K_n` and threshold `K_m`.
pub fn adaptive_factor(k_n: f64, k_m: f64) -> f64 {
    if k_n > k_m {
        1.0 / (k_n + 1e-8) - 1.0
    } else if 0.1 < k_n && k_n < k_m {
        k_n
    } else {
        0.0
    }
}

/// Mean over measurement axes of `ỹ_i² / S_ii`.
///
/// Normalizing by the measurement dimension makes `K_n ≈ 1` mean the
/// innovations agree with their predicted covariance.
pub fn consistency_ratio(innovation: &Vector3<f64>, s: &Matrix3<f64>) -> f64 {
    (0..3).map(|i| innovation[i] * innovation[i] / s[(i, i)]).sum::<f64>() / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterStep {
    pub state: NavState,
    pub innovation: Option<Vector3<f64>>,
    pub k_n: Option<f64>,
    pub eta: f64,
    /// Eigenvalue clamping was needed to keep P positive semi-definite.
    pub repaired: bool,
}

fn measure(s: &NavState, r_i_d: &Matrix3<f64>) -> Vector3<f64> {
    r_i_d.transpose() * s.q.to_rotation_matrix().transpose().apply(&s.v)
}

const FD_STEP: f64 = 1e-6;

fn transition_jacobians(
    s: &NavState,
    imu: &ImuSample,
    imu_prev: &ImuSample,
    dt: f64,
    nominal: &NavState,
) -> (Mat9, SMatrix<f64, 9, 6>) {
    let zero = SVector::<f64, 6>::zeros();
    let mut a = Mat9::zeros();
    for i in 0..9 {
        let mut d = Vec9::zeros();
        d[i] = FD_STEP;
        let plus = propagate_with_noise(&s.boxplus(&d), imu, imu_prev, dt, &zero);
        let minus = propagate_with_noise(&s.boxplus(&-d), imu, imu_prev, dt, &zero);
        let col = (plus.boxminus(nominal) - minus.boxminus(nominal)) / (2.0 * FD_STEP);
        a.set_column(i, &col);
    }
    let mut g = SMatrix::<f64, 9, 6>::zeros();
    for i in 0..6 {
        let mut w = zero;
        w[i] = FD_STEP;
        let plus = propagate_with_noise(s, imu, imu_prev, dt, &w);
        let minus = propagate_with_noise(s, imu, imu_prev, dt, &-w);
        let col = (plus.boxminus(nominal) - minus.boxminus(nominal)) / (2.0 * FD_STEP);
        g.set_column(i, &col);
    }
    (a, g)
}

fn measurement_jacobian(s: &NavState, r_i_d: &Matrix3<f64>) -> SMatrix<f64, 3, 9> {
    let mut h = SMatrix::<f64, 3, 9>::zeros();
    for i in 0..9 {
        let mut d = Vec9::zeros();
        d[i] = FD_STEP;
        let col = (measure(&s.boxplus(&d), r_i_d) - measure(&s.boxplus(&-d), r_i_d)) / (2.0 * FD_STEP);
        h.set_column(i, &col);
    }
    h
}

/// Symmetrizes `p`; clamps negative eigenvalues only if one falls below
/// `−1e-12`.
fn condition_covariance(p: &Mat9) -> (Mat9, bool) {
    let sym = (p + p.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    if eig.eigenvalues.min() >= -1e-12 {
        return (sym, false);
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let rebuilt = eig.eigenvectors * Mat9::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    ((rebuilt + rebuilt.transpose()) * 0.5, true)
}

/// Shared predict/update step of the EKF and AEKF.
pub fn kalman_step(
    s: &NavState,
    imu: &ImuSample,
    imu_prev: &ImuSample,
    dvl: Option<&DvlSample>,
    cfg: &FilterConfig,
    adaptation: Adaptation,
) -> Result<FilterStep> {
    let dt = imu.t - imu_prev.t;
    let nominal = propagate_dr(s, imu, imu_prev, dt)?;
    let (a, g) = transition_jacobians(s, imu, imu_prev, dt, &nominal);
    let p_prior = a * s.cov * a.transpose() + g * cfg.q * g.transpose();
    let (p_prior, repaired) = condition_covariance(&p_prior);
    let prior = NavState { cov: p_prior, ..nominal };
    let Some(dvl) = dvl.filter(|d| d.healthy) else {
        return Ok(FilterStep { state: prior, innovation: None, k_n: None, eta: 0.0, repaired });
    };
    let r_i_d = *cfg.t_i_d.rotation.matrix();
    let h = measurement_jacobian(&prior, &r_i_d);
    let innovation = dvl.velocity - measure(&prior, &r_i_d);
    let s_mat = h * p_prior * h.transpose() + cfg.r;
    let sv = s_mat.singular_values();
    let condition = sv.max() / sv.min();
    let s_inv = match s_mat.try_inverse() {
        Some(inv) if condition.is_finite() && condition < 1e14 => inv,
        _ => {
            return Err(Error::Numerical {
                reason: "innovation covariance is singular".into(),
                condition,
            })
        }
    };
    let k = p_prior * h.transpose() * s_inv;
    let correction = k * innovation;
    let mut state = prior.boxplus(&correction);
    let kh = k * h;
    let mut p = (Mat9::identity() - kh) * p_prior;
    let (k_n, eta) = match adaptation {
        Adaptation::None => (None, 0.0),
        Adaptation::ForcedEta(eta) => (Some(consistency_ratio(&innovation, &s_mat)), eta),
        Adaptation::Adaptive => {
            let k_n = consistency_ratio(&innovation, &s_mat);
            (Some(k_n), adaptive_factor(k_n, cfg.k_m))
        }
    };
    if eta != 0.0 {
        p -= eta * kh * p_prior;
    }
    let (p, fixed) = condition_covariance(&p);
    state.cov = p;
    Ok(FilterStep { state, innovation: Some(innovation), k_n, eta, repaired: repaired || fixed })
}

pub fn ekf_step(
    s: &NavState,
    imu: &ImuSample,
    imu_prev: &ImuSample,
    dvl: Option<&DvlSample>,
    cfg: &FilterConfig,
) -> Result<FilterStep> {
    kalman_step(s, imu, imu_prev, dvl, cfg, Adaptation::None)
}

pub fn aekf_step(
    s: &NavState,
    imu: &ImuSample,
    imu_prev: &ImuSample,
    dvl: Option<&DvlSample>,
    cfg: &FilterConfig,
) -> Result<FilterStep> {
    kalman_step(s, imu, imu_prev, dvl, cfg, Adaptation::Adaptive)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Strapdown propagation with DVL correction at healthy epochs.
    DeadReckoning,
    Ekf,
    Aekf,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dr" => Ok(Method::DeadReckoning),
            "ekf" => Ok(Method::Ekf),
            "aekf" => Ok(Method::Aekf),
            other => Err(invalid(format!("unknown fusion method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionRun {
    /// One state per IMU sample, starting with the initial state.
    pub states: Vec<NavState>,
    /// η applied at each DVL update, `(t, η)`.
    pub etas: Vec<(f64, f64)>,
    /// Consistency ratios at each DVL update, `(t, K_n)`.
    pub consistency: Vec<(f64, f64)>,
    pub repairs: usize,
}

/// Runs a fusion method over full IMU and DVL traces. DVL samples are matched
/// to IMU samples with `sync_tol`.
pub fn run_fusion(
    imu: &[ImuSample],
    dvl: &[DvlSample],
    init: NavState,
    cfg: &FilterConfig,
    method: Method,
    adaptation_override: Option<Adaptation>,
    sync_tol: f64,
) -> Result<FusionRun> {
    cfg.validate()?;
    if imu.is_empty() {
        return Err(invalid("run_fusion: empty IMU trace"));
    }
    let imu_t: Vec<f64> = imu.iter().map(|s| s.t).collect();
    let dvl_t: Vec<f64> = dvl.iter().map(|s| s.t).collect();
    let mut dvl_at: Vec<Option<usize>> = vec![None; imu.len()];
    if !dvl.is_empty() {
        for tuple in sync_streams(&[&imu_t, &dvl_t], sync_tol) {
            dvl_at[tuple[0]] = Some(tuple[1]);
        }
    }
    let adaptation = adaptation_override.unwrap_or(match method {
        Method::Aekf => Adaptation::Adaptive,
        _ => Adaptation::None,
    });
    let mut states = Vec::with_capacity(imu.len());
    let mut state = NavState { t: imu[0].t, ..init };
    state.cov = cfg.p0;
    states.push(state);
    let mut anchor = DvlAnchor::from_state(&state);
    let mut etas = Vec::new();
    let mut consistency = Vec::new();
    let mut repairs = 0;
    for k in 1..imu.len() {
        let sample = dvl_at[k].map(|i| &dvl[i]);
        let dt = imu[k].t - imu[k - 1].t;
        state = match method {
            Method::DeadReckoning => {
                let prop = propagate_dr(&state, &imu[k], &imu[k - 1], dt)?;
                match sample {
                    Some(d) => dvl_correct(&prop, d, &cfg.t_i_d, &mut anchor),
                    None => prop,
                }
            }
            Method::Ekf | Method::Aekf => {
                let step = kalman_step(&state, &imu[k], &imu[k - 1], sample, cfg, adaptation)?;
                if step.innovation.is_some() {
                    etas.push((step.state.t, step.eta));
                }
                if let Some(k_n) = step.k_n {
                    consistency.push((step.state.t, k_n));
                }
                repairs += usize::from(step.repaired);
                step.state
            }
        };
        states.push(state);
    }
    Ok(FusionRun { states, etas, consistency, repairs })
}

/// Axis-wise error statistics of an estimate against the truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisMetrics {
    pub mae: [f64; 3],
    pub me: [f64; 3],
    pub sd: [f64; 3],
    pub rmse: [f64; 3],
}

pub fn axis_metrics(estimate: &[Vec3], truth: &[Vec3]) -> Result<AxisMetrics> {
    if estimate.len() != truth.len() || estimate.is_empty() {
        return Err(invalid("axis_metrics: length mismatch or empty input"));
    }
    let n = estimate.len() as f64;
    let mut m = AxisMetrics { mae: [0.0; 3], me: [0.0; 3], sd: [0.0; 3], rmse: [0.0; 3] };
    for ax in 0..3 {
        let errs: Vec<f64> = estimate.iter().zip(truth).map(|(e, t)| e[ax] - t[ax]).collect();
        let me = errs.iter().sum::<f64>() / n;
        m.me[ax] = me;
        m.mae[ax] = errs.iter().map(|e| e.abs()).sum::<f64>() / n;
        m.rmse[ax] = (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
        m.sd[ax] = (errs.iter().map(|e| (e - me) * (e - me)).sum::<f64>() / n).sqrt();
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::exp_so3;

    fn still(t: f64, accel: Vec3, gyro: Vec3) -> ImuSample {
        ImuSample { t, accel, gyro }
    }

    fn origin(t: f64) -> NavState {
        NavState::new(t, Vec3::zeros(), Vec3::zeros(), RotationQuaternion::identity(), Mat9::identity() * 1e-6)
    }

    #[test]
    fn constant_acceleration_step() {
        let a = Vec3::new(1.0, 0.0, 0.0);
        let s = propagate_dr(&origin(0.0), &still(1.0, a, Vec3::zeros()), &still(0.0, a, Vec3::zeros()), 1.0)
            .unwrap();
        assert_eq!(s.p, Vec3::new(0.5, 0.0, 0.0));
        assert_eq!(s.v, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(s.q, RotationQuaternion::identity());
        assert!(propagate_dr(&origin(0.0), &still(1.0, a, Vec3::zeros()), &still(0.0, a, Vec3::zeros()), 0.0)
            .is_err());
    }

    #[test]
    fn circular_trajectory_matches_analytic() {
        // Body x along the velocity, body y toward the center, yaw rate w.
        let (radius, w, rate, dur) = (0.5, 0.1, 200.0, 10.0);
        let n = (dur * rate) as usize;
        let dt = 1.0 / rate;
        let imu: Vec<ImuSample> = (0..=n)
            .map(|k| still(k as f64 * dt, Vec3::new(0.0, radius * w * w, 0.0), Vec3::new(0.0, 0.0, w)))
            .collect();
        let mut s = NavState::new(
            0.0,
            Vec3::new(0.0, -radius, 0.0),
            Vec3::new(radius * w, 0.0, 0.0),
            RotationQuaternion::identity(),
            Mat9::zeros(),
        );
        for k in 1..=n {
            s = propagate_dr(&s, &imu[k], &imu[k - 1], dt).unwrap();
        }
        let th = w * dur;
        let truth = Vec3::new(radius * th.sin(), -radius * th.cos(), 0.0);
        assert!((s.p - truth).norm() < 1e-4, "error {}", (s.p - truth).norm());
        assert!((s.q.as_quaternion().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rates_keep_attitude() {
        let q = RotationQuaternion::from_rotation_vector(&Vec3::new(0.1, 0.2, 0.3));
        let s = NavState { q, ..origin(0.0) };
        let out = propagate_dr(&s, &still(0.1, Vec3::x(), Vec3::zeros()), &still(0.0, Vec3::x(), Vec3::zeros()), 0.1)
            .unwrap();
        assert_eq!(out.q, q);
    }

    #[test]
    fn dvl_correct_lambda_semantics() {
        let s = origin(0.0);
        let imu0 = still(0.0, Vec3::new(0.1, 0.0, 0.0), Vec3::zeros());
        let imu1 = still(0.1, Vec3::new(0.2, 0.0, 0.0), Vec3::zeros());
        let prop = propagate_dr(&s, &imu1, &imu0, 0.1).unwrap();
        let mut anchor = DvlAnchor::from_state(&s);
        let bad = DvlSample { t: 0.1, velocity: Vec3::new(5.0, 0.0, 0.0), healthy: false };
        let out = dvl_correct(&prop, &bad, &RigidTransform::identity(), &mut anchor);
        assert_eq!(out, prop);
        let truth_v = Vec3::new(0.003, 0.001, 0.0);
        let good = DvlSample { t: 0.1, velocity: truth_v, healthy: true };
        let out = dvl_correct(&prop, &good, &RigidTransform::identity(), &mut anchor);
        assert_eq!(out.v, truth_v);
        assert_eq!(anchor.t, 0.1);
    }

    #[test]
    fn eta_branches() {
        assert_eq!(adaptive_factor(0.05, 2.0), 0.0);
        assert_eq!(adaptive_factor(0.5, 2.0), 0.5);
        assert_eq!(adaptive_factor(4.0, 2.0), 1.0 / (4.0 + 1e-8) - 1.0);
        assert!((adaptive_factor(4.0, 2.0) + 0.75).abs() < 1e-8);
        assert_eq!(adaptive_factor(2.0, 2.0), 0.0);
    }

    #[test]
    fn sync_counts_and_gaps() {
        let same: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(sync_streams(&[&same, &same], 1e-9).len(), 10);
        let s100: Vec<f64> = (0..1000).map(|i| i as f64 * 0.01).collect();
        let s10: Vec<f64> = (0..100).map(|i| i as f64 * 0.1 + 0.003).collect();
        let s5: Vec<f64> = (0..50).map(|i| i as f64 * 0.2 + 0.007).collect();
        let tuples = sync_streams(&[&s100, &s10, &s5], 0.05);
        assert_eq!(tuples.len(), s5.len());
        assert!(tuples.windows(2).all(|w| s5[w[0][2]] < s5[w[1][2]]));
        let gappy: Vec<f64> = s100.iter().copied().filter(|&t| !(3.0..5.0).contains(&t)).collect();
        let tuples = sync_streams(&[&gappy, &s5], 0.05);
        for t in &tuples {
            assert!(!(3.06..4.94).contains(&s5[t[1]]));
        }
        assert!(sync_streams(&[&[], &s5], 0.05).is_empty());
    }

    #[test]
    fn sync_never_reuses_samples() {
        let anchor = [0.0, 0.1, 10.0];
        let other: Vec<f64> = std::iter::once(0.05).chain((2..=10).map(|i| i as f64 * 0.1)).collect();
        // Both 0.0 and 0.1 are nearest to 0.05; only the first gets it.
        let tuples = sync_streams(&[&anchor, &other], 0.06);
        assert_eq!(tuples, vec![vec![0, 0]]);
    }

    fn cv_traces(n: usize, dt: f64, v: Vec3) -> (Vec<ImuSample>, Vec<DvlSample>) {
        let imu = (0..n).map(|k| still(k as f64 * dt, Vec3::zeros(), Vec3::zeros())).collect();
        let dvl = (0..n)
            .step_by(10)
            .map(|k| DvlSample { t: k as f64 * dt, velocity: v, healthy: true })
            .collect();
        (imu, dvl)
    }

    #[test]
    fn noiseless_filter_tracks_truth() {
        let v = Vec3::new(0.003, -0.001, 0.0005);
        let (imu, dvl) = cv_traces(2001, 0.005, v);
        let init = NavState { v, ..origin(0.0) };
        for method in [Method::Ekf, Method::Aekf] {
            let run = run_fusion(&imu, &dvl, init, &FilterConfig::default(), method, None, 1e-4).unwrap();
            for s in &run.states {
                assert!((s.p - v * s.t).norm() < 1e-9);
                assert!((s.v - v).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn prediction_inflates_trace() {
        let mut s = origin(0.0);
        let cfg = FilterConfig::default();
        let imu: Vec<ImuSample> = (0..50).map(|k| still(k as f64 * 0.01, Vec3::x() * 0.01, Vec3::z() * 0.01)).collect();
        for k in 1..imu.len() {
            let next = ekf_step(&s, &imu[k], &imu[k - 1], None, &cfg).unwrap().state;
            assert!(next.cov.trace() >= s.cov.trace());
            s = next;
        }
    }

    #[test]
    fn singular_innovation_covariance() {
        let cfg = FilterConfig { r: Matrix3::zeros(), p0: Mat9::zeros(), ..FilterConfig::default() };
        let s = NavState { cov: Mat9::zeros(), ..origin(0.0) };
        let cfg = FilterConfig { q: Mat6::zeros(), ..cfg };
        let imu0 = still(0.0, Vec3::zeros(), Vec3::zeros());
        let imu1 = still(0.01, Vec3::zeros(), Vec3::zeros());
        let dvl = DvlSample { t: 0.01, velocity: Vec3::zeros(), healthy: true };
        let err = ekf_step(&s, &imu1, &imu0, Some(&dvl), &cfg).unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }));
    }

    #[test]
    fn matches_linear_kalman_filter() {
        // Zero acceleration and zero attitude uncertainty decouple attitude,
        // leaving a linear constant-velocity model in (p, v).
        let dt = 0.01;
        let n = 400;
        let mut cfg = FilterConfig::default();
        cfg.q = Mat6::from_diagonal(&SVector::<f64, 6>::new(2e-3, 2e-3, 2e-3, 0.0, 0.0, 0.0));
        cfg.r = Matrix3::identity() * 4e-4;
        let mut p0 = Mat9::zeros();
        for i in 0..6 {
            p0[(i, i)] = 1e-4;
        }
        cfg.p0 = p0;
        let imu: Vec<ImuSample> = (0..n).map(|k| still(k as f64 * dt, Vec3::zeros(), Vec3::zeros())).collect();
        let dvl: Vec<DvlSample> = (0..n)
            .step_by(5)
            .map(|k| {
                let t = k as f64 * dt;
                DvlSample { t, velocity: Vec3::new(0.01 + 0.002 * (t * 7.0).sin(), -0.004, 0.001 * t), healthy: true }
            })
            .collect();
        let init = NavState { v: Vec3::new(0.01, 0.0, 0.0), ..origin(0.0) };
        let run = run_fusion(&imu, &dvl, init, &cfg, Method::Ekf, None, 1e-6).unwrap();

        // Independent linear KF.
        type M6 = SMatrix<f64, 6, 6>;
        let mut x = SVector::<f64, 6>::new(0.0, 0.0, 0.0, 0.01, 0.0, 0.0);
        let mut p = M6::identity() * 1e-4;
        let mut a = M6::identity();
        let mut g = SMatrix::<f64, 6, 3>::zeros();
        for i in 0..3 {
            a[(i, i + 3)] = dt;
            g[(i, i)] = 0.5 * dt * dt;
            g[(i + 3, i)] = dt;
        }
        let q = Matrix3::identity() * 2e-3;
        let mut h = SMatrix::<f64, 3, 6>::zeros();
        for i in 0..3 {
            h[(i, i + 3)] = 1.0;
        }
        let r = Matrix3::identity() * 4e-4;
        let mut di = 1;
        for k in 1..n {
            x = a * x;
            p = a * p * a.transpose() + g * q * g.transpose();
            if di < dvl.len() && k % 5 == 0 {
                let z = dvl[di].velocity;
                di += 1;
                let s = h * p * h.transpose() + r;
                let kg = p * h.transpose() * s.try_inverse().unwrap();
                x += kg * (z - h * x);
                p = (M6::identity() - kg * h) * p;
                p = (p + p.transpose()) * 0.5;
            }
            let st = &run.states[k];
            assert!((st.p - Vec3::new(x[0], x[1], x[2])).norm() < 1e-9, "k = {k}");
            assert!((st.v - Vec3::new(x[3], x[4], x[5])).norm() < 1e-9, "k = {k}");
            let pv = st.cov.fixed_view::<6, 6>(0, 0).into_owned();
            assert!((pv - p).abs().max() < 1e-9);
        }
    }

    #[test]
    fn forced_zero_eta_is_bitwise_ekf() {
        let dt = 0.005;
        let imu: Vec<ImuSample> = (0..600)
            .map(|k| {
                let t = k as f64 * dt;
                still(t, Vec3::new(0.01 * t.sin(), 0.002, 0.0), Vec3::new(0.0, 0.0, 0.02 * t.cos()))
            })
            .collect();
        let dvl: Vec<DvlSample> = (0..600)
            .step_by(20)
            .map(|k| DvlSample { t: k as f64 * dt, velocity: Vec3::new(0.003, 0.0, 0.0), healthy: true })
            .collect();
        let cfg = FilterConfig::default();
        let ekf = run_fusion(&imu, &dvl, origin(0.0), &cfg, Method::Ekf, None, 1e-4).unwrap();
        let forced = run_fusion(&imu, &dvl, origin(0.0), &cfg, Method::Aekf, Some(Adaptation::ForcedEta(0.0)), 1e-4)
            .unwrap();
        assert_eq!(ekf.states, forced.states);
        let adaptive = run_fusion(&imu, &dvl, origin(0.0), &cfg, Method::Aekf, None, 1e-4).unwrap();
        assert_ne!(ekf.states, adaptive.states);
    }

    #[test]
    fn covariance_stays_symmetric_psd() {
        let dt = 0.005;
        let imu: Vec<ImuSample> = (0..800)
            .map(|k| {
                let t = k as f64 * dt;
                still(t, Vec3::new(0.05, -0.02 * t.cos(), 0.0), Vec3::new(0.01, 0.0, 0.03 * t.sin()))
            })
            .collect();
        let dvl: Vec<DvlSample> = (0..800)
            .step_by(20)
            .map(|k| DvlSample { t: k as f64 * dt, velocity: Vec3::new(0.01, 0.02, -0.01), healthy: true })
            .collect();
        let run = run_fusion(&imu, &dvl, origin(0.0), &FilterConfig::default(), Method::Aekf, None, 1e-4).unwrap();
        for s in &run.states {
            assert_eq!(s.cov, s.cov.transpose());
            assert!(s.cov.symmetric_eigenvalues().min() >= -1e-12);
            assert!(s.cov.diagonal().min() >= -1e-12);
        }
        assert!(!run.etas.is_empty());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("aekf".parse::<Method>().unwrap(), Method::Aekf);
        assert!("kalman".parse::<Method>().is_err());
    }

    #[test]
    fn metrics_fixture() {
        let est = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 2.0, 0.0)];
        let truth = [Vec3::zeros(), Vec3::zeros()];
        let m = axis_metrics(&est, &truth).unwrap();
        assert_eq!(m.mae, [1.0, 1.0, 0.0]);
        assert_eq!(m.me, [0.0, 1.0, 0.0]);
        assert_eq!(m.sd, [1.0, 1.0, 0.0]);
        assert_eq!(m.rmse[1], 2f64.sqrt());
    }

    #[test]
    fn attitude_propagation_matches_exponential() {
        let w = Vec3::new(0.02, -0.01, 0.05);
        let dt = 0.005;
        let mut s = origin(0.0);
        for k in 1..=2000 {
            s = propagate_dr(&s, &still(k as f64 * dt, Vec3::zeros(), w), &still((k - 1) as f64 * dt, Vec3::zeros(), w), dt)
                .unwrap();
        }
        let truth = exp_so3(&(w * 10.0));
        // First-order update: each step loses (|w| dt)³ / 12 of angle.
        assert!(s.q.to_rotation_matrix().angle_to(&truth) < 1e-8);
    }
}
