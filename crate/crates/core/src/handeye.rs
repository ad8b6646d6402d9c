//! Camera–DVL extrinsic calibration from paired relative motions.
//!
//! The unknown `X` satisfies `X · T_D = T_C · X` for every pair. It is found by
//! Levenberg–Marquardt on the whitened residuals `log(T_D⁻¹ X⁻¹ T_C X)`,
//! perturbing `X` on the right in its tangent space.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix6, Vector6};

use crate::error::{invalid, Error, Result};
use crate::geom::{exp_se3, log_se3, orthonormalize, RigidTransform, RotationMatrix, Twist, Vec3};

/// Default residual noise: 5 mm on translation.
pub const DEFAULT_SIGMA_T: f64 = 5e-3;
/// Default residual noise: 0.5° on rotation, radians.
pub const DEFAULT_SIGMA_R: f64 = 0.5 * std::f64::consts::PI / 180.0;

/// Composite rotations closer than this to π sit on the log branch cut.
const BRANCH_MARGIN: f64 = 1e-6;

pub fn default_covariance() -> Matrix6<f64> {
    let t = DEFAULT_SIGMA_T * DEFAULT_SIGMA_T;
    let r = DEFAULT_SIGMA_R * DEFAULT_SIGMA_R;
    Matrix6::from_diagonal(&Vector6::new(t, t, t, r, r, r))
}

#[derive(Debug, Clone)]
pub struct PosePair {
    /// Camera motion from frame `i−1` to `i`.
    pub t_c: RigidTransform,
    /// DVL motion over the same interval.
    pub t_d: RigidTransform,
    pub covariance: Matrix6<f64>,
    /// Lower-triangular inverse factor `L⁻¹` with `Σ = L Lᵀ`.
    whitening: Matrix6<f64>,
}

impl PosePair {
    pub fn new(t_c: RigidTransform, t_d: RigidTransform, covariance: Matrix6<f64>) -> Result<Self> {
        if (covariance - covariance.transpose()).abs().max() > 1e-12 * covariance.abs().max() {
            return Err(invalid("pose-pair covariance is not symmetric"));
        }
        let chol = Cholesky::new(covariance)
            .ok_or_else(|| invalid("pose-pair covariance is not positive definite"))?;
        let whitening = chol
            .l()
            .try_inverse()
            .ok_or_else(|| invalid("pose-pair covariance is singular"))?;
        Ok(Self { t_c, t_d, covariance, whitening })
    }

    pub fn with_default_covariance(t_c: RigidTransform, t_d: RigidTransform) -> Self {
        Self::new(t_c, t_d, default_covariance()).expect("default covariance is SPD")
    }

    fn whiten(&self, r: &Vector6<f64>) -> Vector6<f64> {
        self.whitening * r
    }
}

/// `X⁻¹ · T_C · X`.
pub fn predict_dvl_motion(x: &RigidTransform, t_c: &RigidTransform) -> RigidTransform {
    x.inverse() * *t_c * *x
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub twist: Twist,
    /// The composed rotation is within a hair of π, where the log is
    /// discontinuous.
    pub near_branch: bool,
}

pub fn residual(x: &RigidTransform, pair: &PosePair) -> Result<Residual> {
    let delta = pair.t_d.inverse() * predict_dvl_motion(x, &pair.t_c);
    let twist = log_se3(&delta)?;
    let near_branch = twist.phi.norm() > std::f64::consts::PI - BRANCH_MARGIN;
    Ok(Residual { twist, near_branch })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub max_iter: usize,
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub lambda_max: f64,
    pub grad_tol: f64,
    pub step_tol: f64,
    /// Central finite-difference step on the tangent space.
    pub fd_step: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            lambda_max: 1e16,
            grad_tol: 1e-10,
            step_tol: 1e-12,
            fd_step: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    Step,
    MaxIterations,
    DampingOverflow,
}

#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub x: RigidTransform,
    pub final_cost: f64,
    /// Accepted plus rejected LM iterations.
    pub iterations: usize,
    /// `‖r_i‖` (unwhitened) at the solution.
    pub residual_norms: Vec<f64>,
    /// Cost after the initial guess and after every accepted step.
    pub cost_trace: Vec<f64>,
    pub termination: Termination,
    /// Orthogonality error of the last raw iterate before projection.
    pub raw_orthogonality_error: f64,
    /// Some residual touched the log branch cut.
    pub branch_warning: bool,
}

/// Rejects motion sets whose rotation axes are all parallel within 1°.
pub fn check_observability(pairs: &[PosePair]) -> Result<()> {
    if pairs.len() < 3 {
        return Err(Error::Observability(format!(
            "need at least 3 pose pairs, got {}",
            pairs.len()
        )));
    }
    let axes: Vec<Vec3> = pairs
        .iter()
        .filter_map(|p| {
            let phi = crate::geom::log_so3(&p.t_c.rotation);
            (phi.norm() > 1e-6).then(|| phi.normalize())
        })
        .collect();
    let cos_limit = 1f64.to_radians().cos();
    let spread = axes
        .iter()
        .enumerate()
        .any(|(i, a)| axes[i + 1..].iter().any(|b| a.dot(b).abs() < cos_limit));
    if !spread {
        return Err(Error::Observability(
            "rotation axes of the camera motions are parallel within 1 degree".into(),
        ));
    }
    Ok(())
}

struct Problem<'a> {
    pairs: &'a [PosePair],
}

impl Problem<'_> {
    fn residuals(&self, x: &RigidTransform) -> Result<(DVector<f64>, bool)> {
        let mut out = DVector::zeros(6 * self.pairs.len());
        let mut warn = false;
        for (i, pair) in self.pairs.iter().enumerate() {
            let r = residual(x, pair)?;
            warn |= r.near_branch;
            out.fixed_rows_mut::<6>(6 * i)
                .copy_from(&pair.whiten(&r.twist.to_vector()));
        }
        Ok((out, warn))
    }

    fn jacobian(&self, x: &RigidTransform, h: f64) -> Result<DMatrix<f64>> {
        let mut jac = DMatrix::zeros(6 * self.pairs.len(), 6);
        for k in 0..6 {
            let mut e = Vector6::zeros();
            e[k] = h;
            let plus = *x * exp_se3(&Twist::from_vector(&e));
            let minus = *x * exp_se3(&Twist::from_vector(&-e));
            let (rp, _) = self.residuals(&plus)?;
            let (rm, _) = self.residuals(&minus)?;
            jac.set_column(k, &((rp - rm) / (2.0 * h)));
        }
        Ok(jac)
    }
}

pub fn calibrate(pairs: &[PosePair], x0: &RigidTransform, cfg: &LmConfig) -> Result<CalibrationResult> {
    if cfg.max_iter < 1 || !(cfg.fd_step > 0.0) || !(cfg.lambda0 > 0.0) {
        return Err(invalid("invalid LM configuration"));
    }
    check_observability(pairs)?;
    let problem = Problem { pairs };
    let mut x = *x0;
    let (mut r, mut warn) = problem.residuals(&x)?;
    let mut cost = r.norm_squared();
    let mut cost_trace = vec![cost];
    let mut lambda = cfg.lambda0;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let mut jac = problem.jacobian(&x, cfg.fd_step)?;
    while iterations < cfg.max_iter {
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        if grad.amax() < cfg.grad_tol {
            termination = Termination::Gradient;
            break;
        }
        iterations += 1;
        let mut damped = jtj.clone();
        for k in 0..6 {
            damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
        }
        let step = damped
            .cholesky()
            .map(|c| c.solve(&(-&grad)))
            .ok_or_else(|| Error::Numerical {
                reason: "LM normal equations are not positive definite".into(),
                condition: f64::INFINITY,
            })?;
        if step.norm() < cfg.step_tol {
            termination = Termination::Step;
            break;
        }
        let delta = Vector6::from_iterator(step.iter().copied());
        let candidate = x * exp_se3(&Twist::from_vector(&delta));
        let (r_new, warn_new) = problem.residuals(&candidate)?;
        let cost_new = r_new.norm_squared();
        if cost_new < cost {
            x = candidate;
            r = r_new;
            warn = warn_new;
            cost = cost_new;
            cost_trace.push(cost);
            lambda = (lambda / cfg.lambda_down).max(1e-20);
            jac = problem.jacobian(&x, cfg.fd_step)?;
        } else {
            lambda *= cfg.lambda_up;
            if lambda > cfg.lambda_max {
                termination = Termination::DampingOverflow;
                break;
            }
        }
    }
    let raw_orthogonality_error = x.rotation.orthogonality_error();
    let rotation: RotationMatrix = orthonormalize(x.rotation.matrix())?;
    let x = RigidTransform::new(rotation, x.translation);
    let mut residual_norms = Vec::with_capacity(pairs.len());
    let mut final_cost = 0.0;
    for pair in pairs {
        let res = residual(&x, pair)?;
        warn |= res.near_branch;
        residual_norms.push(res.twist.norm());
        final_cost += pair.whiten(&res.twist.to_vector()).norm_squared();
    }
    Ok(CalibrationResult {
        x,
        final_cost,
        iterations,
        residual_norms,
        cost_trace,
        termination,
        raw_orthogonality_error,
        branch_warning: warn,
    })
}

/// Relative motions `T_{i−1}⁻¹ T_i` between consecutive absolute poses.
pub fn relative_motions(poses: &[RigidTransform]) -> Vec<RigidTransform> {
    poses.windows(2).map(|w| w[0].inverse() * w[1]).collect()
}

/// Dead-reckons DVL poses from body-frame velocities and the attitude of the
/// DVL frame, integrating the world-frame velocity with the trapezoid rule.
pub fn dead_reckon_dvl(
    times: &[f64],
    velocities: &[Vec3],
    attitudes: &[RotationMatrix],
) -> Result<Vec<RigidTransform>> {
    if times.len() != velocities.len() || times.len() != attitudes.len() {
        return Err(invalid("dead_reckon_dvl: mismatched input lengths"));
    }
    let mut out = Vec::with_capacity(times.len());
    let mut p = Vec3::zeros();
    for i in 0..times.len() {
        if i > 0 {
            let dt = times[i] - times[i - 1];
            if !(dt > 0.0) {
                return Err(invalid("dead_reckon_dvl: timestamps must increase"));
            }
            let v0 = attitudes[i - 1].apply(&velocities[i - 1]);
            let v1 = attitudes[i].apply(&velocities[i]);
            p += 0.5 * (v0 + v1) * dt;
        }
        out.push(RigidTransform::new(attitudes[i], p));
    }
    Ok(out)
}

/// Builds pose pairs from synchronized camera and DVL trajectories.
pub fn pairs_from_trajectories(
    camera: &[RigidTransform],
    dvl: &[RigidTransform],
    covariance: Matrix6<f64>,
) -> Result<Vec<PosePair>> {
    if camera.len() != dvl.len() {
        return Err(invalid("camera and DVL trajectories differ in length"));
    }
    relative_motions(camera)
        .into_iter()
        .zip(relative_motions(dvl))
        .map(|(c, d)| PosePair::new(c, d, covariance))
        .collect()
}
