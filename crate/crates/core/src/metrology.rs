//! Measurements on reconstructed clouds: cylinder radius, axis and segment
//! length, and the height of surface bumps relative to the fitted wall.

use nalgebra::{DMatrix, DVector};

use crate::error::{degenerate, invalid, Error, Result};
use crate::geom::Vec3;

/// Result of a damped least-squares solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LmSolution {
    pub x: DVector<f64>,
    pub cost: f64,
    pub iterations: usize,
}

/// Levenberg–Marquardt with a central-difference Jacobian. `f` returns the
/// residual vector; the cost is half its squared norm.
pub fn levenberg_marquardt(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    x0: DVector<f64>,
    max_iter: usize,
) -> Result<LmSolution> {
    let n = x0.len();
    let mut x = x0;
    let mut r = f(&x);
    if !r.iter().all(|v| v.is_finite()) {
        return Err(invalid("residuals are not finite at the initial guess"));
    }
    let mut cost = 0.5 * r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut j = DMatrix::zeros(r.len(), n);
        for k in 0..n {
            let h = 1e-7 * x[k].abs().max(1e-3);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            j.set_column(k, &((f(&xp) - f(&xm)) / (2.0 * h)));
        }
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        if g.amax() < 1e-14 {
            break;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            let xn = &x + &step;
            let rn = f(&xn);
            let cn = 0.5 * rn.norm_squared();
            if cn.is_finite() && cn <= cost {
                let small = step.norm() < 1e-13 * (1.0 + x.norm());
                x = xn;
                r = rn;
                let improvement = cost - cn;
                cost = cn;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if small || improvement <= 1e-15 * cost.max(1e-300) {
                    return Ok(LmSolution { x, cost, iterations });
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    Ok(LmSolution { x, cost, iterations })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CylinderFit {
    /// Point on the axis at the middle of the inlier extent.
    pub center: Vec3,
    /// Unit axis direction.
    pub axis: Vec3,
    pub radius: f64,
    /// RMS radial residual of the inliers, meters.
    pub rms: f64,
    pub inliers: Vec<usize>,
    /// Axial coordinate range of the inliers, relative to `center`.
    pub extent: (f64, f64),
}

impl CylinderFit {
    pub fn length(&self) -> f64 {
        self.extent.1 - self.extent.0
    }

    /// Signed radial residual of `p`.
    pub fn residual(&self, p: &Vec3) -> f64 {
        radial_distance(p, &self.center, &self.axis) - self.radius
    }

    /// Axial coordinate and azimuth of `p` in a frame whose reference
    /// direction is `reference` projected off the axis.
    pub fn cylindrical(&self, p: &Vec3, reference: &Vec3) -> (f64, f64) {
        let (e1, e2) = frame_about(&self.axis, reference);
        let d = p - self.center;
        (d.dot(&self.axis), d.dot(&e2).atan2(d.dot(&e1)))
    }
}

fn radial_distance(p: &Vec3, c: &Vec3, axis: &Vec3) -> f64 {
    let d = p - c;
    (d - axis * d.dot(axis)).norm()
}

/// Orthonormal pair perpendicular to `axis`, the first along `hint`.
fn frame_about(axis: &Vec3, hint: &Vec3) -> (Vec3, Vec3) {
    let mut e1 = hint - axis * hint.dot(axis);
    if e1.norm() < 1e-9 {
        let alt = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        e1 = alt - axis * alt.dot(axis);
    }
    let e1 = e1.normalize();
    (e1, axis.cross(&e1))
}

/// Algebraic circle fit in 2-D: center and radius.
fn kasa_circle(pts: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    let mut a = DMatrix::zeros(pts.len(), 3);
    let mut b = DVector::zeros(pts.len());
    for (i, (x, y)) in pts.iter().enumerate() {
        a[(i, 0)] = *x;
        a[(i, 1)] = *y;
        a[(i, 2)] = 1.0;
        b[i] = x * x + y * y;
    }
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| degenerate(format!("circle fit failed: {e}")))?;
    let (cx, cy) = (sol[0] / 2.0, sol[1] / 2.0);
    let r2 = sol[2] + cx * cx + cy * cy;
    if !(r2 > 0.0) {
        return Err(degenerate("points do not determine a circle"));
    }
    Ok((cx, cy, r2.sqrt()))
}

fn circle_through(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> Option<(f64, f64, f64)> {
    let d = 2.0 * (a.0 * (b.1 - c.1) + b.0 * (c.1 - a.1) + c.0 * (a.1 - b.1));
    if d.abs() < 1e-15 {
        return None;
    }
    let (a2, b2, c2) = (a.0 * a.0 + a.1 * a.1, b.0 * b.0 + b.1 * b.1, c.0 * c.0 + c.1 * c.1);
    let ux = (a2 * (b.1 - c.1) + b2 * (c.1 - a.1) + c2 * (a.1 - b.1)) / d;
    let uy = (a2 * (c.0 - b.0) + b2 * (a.0 - c.0) + c2 * (b.0 - a.0)) / d;
    Some((ux, uy, ((a.0 - ux).powi(2) + (a.1 - uy).powi(2)).sqrt()))
}

/// Seeded three-point sampling, then an algebraic fit on the best support.
fn robust_circle(pts: &[(f64, f64)], trials: usize, tol: f64) -> Result<(f64, f64, f64)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5EED);
    let mut best: Option<Vec<(f64, f64)>> = None;
    for _ in 0..trials {
        let pick = |rng: &mut rand_chacha::ChaCha8Rng| pts[rng.random_range(0..pts.len())];
        let Some((cx, cy, r)) = circle_through(pick(&mut rng), pick(&mut rng), pick(&mut rng)) else { continue };
        let support: Vec<(f64, f64)> =
            pts.iter().cloned().filter(|(x, y)| (((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - r).abs() <= tol).collect();
        if best.as_ref().map_or(true, |b| support.len() > b.len()) {
            best = Some(support);
        }
    }
    match best {
        Some(b) if b.len() >= 3 => kasa_circle(&b),
        _ => kasa_circle(pts),
    }
}

fn principal_axis(points: &[Vec3]) -> Vec3 {
    let c = points.iter().sum::<Vec3>() / points.len() as f64;
    let mut s = nalgebra::Matrix3::zeros();
    for p in points {
        let d = p - c;
        s += d * d.transpose();
    }
    let eig = s.symmetric_eigen();
    let i = eig.eigenvalues.imax();
    eig.eigenvectors.column(i).into_owned()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylinderConfig {
    /// Initial axis direction; principal component of the points if absent.
    pub axis_hint: Option<Vec3>,
    /// Trimming passes after the first fit.
    pub trim_passes: usize,
    /// Inlier gate in robust standard deviations.
    pub trim_sigmas: f64,
    /// Inlier gate never tighter than this, meters.
    pub trim_floor: f64,
    /// Circle-sampling trials for the initial cross-section.
    pub ransac_trials: usize,
    /// Inlier band of the sampled circles, meters.
    pub ransac_tol: f64,
}

impl Default for CylinderConfig {
    fn default() -> Self {
        Self { axis_hint: None, trim_passes: 3, trim_sigmas: 3.0, trim_floor: 5e-4, ransac_trials: 300, ransac_tol: 2e-3 }
    }
}

fn refine_cylinder(points: &[Vec3], idx: &[usize], center: Vec3, axis: Vec3, radius: f64) -> Result<(Vec3, Vec3, f64)> {
    let (e1, e2) = frame_about(&axis, &Vec3::x());
    let unpack = |x: &DVector<f64>| {
        let a = (axis + e1 * x[0] + e2 * x[1]).normalize();
        let c = center + e1 * x[2] + e2 * x[3];
        (c, a, x[4])
    };
    let residuals = |x: &DVector<f64>| {
        let (c, a, r) = unpack(x);
        DVector::from_iterator(idx.len(), idx.iter().map(|&i| radial_distance(&points[i], &c, &a) - r))
    };
    let sol = levenberg_marquardt(residuals, DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, radius]), 100)?;
    Ok(unpack(&sol.x))
}

/// Robust cylinder fit: principal axis and circle initialisation, then
/// nonlinear refinement with residual trimming.
pub fn fit_cylinder(points: &[Vec3], cfg: &CylinderConfig) -> Result<CylinderFit> {
    if points.len() < 6 {
        return Err(invalid("cylinder fit needs at least 6 points"));
    }
    let mut axis = match cfg.axis_hint {
        Some(h) if h.norm() > 0.0 => h.normalize(),
        Some(_) => return Err(invalid("axis hint must be nonzero")),
        None => principal_axis(points),
    };
    let (e1, e2) = frame_about(&axis, &Vec3::x());
    let flat: Vec<(f64, f64)> = points.iter().map(|p| (p.dot(&e1), p.dot(&e2))).collect();
    let (cx, cy, r0) = robust_circle(&flat, cfg.ransac_trials, cfg.ransac_tol)?;
    let mut center = e1 * cx + e2 * cy;
    let mut radius = r0;
    let mut inliers: Vec<usize> = (0..points.len())
        .filter(|&i| (radial_distance(&points[i], &center, &axis) - radius).abs() <= 3.0 * cfg.ransac_tol)
        .collect();
    if inliers.len() < 6 {
        inliers = (0..points.len()).collect();
    }
    for pass in 0..=cfg.trim_passes {
        let (c, a, r) = refine_cylinder(points, &inliers, center, axis, radius)?;
        center = c;
        axis = a;
        radius = r.abs();
        if pass == cfg.trim_passes {
            break;
        }
        let res: Vec<f64> = points.iter().map(|p| radial_distance(p, &center, &axis) - radius).collect();
        let mut abs: Vec<f64> = inliers.iter().map(|&i| res[i].abs()).collect();
        abs.sort_by(f64::total_cmp);
        let mad = abs[abs.len() / 2];
        let gate = (cfg.trim_sigmas * 1.4826 * mad).max(cfg.trim_floor);
        let next: Vec<usize> = (0..points.len()).filter(|&i| res[i].abs() <= gate).collect();
        if next.len() < 6 {
            return Err(Error::Degenerate("too few inliers after trimming".into()));
        }
        if next == inliers {
            break;
        }
        inliers = next;
    }
    let along: Vec<f64> = inliers.iter().map(|&i| (points[i] - center).dot(&axis)).collect();
    let lo = along.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = along.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mid = 0.5 * (lo + hi);
    let center = center + axis * mid;
    let rms = (inliers.iter().map(|&i| (radial_distance(&points[i], &center, &axis) - radius).powi(2)).sum::<f64>()
        / inliers.len() as f64)
        .sqrt();
    Ok(CylinderFit { center, axis, radius, rms, inliers, extent: (lo - mid, hi - mid) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpFit {
    /// Signed peak radial height, meters: positive for attachments.
    pub height: f64,
    pub axial: f64,
    pub azimuth: f64,
    /// Gaussian spread, meters of arc.
    pub sigma: f64,
    /// Residual wall offset under the bump.
    pub offset: f64,
    pub points: usize,
    pub rms: f64,
}

/// Fits `offset + h exp(-(s_arc² + s_axial²)/(2σ²))` to the radial residuals
/// of the points within `window` (meters, arc and axial) of the hint.
pub fn measure_bump(
    points: &[Vec3],
    cylinder: &CylinderFit,
    reference: &Vec3,
    hint: (f64, f64),
    window: f64,
) -> Result<BumpFit> {
    if !(window > 0.0) {
        return Err(invalid("bump window must be positive"));
    }
    let r = cylinder.radius;
    let mut samples = Vec::new();
    for p in points {
        let (y, phi) = cylinder.cylindrical(p, reference);
        let arc = r * wrap(phi - hint.1);
        let dy = y - hint.0;
        if arc.abs() <= window && dy.abs() <= window {
            samples.push((y, phi, cylinder.residual(p)));
        }
    }
    if samples.len() < 10 {
        return Err(degenerate(format!("only {} points near the bump", samples.len())));
    }
    // Seed from the largest residual magnitude in the window.
    let peak = samples.iter().cloned().max_by(|a, b| a.2.abs().total_cmp(&b.2.abs())).expect("nonempty");
    let model = |x: &DVector<f64>, y: f64, phi: f64| {
        let arc = r * wrap(phi - x[2]);
        let dy = y - x[1];
        x[4] + x[0] * (-(arc * arc + dy * dy) / (2.0 * x[3] * x[3])).exp()
    };
    let residuals = |x: &DVector<f64>| {
        DVector::from_iterator(samples.len(), samples.iter().map(|(y, phi, d)| model(x, *y, *phi) - d))
    };
    let x0 = DVector::from_vec(vec![peak.2, peak.0, peak.1, window / 3.0, 0.0]);
    let sol = levenberg_marquardt(residuals, x0, 200)?;
    let x = sol.x;
    Ok(BumpFit {
        height: x[0],
        axial: x[1],
        azimuth: wrap(x[2]),
        sigma: x[3].abs(),
        offset: x[4],
        points: samples.len(),
        rms: (2.0 * sol.cost / samples.len() as f64).sqrt(),
    })
}

fn wrap(a: f64) -> f64 {
    let t = std::f64::consts::TAU;
    let w = (a + std::f64::consts::PI).rem_euclid(t) - std::f64::consts::PI;
    if w <= -std::f64::consts::PI {
        w + t
    } else {
        w
    }
}

/// `|measured − truth| / |truth|`.
pub fn relative_error(measured: f64, truth: f64) -> f64 {
    (measured - truth).abs() / truth.abs()
}
