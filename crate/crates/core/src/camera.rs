//! Pinhole intrinsics, Brown–Conrady distortion and its iterative inverse,
//! and the flat-port refraction model.

use nalgebra::{Matrix2, Vector2};

use crate::error::{invalid, Error, Result};

pub type Vec2 = Vector2<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub skew: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, skew: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || ![skew, cx, cy].iter().all(|v| v.is_finite()) {
            return Err(invalid("intrinsics need fx > 0, fy > 0 and finite entries"));
        }
        Ok(Self { fx, fy, skew, cx, cy })
    }

    pub fn pixel_to_normalized(&self, p: &Vec2) -> Vec2 {
        let y = (p.y - self.cy) / self.fy;
        let x = (p.x - self.cx - self.skew * y) / self.fx;
        Vec2::new(x, y)
    }

    pub fn normalized_to_pixel(&self, n: &Vec2) -> Vec2 {
        Vec2::new(
            self.fx * n.x + self.skew * n.y + self.cx,
            self.fy * n.y + self.cy,
        )
    }
}

/// Radial `k1, k2, k3` and tangential `l1, l2` coefficients on normalized
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DistortionCoeffs {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub l1: f64,
    pub l2: f64,
}

impl DistortionCoeffs {
    pub fn new(k1: f64, k2: f64, k3: f64, l1: f64, l2: f64) -> Result<Self> {
        if ![k1, k2, k3, l1, l2].iter().all(|v| v.is_finite()) {
            return Err(invalid("distortion coefficients must be finite"));
        }
        Ok(Self { k1, k2, k3, l1, l2 })
    }

    /// From the usual `[k1, k2, p1, p2, k3]` ordering.
    pub fn from_opencv_order(c: [f64; 5]) -> Result<Self> {
        Self::new(c[0], c[1], c[4], c[2], c[3])
    }

    pub fn is_zero(&self) -> bool {
        [self.k1, self.k2, self.k3, self.l1, self.l2]
            .iter()
            .all(|&v| v == 0.0)
    }
}

pub fn distort(p: &Vec2, c: &DistortionCoeffs) -> Vec2 {
    let (x, y) = (p.x, p.y);
    let r2 = x * x + y * y;
    let radial = 1.0 + r2 * (c.k1 + r2 * (c.k2 + r2 * c.k3));
    Vec2::new(
        x * radial + 2.0 * c.l1 * x * y + c.l2 * (r2 + 2.0 * x * x),
        y * radial + 2.0 * c.l2 * x * y + c.l1 * (r2 + 2.0 * y * y),
    )
}

/// Analytic Jacobian of [`distort`].
pub fn distort_jacobian(p: &Vec2, c: &DistortionCoeffs) -> Matrix2<f64> {
    let (x, y) = (p.x, p.y);
    let r2 = x * x + y * y;
    let radial = 1.0 + r2 * (c.k1 + r2 * (c.k2 + r2 * c.k3));
    // d(radial)/d(r²)
    let dr = c.k1 + r2 * (2.0 * c.k2 + 3.0 * r2 * c.k3);
    let dxdx = radial + 2.0 * x * x * dr + 2.0 * c.l1 * y + 6.0 * c.l2 * x;
    let dxdy = 2.0 * x * y * dr + 2.0 * c.l1 * x + 2.0 * c.l2 * y;
    let dydx = 2.0 * x * y * dr + 2.0 * c.l2 * y + 2.0 * c.l1 * x;
    let dydy = radial + 2.0 * y * y * dr + 2.0 * c.l2 * x + 6.0 * c.l1 * y;
    Matrix2::new(dxdx, dxdy, dydx, dydy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UndistortConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for UndistortConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Undistorted {
    pub point: Vec2,
    /// Number of forward-distortion evaluations.
    pub iterations: usize,
    pub converged: bool,
}

/// Inverts [`distort`] by stepping away from the observed point.
///
/// Each step treats the current estimate `p_m` as undistorted, measures the
/// displacement `p_m − D(p_m)` it would suffer and places the next estimate at
/// the observation moved by that displacement. The loop stops once
/// `‖D(p_m) − p_obs‖ ≤ tol`.
pub fn undistort_fdc(
    p_dist: &Vec2,
    c: &DistortionCoeffs,
    max_iter: usize,
    tol: f64,
) -> Result<Undistorted> {
    if max_iter < 1 || !(tol > 0.0) {
        return Err(invalid("undistort_fdc needs max_iter >= 1 and tol > 0"));
    }
    if !(p_dist.x.is_finite() && p_dist.y.is_finite()) {
        return Err(invalid("undistort_fdc: non-finite point"));
    }
    let mut p = *p_dist;
    let mut last = f64::INFINITY;
    let mut growth = 0;
    for m in 1..=max_iter {
        let d = distort(&p, c);
        let residual = (d - p_dist).norm();
        if residual <= tol {
            return Ok(Undistorted { point: p, iterations: m, converged: true });
        }
        if residual > last {
            growth += 1;
            if growth >= 3 {
                return Err(Error::Divergence { x: p_dist.x, y: p_dist.y });
            }
        } else {
            growth = 0;
        }
        last = residual;
        p = p_dist + (p - d);
        if !(p.x.is_finite() && p.y.is_finite()) {
            return Err(Error::Divergence { x: p_dist.x, y: p_dist.y });
        }
    }
    Ok(Undistorted { point: p, iterations: max_iter, converged: false })
}

/// Newton inversion of [`distort`] seeded at the observation. Converges
/// quadratically where the fixed-point scheme crawls; `None` if the
/// Jacobian is singular or `max_iter` is exhausted.
pub fn undistort_newton(p_dist: &Vec2, c: &DistortionCoeffs, max_iter: usize, tol: f64) -> Option<Vec2> {
    let mut p = *p_dist;
    for _ in 0..max_iter {
        let r = distort(&p, c) - p_dist;
        if r.norm() <= tol {
            return Some(p);
        }
        p -= distort_jacobian(&p, c).try_inverse()? * r;
        if !(p.x.is_finite() && p.y.is_finite()) {
            return None;
        }
    }
    None
}

/// Pixel → undistorted normalized coordinates.
pub fn undistort_pixel(
    p_px: &Vec2,
    k: &Intrinsics,
    c: &DistortionCoeffs,
    cfg: &UndistortConfig,
) -> Result<Undistorted> {
    undistort_fdc(&k.pixel_to_normalized(p_px), c, cfg.max_iter, cfg.tol)
}

/// Undistorted normalized coordinates → distorted pixel.
pub fn project_normalized(n: &Vec2, k: &Intrinsics, c: &DistortionCoeffs) -> Vec2 {
    k.normalized_to_pixel(&distort(n, c))
}

/// How the virtual-center distance is formed from the in-water angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RefractionModel {
    /// `d0' = tanδ (d0 tanα + d1 tanβ)`.
    #[default]
    AsPrinted,
    /// `d0' = (d0 tanα + d1 tanβ) / tanδ`: the ray's lateral offset at the
    /// outer glass surface traced back along the in-water direction.
    CotangentInWater,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefractionGeometry {
    pub d0: f64,
    pub d1: f64,
    pub n_air: f64,
    pub n_glass: f64,
    pub n_water: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
}

/// Snell consistency tolerance on `n sinθ`.
const SNELL_TOL: f64 = 1e-9;

impl RefractionGeometry {
    /// Builds the geometry for an in-air ray angle `alpha`, deriving the
    /// in-glass and in-water angles from Snell's law.
    pub fn from_incidence(
        d0: f64,
        d1: f64,
        n_air: f64,
        n_glass: f64,
        n_water: f64,
        alpha: f64,
    ) -> Result<Self> {
        let s = n_air * alpha.sin();
        let g = Self {
            d0,
            d1,
            n_air,
            n_glass,
            n_water,
            alpha,
            beta: (s / n_glass).asin(),
            delta: (s / n_water).asin(),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.d0, self.d1, self.n_air, self.n_glass, self.n_water, self.alpha, self.beta,
            self.delta,
        ];
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(invalid("refraction geometry has non-finite fields"));
        }
        if self.d0 < 0.0 || self.d1 < 0.0 {
            return Err(invalid("refraction distances must be non-negative"));
        }
        if !(self.n_air > 0.0 && self.n_water > self.n_air && self.n_glass > 0.0) {
            return Err(invalid("refraction indices need 0 < n_air < n_water"));
        }
        check_angles(self.alpha, self.beta, self.delta)?;
        let a = self.n_air * self.alpha.sin();
        let b = self.n_glass * self.beta.sin();
        let d = self.n_water * self.delta.sin();
        if (a - b).abs() > SNELL_TOL || (a - d).abs() > SNELL_TOL {
            return Err(invalid("refraction angles violate Snell's law"));
        }
        Ok(())
    }
}

fn check_angles(alpha: f64, beta: f64, delta: f64) -> Result<()> {
    use std::f64::consts::FRAC_PI_2;
    for (name, v) in [("alpha", alpha), ("beta", beta), ("delta", delta)] {
        if !(v > 0.0 && v < FRAC_PI_2) {
            return Err(invalid(format!("{name} = {v} outside (0, pi/2)")));
        }
    }
    Ok(())
}

/// `(d0', Δd)` for the given angles, without any Snell check.
///
/// Angles must lie in `(0, π/2)`.
pub fn refraction_error_angles(
    d0: f64,
    d1: f64,
    alpha: f64,
    beta: f64,
    delta: f64,
    model: RefractionModel,
) -> Result<(f64, f64)> {
    check_angles(alpha, beta, delta)?;
    let lateral = d0 * alpha.tan() + d1 * beta.tan();
    let virtual_d0 = match model {
        RefractionModel::AsPrinted => delta.tan() * lateral,
        RefractionModel::CotangentInWater => lateral / delta.tan(),
    };
    Ok((virtual_d0, (d0 + d1) - virtual_d0))
}

pub fn refraction_error(g: &RefractionGeometry, model: RefractionModel) -> Result<(f64, f64)> {
    g.validate()?;
    refraction_error_angles(g.d0, g.d1, g.alpha, g.beta, g.delta, model)
}

/// Minimizes a unimodal-ish scalar function on `[lo, hi]`: a coarse grid picks
/// the best bracket, golden-section search refines it.
pub fn minimize_scalar(f: impl Fn(f64) -> f64, lo: f64, hi: f64, grid: usize) -> (f64, f64) {
    let grid = grid.max(2);
    let h = (hi - lo) / grid as f64;
    let mut best = (lo, f(lo));
    for i in 1..=grid {
        let x = lo + h * i as f64;
        let fx = f(x);
        if fx < best.1 {
            best = (x, fx);
        }
    }
    let (mut a, mut b) = ((best.0 - h).max(lo), (best.0 + h).min(hi));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > 1e-12 * (1.0 + a.abs() + b.abs()) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    if fx <= best.1 {
        (x, fx)
    } else {
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefractionIndices {
    pub n_air: f64,
    pub n_glass: f64,
    pub n_water: f64,
}

impl Default for RefractionIndices {
    fn default() -> Self {
        Self { n_air: 1.0, n_glass: 1.458, n_water: 1.333 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct D0Optimum {
    pub d0: f64,
    /// `Σ (Δd − mean Δd)²` at the optimum, m².
    pub cost: f64,
    /// Set when all rays share one angle and every `d0` is equally good.
    pub degenerate: bool,
}

/// Lens-to-glass distance minimizing the spread of `Δd` over a fan of in-air
/// ray angles.
pub fn optimize_d0(
    ray_angles: &[f64],
    d1: f64,
    n: &RefractionIndices,
    d0_range: (f64, f64),
    model: RefractionModel,
) -> Result<D0Optimum> {
    if ray_angles.is_empty() {
        return Err(invalid("optimize_d0: empty ray set"));
    }
    let (lo, hi) = d0_range;
    if !(lo >= 0.0 && hi > lo) {
        return Err(invalid("optimize_d0: d0_range must satisfy 0 <= lo < hi"));
    }
    // Validate every ray once; the cost below cannot fail afterwards.
    let geoms = ray_angles
        .iter()
        .map(|&a| RefractionGeometry::from_incidence(lo, d1, n.n_air, n.n_glass, n.n_water, a))
        .collect::<Result<Vec<_>>>()?;
    let first = ray_angles[0];
    if ray_angles.iter().all(|&a| a == first) {
        return Ok(D0Optimum { d0: 0.5 * (lo + hi), cost: 0.0, degenerate: true });
    }
    let cost = |d0: f64| {
        let dd: Vec<f64> = geoms
            .iter()
            .map(|g| {
                refraction_error_angles(d0, g.d1, g.alpha, g.beta, g.delta, model)
                    .map(|r| r.1)
                    .unwrap_or(f64::NAN)
            })
            .collect();
        let mean = dd.iter().sum::<f64>() / dd.len() as f64;
        dd.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
    };
    let (d0, c) = minimize_scalar(cost, lo, hi, 200);
    Ok(D0Optimum { d0, cost: c, degenerate: false })
}
