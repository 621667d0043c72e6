//! Generic radial fisheye camera model.
//!
//! The radial profile maps the incidence angle θ (between an incoming ray and
//! the principal axis) to an image-plane radius through a five-term odd
//! polynomial, `R(θ) = k1·θ + k2·θ³ + k3·θ⁵ + k4·θ⁷ + k5·θ⁹`. Together with
//! per-axis pixel scales `(m_u, m_v)` and the distortion center `(u0, v0)`
//! this covers equidistant, stereographic-like, and mixed barrel profiles.
//! The target perspective view is described by a [`PinholeSpec`], whose
//! rectilinear profile is `f·tanθ`.
//!
//! The polynomial is not globally monotone for arbitrary coefficients, so
//! every model carries a [`ValidityReport`] over a declared θ range; point
//! mappings reject inputs outside the validated range instead of silently
//! extrapolating.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of scalar model parameters: `k1..k5, m_u, m_v, u0, v0`.
pub const PARAM_COUNT: usize = 9;

/// Parameter names in Jacobian column order.
pub const PARAM_NAMES: [&str; PARAM_COUNT] = ["k1", "k2", "k3", "k4", "k5", "mu", "mv", "u0", "v0"];

/// Points closer to a projection center than this are treated as the center
/// itself; the azimuth is undefined there.
const CENTER_EPS: f64 = 1e-12;

/// Distortion model parameters: polynomial coefficients `k1..k5`, pixel
/// scales `mu`/`mv`, and the distortion center `(u0, v0)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionParams {
    /// Radial polynomial coefficients, image-plane units per rad^(2i-1).
    pub k: [f64; 5],
    /// Pixels per image-plane unit along x.
    pub mu: f64,
    /// Pixels per image-plane unit along y.
    pub mv: f64,
    /// Distortion center x, pixels.
    pub u0: f64,
    /// Distortion center y, pixels.
    pub v0: f64,
}

impl DistortionParams {
    /// Pure equidistant model `R(θ) = k1·θ` with unit pixel scales.
    pub fn equidistant(k1: f64, u0: f64, v0: f64) -> Self {
        Self { k: [k1, 0.0, 0.0, 0.0, 0.0], mu: 1.0, mv: 1.0, u0, v0 }
    }

    /// Evaluates the radial profile `R(θ) = Σ k_i·θ^(2i−1)`.
    pub fn radial_profile(&self, theta: f64) -> f64 {
        let t = theta * theta;
        let [k1, k2, k3, k4, k5] = self.k;
        theta * (k1 + t * (k2 + t * (k3 + t * (k4 + t * k5))))
    }

    /// Evaluates `dR/dθ = Σ (2i−1)·k_i·θ^(2i−2)`.
    pub fn radial_profile_deriv(&self, theta: f64) -> f64 {
        let t = theta * theta;
        let [k1, k2, k3, k4, k5] = self.k;
        k1 + t * (3.0 * k2 + t * (5.0 * k3 + t * (7.0 * k4 + t * 9.0 * k5)))
    }

    /// Checks strict monotonicity of the radial profile over `[0, theta_max]`.
    ///
    /// Samples the derivative on a 4096-interval grid and additionally
    /// isolates the real roots of the derivative polynomial (a quartic in θ²)
    /// exactly, so narrow dips between grid points cannot be missed. Reports
    /// the usable range: `theta_max` is the requested range when monotone,
    /// otherwise the first derivative zero crossing. Non-monotonicity is
    /// data, not an error.
    pub fn validate(&self, theta_max: f64) -> ValidityReport {
        let requested = theta_max;
        let mut limit = requested;
        let mut monotone = true;

        if self.radial_profile_deriv(0.0) <= 0.0 {
            return ValidityReport { monotone: false, theta_max: 0.0, max_radius: 0.0 };
        }

        // Derivative as a polynomial in t = θ², ascending coefficients.
        let [k1, k2, k3, k4, k5] = self.k;
        let deriv_t = [k1, 3.0 * k2, 5.0 * k3, 7.0 * k4, 9.0 * k5];
        let t_max = requested * requested;
        for root_t in isolate_roots(&deriv_t, 0.0, t_max) {
            let root = root_t.max(0.0).sqrt();
            if root < limit {
                limit = root;
                monotone = false;
            }
        }

        // Grid scan; a sign change refines to the crossing by bisection.
        const GRID: usize = 4096;
        let mut prev = 0.0;
        for i in 1..=GRID {
            let theta = requested * i as f64 / GRID as f64;
            if self.radial_profile_deriv(theta) <= 0.0 {
                let crossing = bisect(|t| self.radial_profile_deriv(t), prev, theta);
                if crossing < limit {
                    limit = crossing;
                    monotone = false;
                }
                break;
            }
            prev = theta;
        }

        let theta_max = if monotone { requested } else { limit };
        ValidityReport { monotone, theta_max, max_radius: self.radial_profile(theta_max) }
    }

    /// Flattens to `[k1..k5, mu, mv, u0, v0]`.
    pub fn to_array(&self) -> [f64; PARAM_COUNT] {
        let [k1, k2, k3, k4, k5] = self.k;
        [k1, k2, k3, k4, k5, self.mu, self.mv, self.u0, self.v0]
    }

    /// Rebuilds from the flattened `[k1..k5, mu, mv, u0, v0]` order.
    pub fn from_array(a: [f64; PARAM_COUNT]) -> Self {
        Self { k: [a[0], a[1], a[2], a[3], a[4]], mu: a[5], mv: a[6], u0: a[7], v0: a[8] }
    }

    fn all_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Perspective (rectilinear) target view: focal length, principal point,
/// and output lattice size, all in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeSpec {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl PinholeSpec {
    /// Spec with the principal point at the lattice center.
    pub fn centered(f: f64, width: u32, height: u32) -> Self {
        Self { f, cx: width as f64 / 2.0, cy: height as f64 / 2.0, width, height }
    }

    /// Ray direction whose rectilinear projection is the pixel `p`.
    pub fn ray_from_pixel(&self, p: [f64; 2]) -> RayDirection {
        let dx = p[0] - self.cx;
        let dy = p[1] - self.cy;
        let r = (dx * dx + dy * dy).sqrt();
        RayDirection { theta: (r / self.f).atan(), phi: dy.atan2(dx) }
    }

    /// Rectilinear projection `c + f·tanθ·(cosφ, sinφ)` of a ray.
    pub fn pixel_from_ray(&self, ray: RayDirection) -> [f64; 2] {
        let r = self.f * ray.theta.tan();
        [self.cx + r * ray.phi.cos(), self.cy + r * ray.phi.sin()]
    }

    /// Largest incidence angle over the four lattice corners.
    pub fn corner_theta(&self) -> f64 {
        let mut r_max: f64 = 0.0;
        for x in [0.0, (self.width - 1) as f64] {
            for y in [0.0, (self.height - 1) as f64] {
                let (dx, dy) = (x - self.cx, y - self.cy);
                r_max = r_max.max((dx * dx + dy * dy).sqrt());
            }
        }
        (r_max / self.f).atan()
    }
}

/// Incoming ray direction: `theta` to the principal axis, azimuth `phi`
/// from the x axis, both in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayDirection {
    pub theta: f64,
    pub phi: f64,
}

/// Monotonicity report for a radial profile over a declared θ range.
///
/// `monotone` implies `theta_max` equals the requested range; otherwise
/// `theta_max` is the first zero of the derivative and the usable range ends
/// there. `max_radius = R(theta_max)` bounds valid fisheye radii.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub monotone: bool,
    pub theta_max: f64,
    pub max_radius: f64,
}

/// Construction errors for [`FisheyeModel`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("pixel scales must be positive and finite (mu={mu}, mv={mv})")]
    InvalidScale { mu: f64, mv: f64 },
    #[error("non-finite distortion parameter")]
    NonFinite,
    #[error("theta_max must lie in (0, pi/2), got {0}")]
    InvalidThetaMax(f64),
    #[error("radial profile has no usable monotone range (k1 <= 0)")]
    NoValidRange,
}

/// Point-mapping errors.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ProjectionError {
    /// Incidence angle beyond the validated range.
    #[error("theta {theta:.6} rad outside the valid range [0, {theta_max:.6}]")]
    ThetaOutOfRange { theta: f64, theta_max: f64 },
    /// Fisheye radius beyond the validated range.
    #[error("fisheye radius {radius:.3} px outside the valid range [0, {max_radius:.3}]")]
    RadiusOutOfRange { radius: f64, max_radius: f64 },
    /// Profile non-monotone: the inverse mapping is not defined.
    #[error("radial profile is non-monotone; inverse mapping undefined")]
    NonMonotonic,
}

/// A distortion parameter set bundled with its validity report.
///
/// All point mappings live here so that range checks are always made against
/// the report the model was constructed with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisheyeModel {
    params: DistortionParams,
    validity: ValidityReport,
}

impl FisheyeModel {
    /// Validates `params` over `[0, theta_max]` and bundles the report.
    ///
    /// Fails only on structurally invalid inputs (non-finite values,
    /// non-positive pixel scales, θ range outside `(0, π/2)`); a non-monotone
    /// profile is carried in the report and surfaces later as
    /// [`ProjectionError`] from the mappings that need the inverse.
    pub fn new(params: DistortionParams, theta_max: f64) -> Result<Self, ModelError> {
        if !params.all_finite() {
            return Err(ModelError::NonFinite);
        }
        if !(params.mu > 0.0 && params.mv > 0.0) {
            return Err(ModelError::InvalidScale { mu: params.mu, mv: params.mv });
        }
        if !(theta_max > 0.0 && theta_max < std::f64::consts::FRAC_PI_2) {
            return Err(ModelError::InvalidThetaMax(theta_max));
        }
        let validity = params.validate(theta_max);
        Ok(Self { params, validity })
    }

    /// Like [`FisheyeModel::new`] but shrinks the range to the monotone part
    /// below `upper` when the profile turns around early. Fails with
    /// [`ModelError::NoValidRange`] when no monotone range exists at all.
    pub fn with_auto_range(params: DistortionParams, upper: f64) -> Result<Self, ModelError> {
        let model = Self::new(params, upper)?;
        if model.validity.monotone {
            return Ok(model);
        }
        if model.validity.theta_max <= 0.0 {
            return Err(ModelError::NoValidRange);
        }
        let shrunk = Self::new(params, model.validity.theta_max * (1.0 - 1e-9))?;
        if shrunk.validity.monotone {
            Ok(shrunk)
        } else {
            Err(ModelError::NoValidRange)
        }
    }

    pub fn params(&self) -> &DistortionParams {
        &self.params
    }

    pub fn validity(&self) -> &ValidityReport {
        &self.validity
    }

    /// Forward mapping: rectified pixel to fisheye pixel.
    ///
    /// Computes `θ = atan(‖p_r − c‖/f)` and the azimuth from the pinhole
    /// spec, then `u = mu·R(θ)·cosφ + u0`, `v = mv·R(θ)·sinφ + v0`. The
    /// principal point maps exactly to `(u0, v0)`.
    pub fn distort_point(&self, p_r: [f64; 2], pin: &PinholeSpec) -> Result<[f64; 2], ProjectionError> {
        let dx = p_r[0] - pin.cx;
        let dy = p_r[1] - pin.cy;
        let rp = (dx * dx + dy * dy).sqrt();
        if rp < CENTER_EPS {
            return Ok([self.params.u0, self.params.v0]);
        }
        let theta = (rp / pin.f).atan();
        if theta > self.validity.theta_max {
            return Err(ProjectionError::ThetaOutOfRange { theta, theta_max: self.validity.theta_max });
        }
        let rf = self.params.radial_profile(theta);
        let (cos_phi, sin_phi) = (dx / rp, dy / rp);
        Ok([
            self.params.mu * rf * cos_phi + self.params.u0,
            self.params.mv * rf * sin_phi + self.params.v0,
        ])
    }

    /// Inverse mapping: fisheye pixel to rectified pixel.
    ///
    /// Solves `R(θ) = r` for the fisheye radius `r` by safeguarded
    /// Newton-bisection (|Δθ| ≤ 1e−12, at most 100 iterations), then returns
    /// `c + f·tanθ·(cosφ, sinφ)`. The distortion center maps exactly to the
    /// principal point. Requires a monotone profile.
    pub fn undistort_point(&self, p_f: [f64; 2], pin: &PinholeSpec) -> Result<[f64; 2], ProjectionError> {
        if !self.validity.monotone {
            return Err(ProjectionError::NonMonotonic);
        }
        let xd = (p_f[0] - self.params.u0) / self.params.mu;
        let yd = (p_f[1] - self.params.v0) / self.params.mv;
        let r = (xd * xd + yd * yd).sqrt();
        if r < CENTER_EPS {
            return Ok([pin.cx, pin.cy]);
        }
        if r > self.validity.max_radius {
            return Err(ProjectionError::RadiusOutOfRange { radius: r, max_radius: self.validity.max_radius });
        }
        let theta = self.solve_theta(r);
        let rp = pin.f * theta.tan();
        Ok([pin.cx + rp * xd / r, pin.cy + rp * yd / r])
    }

    /// Analytic 2×9 Jacobian of the forward mapping with respect to the
    /// parameters, columns in [`PARAM_NAMES`] order.
    ///
    /// `∂u/∂k_i = mu·θ^(2i−1)·cosφ`, `∂u/∂mu = R(θ)·cosφ`, `∂u/∂u0 = 1`,
    /// zeros across axes, and symmetrically for `v`. At the principal point
    /// only the center columns are nonzero.
    pub fn distortion_jacobian(
        &self,
        p_r: [f64; 2],
        pin: &PinholeSpec,
    ) -> Result<[[f64; PARAM_COUNT]; 2], ProjectionError> {
        let mut jac = [[0.0; PARAM_COUNT]; 2];
        let dx = p_r[0] - pin.cx;
        let dy = p_r[1] - pin.cy;
        let rp = (dx * dx + dy * dy).sqrt();
        if rp < CENTER_EPS {
            jac[0][7] = 1.0;
            jac[1][8] = 1.0;
            return Ok(jac);
        }
        let theta = (rp / pin.f).atan();
        if theta > self.validity.theta_max {
            return Err(ProjectionError::ThetaOutOfRange { theta, theta_max: self.validity.theta_max });
        }
        let (cos_phi, sin_phi) = (dx / rp, dy / rp);
        let rf = self.params.radial_profile(theta);
        let mut theta_pow = theta;
        let [row_u, row_v] = &mut jac;
        for (du, dv) in row_u.iter_mut().zip(row_v.iter_mut()).take(5) {
            *du = self.params.mu * theta_pow * cos_phi;
            *dv = self.params.mv * theta_pow * sin_phi;
            theta_pow *= theta * theta;
        }
        jac[0][5] = rf * cos_phi;
        jac[1][6] = rf * sin_phi;
        jac[0][7] = 1.0;
        jac[1][8] = 1.0;
        Ok(jac)
    }

    /// Inverse mapping together with its analytic 2×9 Jacobian
    /// `∂p_r/∂(k1..k5, mu, mv, u0, v0)`.
    ///
    /// The radial root θ(r; k) is differentiated implicitly,
    /// `∂θ/∂k_i = −θ^(2i−1)/R′(θ)`, and perturbations of the scales and
    /// center enter through the normalized offset, its radius, and the
    /// azimuth. Used by the calibrator; requires a monotone profile.
    pub fn undistort_jacobian(
        &self,
        p_f: [f64; 2],
        pin: &PinholeSpec,
    ) -> Result<([f64; 2], [[f64; PARAM_COUNT]; 2]), ProjectionError> {
        if !self.validity.monotone {
            return Err(ProjectionError::NonMonotonic);
        }
        let p = &self.params;
        let xd = (p_f[0] - p.u0) / p.mu;
        let yd = (p_f[1] - p.v0) / p.mv;
        let r = (xd * xd + yd * yd).sqrt();
        let mut jac = [[0.0; PARAM_COUNT]; 2];
        if r < 1e-9 {
            // Near the center the mapping linearizes to c + (f/k1)·(xd, yd);
            // only the center columns survive.
            let g0 = pin.f / p.k[0];
            jac[0][7] = -g0 / p.mu;
            jac[1][8] = -g0 / p.mv;
            return Ok(([pin.cx, pin.cy], jac));
        }
        if r > self.validity.max_radius {
            return Err(ProjectionError::RadiusOutOfRange { radius: r, max_radius: self.validity.max_radius });
        }
        let theta = self.solve_theta(r);
        let deriv = p.radial_profile_deriv(theta);
        let tan = theta.tan();
        let sec2 = 1.0 + tan * tan;
        let g = pin.f * tan / r;
        let point = [pin.cx + g * xd, pin.cy + g * yd];

        // Column from offset perturbation (d_xd, d_yd) plus an explicit θ
        // term for the polynomial coefficients:
        //   dr = (xd·d_xd + yd·d_yd)/r,  dθ = dr/R′ + dθ_k,
        //   dg = f·(sec²θ·dθ·r − tanθ·dr)/r²,
        //   dp = dg·(xd, yd) + g·(d_xd, d_yd).
        let mut column = |idx: usize, d_xd: f64, d_yd: f64, d_theta_k: f64| {
            let dr = (xd * d_xd + yd * d_yd) / r;
            let d_theta = dr / deriv + d_theta_k;
            let dg = pin.f * (sec2 * d_theta * r - tan * dr) / (r * r);
            jac[0][idx] = dg * xd + g * d_xd;
            jac[1][idx] = dg * yd + g * d_yd;
        };

        let mut theta_pow = theta;
        for i in 0..5 {
            column(i, 0.0, 0.0, -theta_pow / deriv);
            theta_pow *= theta * theta;
        }
        column(5, -xd / p.mu, 0.0, 0.0);
        column(6, 0.0, -yd / p.mv, 0.0);
        column(7, -1.0 / p.mu, 0.0, 0.0);
        column(8, 0.0, -1.0 / p.mv, 0.0);
        Ok((point, jac))
    }

    /// Solves `R(θ) = r` on the validated bracket `[0, theta_max]`.
    ///
    /// Newton steps from an equidistant initial guess, falling back to
    /// bisection whenever a step leaves the current bracket; the bracket
    /// shrinks monotonically, so convergence is guaranteed for monotone
    /// profiles. Caller guarantees `r ≤ max_radius`.
    fn solve_theta(&self, r: f64) -> f64 {
        let mut lo = 0.0_f64;
        let mut hi = self.validity.theta_max;
        let mut theta = (r / self.params.k[0]).clamp(0.0, hi);
        for _ in 0..100 {
            let fval = self.params.radial_profile(theta) - r;
            if fval == 0.0 {
                return theta;
            }
            if fval > 0.0 {
                hi = theta;
            } else {
                lo = theta;
            }
            let deriv = self.params.radial_profile_deriv(theta);
            let mut next = theta - fval / deriv;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            let step = (next - theta).abs();
            theta = next;
            if step <= 1e-12 {
                break;
            }
        }
        theta
    }
}

/// Bisection for a sign change of `f` on `[lo, hi]`, assuming `f(lo) > 0`
/// and `f(hi) ≤ 0`. Returns the crossing to ~1e−14 relative width.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Real roots of a polynomial (ascending coefficients, degree ≤ 4) inside
/// `[lo, hi]`, found by recursively isolating monotone pieces between the
/// roots of the derivative and bisecting each sign change.
fn isolate_roots(coeffs: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let degree = coeffs.iter().rposition(|&c| c != 0.0).unwrap_or(0);
    if degree == 0 {
        return Vec::new();
    }
    let eval = |x: f64| coeffs[..=degree].iter().rev().fold(0.0, |acc, &c| acc * x + c);
    if degree == 1 {
        let root = -coeffs[0] / coeffs[1];
        return if root >= lo && root <= hi { vec![root] } else { Vec::new() };
    }

    let deriv: Vec<f64> =
        coeffs[1..=degree].iter().enumerate().map(|(i, &c)| c * (i + 1) as f64).collect();
    let mut knots = vec![lo];
    for r in isolate_roots(&deriv, lo, hi) {
        if r > lo && r < hi {
            knots.push(r);
        }
    }
    knots.push(hi);
    knots.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut roots = Vec::new();
    for pair in knots.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (fa, fb) = (eval(a), eval(b));
        if fa == 0.0 {
            roots.push(a);
            continue;
        }
        if fa * fb > 0.0 {
            continue;
        }
        // Monotone piece with a sign change (or a root at b): bisect.
        let (mut x0, mut x1) = (a, b);
        for _ in 0..200 {
            let mid = 0.5 * (x0 + x1);
            if x1 - x0 <= 1e-15 * x1.abs().max(1.0) {
                break;
            }
            let fm = eval(mid);
            if fm == 0.0 {
                x0 = mid;
                x1 = mid;
                break;
            }
            if fa * fm > 0.0 {
                x0 = mid;
            } else {
                x1 = mid;
            }
        }
        roots.push(0.5 * (x0 + x1));
    }
    let last = knots[knots.len() - 1];
    if eval(last) == 0.0 {
        roots.push(last);
    }
    roots.dedup();
    roots
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn equidistant_300() -> (FisheyeModel, PinholeSpec) {
        let params = DistortionParams::equidistant(300.0, 160.0, 160.0);
        let pin = PinholeSpec { f: 300.0, cx: 160.0, cy: 160.0, width: 320, height: 320 };
        (FisheyeModel::new(params, 1.3).unwrap(), pin)
    }

    #[test]
    fn radial_profile_is_zero_at_zero() {
        let p = DistortionParams { k: [2.0, -1.0, 0.5, 0.1, -0.3], mu: 1.0, mv: 1.0, u0: 0.0, v0: 0.0 };
        assert_eq!(p.radial_profile(0.0), 0.0);
    }

    #[test]
    fn radial_profile_matches_hand_evaluation() {
        let p = DistortionParams { k: [1.0, 0.1, 0.0, 0.0, 0.0], mu: 1.0, mv: 1.0, u0: 0.0, v0: 0.0 };
        assert_relative_eq!(p.radial_profile(0.5), 0.5125, max_relative = 1e-15);
    }

    #[test]
    fn radial_profile_matches_high_precision_oracle() {
        // theta = atan(40/300); 300*theta computed at 30-digit precision.
        let p = DistortionParams::equidistant(300.0, 0.0, 0.0);
        let theta = (40.0_f64 / 300.0).atan();
        assert_relative_eq!(p.radial_profile(theta), 39.765459689002206, max_relative = 1e-14);
    }

    #[test]
    fn distort_maps_principal_point_to_distortion_center() {
        let (model, pin) = equidistant_300();
        assert_eq!(model.distort_point([160.0, 160.0], &pin).unwrap(), [160.0, 160.0]);
    }

    #[test]
    fn distort_matches_oracle_on_axis() {
        let (model, pin) = equidistant_300();
        let p = model.distort_point([200.0, 160.0], &pin).unwrap();
        assert_relative_eq!(p[0], 199.7654596890022, max_relative = 1e-12);
        assert_relative_eq!(p[1], 160.0, epsilon = 1e-12);
    }

    #[test]
    fn distort_is_rotationally_symmetric() {
        let (model, pin) = equidistant_300();
        let p = model.distort_point([160.0, 200.0], &pin).unwrap();
        assert_relative_eq!(p[0], 160.0, epsilon = 1e-12);
        assert_relative_eq!(p[1], 199.7654596890022, max_relative = 1e-12);
    }

    #[test]
    fn distort_rejects_theta_beyond_validated_range() {
        let params = DistortionParams::equidistant(300.0, 160.0, 160.0);
        let pin = PinholeSpec { f: 300.0, cx: 160.0, cy: 160.0, width: 320, height: 320 };
        let model = FisheyeModel::new(params, 0.1).unwrap();
        let err = model.distort_point([300.0, 160.0], &pin).unwrap_err();
        assert!(matches!(err, ProjectionError::ThetaOutOfRange { .. }));
    }

    #[test]
    fn undistort_fixes_distortion_center() {
        let (model, pin) = equidistant_300();
        assert_eq!(model.undistort_point([160.0, 160.0], &pin).unwrap(), [160.0, 160.0]);
    }

    #[test]
    fn undistort_inverts_the_oracle_point() {
        let (model, pin) = equidistant_300();
        let p = model.undistort_point([199.7654596890022, 160.0], &pin).unwrap();
        assert!((p[0] - 200.0).abs() <= 1e-6 && (p[1] - 160.0).abs() <= 1e-6);
    }

    #[test]
    fn round_trip_is_identity_over_random_points() {
        let params = DistortionParams {
            k: [310.0, 15.0, -4.0, 0.5, 0.05],
            mu: 1.05,
            mv: 0.97,
            u0: 158.0,
            v0: 163.5,
        };
        let pin = PinholeSpec { f: 300.0, cx: 160.0, cy: 160.0, width: 320, height: 320 };
        let model = FisheyeModel::new(params, 1.2).unwrap();
        assert!(model.validity().monotone);
        // Deterministic lattice sweep; the 1000-draw randomized version lives
        // in the acceptance suite.
        for ix in 0..20 {
            for iy in 0..20 {
                let p = [16.0 * ix as f64 + 0.37, 16.0 * iy as f64 + 0.81];
                let q = model.distort_point(p, &pin).unwrap();
                let back = model.undistort_point(q, &pin).unwrap();
                let err = ((back[0] - p[0]).powi(2) + (back[1] - p[1]).powi(2)).sqrt();
                assert!(err <= 1e-6, "round trip error {err} at {p:?}");
            }
        }
    }

    #[test]
    fn undistort_rejects_radius_beyond_max() {
        let (model, pin) = equidistant_300();
        let r_bad = model.validity().max_radius + 1.0;
        let err = model.undistort_point([160.0 + r_bad, 160.0], &pin).unwrap_err();
        assert!(matches!(err, ProjectionError::RadiusOutOfRange { .. }));
    }

    #[test]
    fn undistort_rejects_non_monotone_profiles() {
        let params = DistortionParams { k: [1.0, -1.0, 0.0, 0.0, 0.0], mu: 1.0, mv: 1.0, u0: 0.0, v0: 0.0 };
        let pin = PinholeSpec { f: 1.0, cx: 0.0, cy: 0.0, width: 10, height: 10 };
        let model = FisheyeModel::new(params, 1.0).unwrap();
        assert!(!model.validity().monotone);
        let err = model.undistort_point([0.1, 0.0], &pin).unwrap_err();
        assert_eq!(err, ProjectionError::NonMonotonic);
    }

    #[test]
    fn validate_reports_linear_profile_as_monotone() {
        let p = DistortionParams::equidistant(1.0, 0.0, 0.0);
        let report = p.validate(1.5);
        assert!(report.monotone);
        assert_eq!(report.theta_max, 1.5);
        assert_relative_eq!(report.max_radius, 1.5, max_relative = 1e-15);
    }

    #[test]
    fn validate_finds_the_turnaround_of_a_cubic_profile() {
        // R = θ − θ³ turns around where 1 − 3θ² = 0, θ = 1/√3.
        let p = DistortionParams { k: [1.0, -1.0, 0.0, 0.0, 0.0], mu: 1.0, mv: 1.0, u0: 0.0, v0: 0.0 };
        let report = p.validate(1.0);
        assert!(!report.monotone);
        assert_relative_eq!(report.theta_max, 1.0 / 3.0_f64.sqrt(), epsilon = 1e-9);
        assert_relative_eq!(report.max_radius, p.radial_profile(report.theta_max), max_relative = 1e-12);
    }

    #[test]
    fn validate_accepts_all_positive_coefficients() {
        let p = DistortionParams { k: [300.0, 10.0, 1.0, 0.1, 0.01], mu: 1.0, mv: 1.0, u0: 0.0, v0: 0.0 };
        assert!(p.validate(0.6).monotone);
    }

    #[test]
    fn validate_catches_narrow_dips_via_root_isolation() {
        // Derivative dips negative only on a short interval; built from
        // d(t) = 300·(t−0.5)(t−0.52)·(t²+1) rescaled, which a coarse scan
        // could hop over but exact isolation cannot.
        let d0 = 300.0 * 0.26;
        let d1 = -300.0 * 1.02;
        let d2 = 300.0 * 1.26;
        let d3 = -300.0 * 1.02;
        let d4 = 300.0;
        let p = DistortionParams {
            k: [d0, d1 / 3.0, d2 / 5.0, d3 / 7.0, d4 / 9.0],
            mu: 1.0,
            mv: 1.0,
            u0: 0.0,
            v0: 0.0,
        };
        let report = p.validate(0.9);
        assert!(!report.monotone);
        assert_relative_eq!(report.theta_max, 0.5_f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn jacobian_at_center_only_moves_with_the_center() {
        let (model, pin) = equidistant_300();
        let jac = model.distortion_jacobian([160.0, 160.0], &pin).unwrap();
        for col in 0..PARAM_COUNT {
            let expected_u = if col == 7 { 1.0 } else { 0.0 };
            let expected_v = if col == 8 { 1.0 } else { 0.0 };
            assert_eq!(jac[0][col], expected_u, "du/d{}", PARAM_NAMES[col]);
            assert_eq!(jac[1][col], expected_v, "dv/d{}", PARAM_NAMES[col]);
        }
    }

    #[test]
    fn jacobian_k1_column_is_theta_on_axis() {
        let (model, pin) = equidistant_300();
        let jac = model.distortion_jacobian([200.0, 160.0], &pin).unwrap();
        assert_relative_eq!(jac[0][0], (40.0_f64 / 300.0).atan(), max_relative = 1e-14);
        assert_relative_eq!(jac[1][0], 0.0, epsilon = 1e-15);
    }

    fn fd_check_forward(model: &FisheyeModel, pin: &PinholeSpec, p_r: [f64; 2]) -> f64 {
        let h = 1e-6;
        let jac = model.distortion_jacobian(p_r, pin).unwrap();
        let mut worst = 0.0_f64;
        for col in 0..PARAM_COUNT {
            let mut plus = model.params().to_array();
            let mut minus = plus;
            plus[col] += h;
            minus[col] -= h;
            let mp = FisheyeModel::new(DistortionParams::from_array(plus), model.validity().theta_max).unwrap();
            let mm = FisheyeModel::new(DistortionParams::from_array(minus), model.validity().theta_max).unwrap();
            let fp = mp.distort_point(p_r, pin).unwrap();
            let fm = mm.distort_point(p_r, pin).unwrap();
            for row in 0..2 {
                let fd = (fp[row] - fm[row]) / (2.0 * h);
                let a = jac[row][col];
                worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-2));
            }
        }
        worst
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let params = DistortionParams {
            k: [280.0, 20.0, -3.0, 0.8, 0.02],
            mu: 1.04,
            mv: 0.96,
            u0: 157.0,
            v0: 164.0,
        };
        let pin = PinholeSpec { f: 300.0, cx: 160.0, cy: 160.0, width: 320, height: 320 };
        let model = FisheyeModel::new(params, 1.25).unwrap();
        for p in [[200.0, 160.0], [40.0, 305.0], [310.5, 20.25], [170.0, 150.0]] {
            let worst = fd_check_forward(&model, &pin, p);
            assert!(worst <= 1e-4, "finite-difference mismatch {worst} at {p:?}");
        }
    }

    #[test]
    fn undistort_jacobian_matches_finite_differences() {
        let params = DistortionParams {
            k: [280.0, 20.0, -3.0, 0.8, 0.02],
            mu: 1.04,
            mv: 0.96,
            u0: 157.0,
            v0: 164.0,
        };
        let pin = PinholeSpec { f: 300.0, cx: 160.0, cy: 160.0, width: 320, height: 320 };
        let model = FisheyeModel::new(params, 1.25).unwrap();
        let h = 1e-6;
        for p_f in [[200.0, 170.0], [60.0, 40.0], [161.0, 159.0], [300.0, 280.0]] {
            let (_, jac) = model.undistort_jacobian(p_f, &pin).unwrap();
            for col in 0..PARAM_COUNT {
                let mut plus = params.to_array();
                let mut minus = plus;
                plus[col] += h;
                minus[col] -= h;
                let mp = FisheyeModel::new(DistortionParams::from_array(plus), 1.25).unwrap();
                let mm = FisheyeModel::new(DistortionParams::from_array(minus), 1.25).unwrap();
                let fp = mp.undistort_point(p_f, &pin).unwrap();
                let fm = mm.undistort_point(p_f, &pin).unwrap();
                for row in 0..2 {
                    let fd = (fp[row] - fm[row]) / (2.0 * h);
                    let a = jac[row][col];
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
                    assert!(
                        rel <= 1e-4,
                        "inverse Jacobian mismatch {} row {} at {:?}: analytic {},  fd {}",
                        PARAM_NAMES[col],
                        row,
                        p_f,
                        a,
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn params_serialize_in_fixed_field_order() {
        let p = DistortionParams { k: [1.0, 2.0, 3.0, 4.0, 5.0], mu: 1.5, mv: 0.5, u0: 10.0, v0: 20.0 };
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"k":[1.0,2.0,3.0,4.0,5.0],"mu":1.5,"mv":0.5,"u0":10.0,"v0":20.0}"#);
        let back: DistortionParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn pinhole_serializes_in_fixed_field_order() {
        let pin = PinholeSpec { f: 300.0, cx: 160.0, cy: 160.0, width: 320, height: 320 };
        let json = serde_json::to_string(&pin).unwrap();
        assert_eq!(json, r#"{"f":300.0,"cx":160.0,"cy":160.0,"width":320,"height":320}"#);
    }

    #[test]
    fn auto_range_truncates_to_the_monotone_part() {
        let params = DistortionParams { k: [1.0, -1.0, 0.0, 0.0, 0.0], mu: 1.0, mv: 1.0, u0: 0.0, v0: 0.0 };
        let model = FisheyeModel::with_auto_range(params, 1.0).unwrap();
        assert!(model.validity().monotone);
        assert!((model.validity().theta_max - 1.0 / 3.0_f64.sqrt()).abs() < 1e-6);
        let bad = DistortionParams { k: [-1.0, 0.0, 0.0, 0.0, 0.0], mu: 1.0, mv: 1.0, u0: 0.0, v0: 0.0 };
        assert!(matches!(FisheyeModel::with_auto_range(bad, 1.0), Err(ModelError::NoValidRange)));
    }
}
