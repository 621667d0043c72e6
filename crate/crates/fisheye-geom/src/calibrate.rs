//! Plumb-line calibration: distortion parameters from curved images of
//! straight lines.
//!
//! Each annotated chain is assumed to be the fisheye image of a straight
//! line. Rectifying its vertices under candidate parameters and fitting a
//! total-least-squares line gives per-vertex straightness residuals; a
//! Levenberg-Marquardt loop drives them to zero. The Jacobian is analytic
//! all the way through the line fit, including the dependence of the fitted
//! direction on the parameters.
//!
//! `k1`, `mu`, and `mv` stay frozen by default: a plumb-line objective is
//! blind to the overall focal scale (any similarity of the rectified plane
//! preserves straightness), so those must come from the initial guess.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{
    DistortionParams, FisheyeModel, ModelError, PinholeSpec, PARAM_COUNT,
};
use crate::lines::{LineSet, Polyline};

/// Damping growth factor and its rejection ceiling.
const DAMPING_SCALE: f64 = 10.0;
const DAMPING_CAP: f64 = 1e12;
const DAMPING_FLOOR: f64 = 1e-12;

/// Relative eigenvalue gap below which a chain's direction is treated as
/// insensitive to the parameters.
const EIGEN_GAP_EPS: f64 = 1e-12;

/// Inverse mappings run over the full forward hemisphere.
const FULL_RANGE: f64 = std::f64::consts::FRAC_PI_2 * (1.0 - 1e-9);

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error("not enough data to constrain the free parameters: {0}")]
    DegenerateInput(&'static str),
    #[error("no parameter step keeps the model valid over the data")]
    DivergedModel,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Levenberg-Marquardt settings.
///
/// `frozen` follows the canonical parameter order `k1..k5, mu, mv, u0, v0`;
/// frozen entries keep their initial values. The defaults freeze `k1`,
/// `mu`, and `mv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iterations: u32,
    /// Convergence when the gradient sup-norm falls below this.
    pub gradient_tol: f64,
    /// Convergence when the relative step norm falls below this.
    pub step_tol: f64,
    pub initial_damping: f64,
    pub frozen: [bool; PARAM_COUNT],
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tol: 1e-10,
            step_tol: 1e-12,
            initial_damping: 1e-3,
            frozen: [true, false, false, false, false, true, true, false, false],
        }
    }
}

/// Straightness residuals of a line set under fixed parameters.
#[derive(Debug, Clone)]
pub struct ResidualSet {
    /// Signed normal deviations from each chain's fitted line, pin pixels,
    /// concatenated in chain order.
    pub residuals: Vec<f64>,
    /// Vertices outside the model's valid radius, ignored by the fit.
    pub dropped_vertices: usize,
}

impl ResidualSet {
    pub fn rms(&self) -> f64 {
        if self.residuals.is_empty() {
            return 0.0;
        }
        (self.residuals.iter().map(|r| r * r).sum::<f64>() / self.residuals.len() as f64).sqrt()
    }
}

/// Fit summary for one spatial region of the multiscale estimator.
#[derive(Debug, Clone, Serialize)]
pub struct RegionEstimate {
    pub name: String,
    /// Too few residuals to constrain the free parameters.
    pub degenerate: bool,
    pub params: Option<DistortionParams>,
    pub rms_residual: Option<f64>,
}

/// Calibration output.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationResult {
    pub params: DistortionParams,
    /// Root mean square straightness residual at `params`, pin pixels.
    pub rms_residual: f64,
    /// Accepted Levenberg-Marquardt steps.
    pub iterations: u32,
    pub converged: bool,
    /// Vertices outside the initial model's valid radius, excluded from
    /// the fit.
    pub dropped_vertices: usize,
    /// Present for the multiscale estimator only.
    pub per_region: Option<Vec<RegionEstimate>>,
}

/// Orthogonal-distance line fit through 2D points.
///
/// The tangent is the dominant eigenvector of the centered second-moment
/// matrix, from the closed-form eigendecomposition of a symmetric 2x2.
/// `lambda_max`/`lambda_min` are the moments along tangent and normal.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub centroid: [f64; 2],
    pub tangent: [f64; 2],
    pub normal: [f64; 2],
    pub lambda_max: f64,
    pub lambda_min: f64,
}

pub fn fit_line_tls(points: &[[f64; 2]]) -> LineFit {
    let n = points.len() as f64;
    let mut centroid = [0.0, 0.0];
    for p in points {
        centroid[0] += p[0];
        centroid[1] += p[1];
    }
    centroid[0] /= n;
    centroid[1] /= n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let ax = p[0] - centroid[0];
        let ay = p[1] - centroid[1];
        sxx += ax * ax;
        sxy += ax * ay;
        syy += ay * ay;
    }
    // Half-angle form of the dominant eigenvector; atan2 keeps it stable
    // for every anisotropy direction, including sxx == syy.
    let alpha = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let tangent = [alpha.cos(), alpha.sin()];
    let normal = [-tangent[1], tangent[0]];
    let lambda_max = tangent[0] * (sxx * tangent[0] + sxy * tangent[1])
        + tangent[1] * (sxy * tangent[0] + syy * tangent[1]);
    let lambda_min = normal[0] * (sxx * normal[0] + sxy * normal[1])
        + normal[1] * (sxy * normal[0] + syy * normal[1]);
    LineFit { centroid, tangent, normal, lambda_max, lambda_min }
}

/// Rectifies each chain and measures deviations from its fitted line.
///
/// Vertices the model cannot rectify are dropped; chains left with fewer
/// than two vertices contribute nothing.
pub fn straightness_residuals(
    params: &DistortionParams,
    lines: &LineSet,
    pin: &PinholeSpec,
) -> Result<ResidualSet, CalibrateError> {
    let model = FisheyeModel::with_auto_range(*params, FULL_RANGE)?;
    let mut residuals = Vec::new();
    let mut dropped = 0usize;
    for chain in &lines.lines {
        let mut mapped = Vec::with_capacity(chain.points.len());
        for &p in &chain.points {
            match model.undistort_point(p, pin) {
                Ok(q) => mapped.push(q),
                Err(_) => dropped += 1,
            }
        }
        if mapped.len() < 2 {
            dropped += mapped.len();
            continue;
        }
        let fit = fit_line_tls(&mapped);
        for q in &mapped {
            residuals.push(
                fit.normal[0] * (q[0] - fit.centroid[0]) + fit.normal[1] * (q[1] - fit.centroid[1]),
            );
        }
    }
    Ok(ResidualSet { residuals, dropped_vertices: dropped })
}

/// Vertex data the solver iterates on: the fisheye-frame chains that were
/// mappable under the initial parameters. The set never changes afterwards,
/// so the objective compares like with like across iterations.
struct FixedChains {
    chains: Vec<Vec<[f64; 2]>>,
    residual_count: usize,
    dropped_vertices: usize,
}

fn fix_chains(
    lines: &LineSet,
    params: &DistortionParams,
    pin: &PinholeSpec,
) -> Result<FixedChains, CalibrateError> {
    let model = FisheyeModel::with_auto_range(*params, FULL_RANGE)?;
    let mut chains = Vec::new();
    let mut residual_count = 0;
    let mut dropped = 0usize;
    for chain in &lines.lines {
        let mut kept = Vec::with_capacity(chain.points.len());
        for &p in &chain.points {
            if model.undistort_point(p, pin).is_ok() {
                kept.push(p);
            } else {
                dropped += 1;
            }
        }
        if kept.len() < 2 {
            dropped += kept.len();
            continue;
        }
        residual_count += kept.len();
        chains.push(kept);
    }
    Ok(FixedChains { chains, residual_count, dropped_vertices: dropped })
}

/// Residuals and their Jacobian over the free parameters; `None` when the
/// candidate parameters cannot rectify every fixed vertex.
struct Evaluation {
    residuals: DVector<f64>,
    jacobian: DMatrix<f64>,
    cost: f64,
}

fn evaluate(
    data: &FixedChains,
    params: &DistortionParams,
    pin: &PinholeSpec,
    free: &[usize],
) -> Option<Evaluation> {
    let model = FisheyeModel::with_auto_range(*params, FULL_RANGE).ok()?;
    let mut residuals = DVector::zeros(data.residual_count);
    let mut jacobian = DMatrix::zeros(data.residual_count, free.len());
    let mut row0 = 0;
    for chain in &data.chains {
        let m = chain.len();
        let mut pts = Vec::with_capacity(m);
        let mut jacs = Vec::with_capacity(m);
        for &p in chain {
            let (q, jac) = model.undistort_jacobian(p, pin).ok()?;
            pts.push(q);
            jacs.push(jac);
        }
        let fit = fit_line_tls(&pts);
        let gap = fit.lambda_min - fit.lambda_max;
        let gap_usable = gap.abs() > EIGEN_GAP_EPS * fit.lambda_max.max(1.0);

        let mut alphas = Vec::with_capacity(m);
        for (i, q) in pts.iter().enumerate() {
            let ax = q[0] - fit.centroid[0];
            let ay = q[1] - fit.centroid[1];
            residuals[row0 + i] = fit.normal[0] * ax + fit.normal[1] * ay;
            alphas.push(fit.tangent[0] * ax + fit.tangent[1] * ay);
        }
        for (col, &j) in free.iter().enumerate() {
            let mean_dx = jacs.iter().map(|jac| jac[0][j]).sum::<f64>() / m as f64;
            let mean_dy = jacs.iter().map(|jac| jac[1][j]).sum::<f64>() / m as f64;
            // dS projected through the eigenvector perturbation: the fitted
            // normal tilts by tangent * g / (lambda_min - lambda_max).
            let mut g = 0.0;
            let mut us = Vec::with_capacity(m);
            let mut ws = Vec::with_capacity(m);
            for i in 0..m {
                let dax = jacs[i][0][j] - mean_dx;
                let day = jacs[i][1][j] - mean_dy;
                let u = fit.tangent[0] * dax + fit.tangent[1] * day;
                let w = fit.normal[0] * dax + fit.normal[1] * day;
                g += u * residuals[row0 + i] + alphas[i] * w;
                us.push(u);
                ws.push(w);
            }
            let tilt = if gap_usable { g / gap } else { 0.0 };
            for i in 0..m {
                jacobian[(row0 + i, col)] = ws[i] + alphas[i] * tilt;
            }
        }
        row0 += m;
    }
    let cost = residuals.norm_squared();
    if !cost.is_finite() {
        return None;
    }
    Some(Evaluation { residuals, jacobian, cost })
}

/// Estimates distortion parameters from curved images of straight lines.
///
/// Classic Levenberg-Marquardt with multiplicative damping on the normal
/// equations' diagonal. Steps that increase the cost or leave a fixed
/// vertex unmappable are rejected by raising the damping; the run fails
/// with [`CalibrateError::DivergedModel`] only when the damping ceiling is
/// hit while every candidate step breaks model validity.
pub fn estimate_params(
    lines: &LineSet,
    pin: &PinholeSpec,
    init: &DistortionParams,
    cfg: &SolverConfig,
) -> Result<CalibrationResult, CalibrateError> {
    let free: Vec<usize> = (0..PARAM_COUNT).filter(|&i| !cfg.frozen[i]).collect();
    if free.is_empty() {
        return Err(CalibrateError::DegenerateInput("every parameter is frozen"));
    }
    let data = fix_chains(lines, init, pin)?;
    // Chains of 2 vertices are always collinear and contribute nothing;
    // the problem needs at least two chains that can actually bend.
    if data.chains.iter().filter(|c| c.len() >= 3).count() < 2 {
        return Err(CalibrateError::DegenerateInput(
            "need at least two chains with three usable vertices",
        ));
    }
    if data.residual_count < free.len() {
        return Err(CalibrateError::DegenerateInput(
            "fewer usable vertices than free parameters",
        ));
    }

    let mut params = *init;
    let mut eval = evaluate(&data, &params, pin, &free)
        .ok_or(CalibrateError::DegenerateInput("initial parameters do not cover the data"))?;
    let mut damping = cfg.initial_damping;
    let mut iterations = 0;
    let mut converged = false;

    'outer: for _ in 0..cfg.max_iterations {
        let jt = eval.jacobian.transpose();
        let gradient = &jt * &eval.residuals;
        if gradient.amax() <= cfg.gradient_tol {
            converged = true;
            break;
        }
        let hessian = &jt * &eval.jacobian;

        loop {
            let mut damped = hessian.clone();
            for d in 0..free.len() {
                damped[(d, d)] += damping * hessian[(d, d)].max(DAMPING_FLOOR);
            }
            let step = damped.lu().solve(&(-&gradient));
            let candidate = step.and_then(|delta| {
                let mut arr = params.to_array();
                for (col, &j) in free.iter().enumerate() {
                    arr[j] += delta[col];
                }
                let cand = DistortionParams::from_array(arr);
                evaluate(&data, &cand, pin, &free).map(|e| (cand, e, delta))
            });
            match candidate {
                Some((cand, cand_eval, delta)) if cand_eval.cost < eval.cost => {
                    let free_norm: f64 = free
                        .iter()
                        .map(|&j| params.to_array()[j].powi(2))
                        .sum::<f64>()
                        .sqrt();
                    let small = delta.norm() <= cfg.step_tol * (cfg.step_tol + free_norm);
                    params = cand;
                    eval = cand_eval;
                    damping = (damping / DAMPING_SCALE).max(DAMPING_FLOOR);
                    iterations += 1;
                    if small {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                other => {
                    let invalid = other.is_none();
                    damping *= DAMPING_SCALE;
                    if damping > DAMPING_CAP {
                        if invalid {
                            return Err(CalibrateError::DivergedModel);
                        }
                        // The surface is locally flat beyond the tolerance;
                        // report the best point found.
                        break 'outer;
                    }
                }
            }
        }
    }

    let rms = (eval.cost / data.residual_count as f64).sqrt();
    Ok(CalibrationResult {
        params,
        rms_residual: rms,
        iterations,
        converged,
        dropped_vertices: data.dropped_vertices,
        per_region: None,
    })
}

/// Mean of the polynomial coefficients over the global fit and every
/// usable regional fit; scales and center stay global.
fn fuse(global: &DistortionParams, regionals: &[DistortionParams]) -> DistortionParams {
    let mut k = global.k;
    for (i, ki) in k.iter_mut().enumerate() {
        let sum: f64 = regionals.iter().map(|r| r.k[i]).sum();
        *ki = (*ki + sum) / (1 + regionals.len()) as f64;
    }
    DistortionParams { k, ..*global }
}

/// Region membership by chain centroid over the fisheye lattice.
fn region_sets(lines: &LineSet, lattice: (u32, u32)) -> [LineSet; 5] {
    let (w, h) = (lattice.0 as f64, lattice.1 as f64);
    let mut sets: [Vec<Polyline>; 5] = [vec![], vec![], vec![], vec![], vec![]];
    for chain in &lines.lines {
        let n = chain.points.len() as f64;
        let cx = chain.points.iter().map(|p| p[0]).sum::<f64>() / n;
        let cy = chain.points.iter().map(|p| p[1]).sum::<f64>() / n;
        if cx >= 0.2 * w && cx < 0.8 * w && cy >= 0.2 * h && cy < 0.8 * h {
            sets[0].push(chain.clone());
        }
        let qx = if cx < 0.5 * w { 0 } else { 1 };
        let qy = if cy < 0.5 * h { 0 } else { 1 };
        sets[1 + 2 * qy + qx].push(chain.clone());
    }
    sets.map(LineSet::new)
}

const REGION_NAMES: [&str; 5] =
    ["center", "top_left", "top_right", "bottom_left", "bottom_right"];

/// Global fit refined by regional consensus.
///
/// After the global estimate, the central 60% box and the four half-size
/// quadrants are re-fit independently (seeded with the global parameters),
/// and the polynomial coefficients are fused by averaging. Regions without
/// enough data are reported as degenerate and excluded from the average.
pub fn estimate_multiscale(
    lines: &LineSet,
    pin: &PinholeSpec,
    lattice: (u32, u32),
    init: &DistortionParams,
    cfg: &SolverConfig,
) -> Result<CalibrationResult, CalibrateError> {
    let global = estimate_params(lines, pin, init, cfg)?;
    let mut regions = Vec::with_capacity(5);
    let mut usable = Vec::new();
    for (set, name) in region_sets(lines, lattice).into_iter().zip(REGION_NAMES) {
        match estimate_params(&set, pin, &global.params, cfg) {
            Ok(r) => {
                usable.push(r.params);
                regions.push(RegionEstimate {
                    name: name.to_string(),
                    degenerate: false,
                    params: Some(r.params),
                    rms_residual: Some(r.rms_residual),
                });
            }
            Err(CalibrateError::DegenerateInput(_)) => {
                regions.push(RegionEstimate {
                    name: name.to_string(),
                    degenerate: true,
                    params: None,
                    rms_residual: None,
                });
            }
            Err(e) => return Err(e),
        }
    }
    let fused = fuse(&global.params, &usable);
    let rms = straightness_residuals(&fused, lines, pin)?.rms();
    Ok(CalibrationResult {
        params: fused,
        rms_residual: rms,
        iterations: global.iterations,
        converged: global.converged,
        dropped_vertices: global.dropped_vertices,
        per_region: Some(regions),
    })
}
