//! Evaluation metrics: PSNR, SSIM, reprojection error, and the rectified
//! line precision/recall protocol.
//!
//! Image metrics work in 8-bit value units (samples scaled by 255) over a
//! validity mask, so undefined warp regions never pollute scores. The line
//! protocol thresholds a rectified heatmap by carried line length, matches
//! edge pixels one-to-one against ground truth within a spatial tolerance,
//! and reports the best F-score across thresholds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{DistortionParams, FisheyeModel, ModelError, PinholeSpec};
use crate::lines::LineHeatmap;
use crate::par;
use crate::raster::{ImageBuffer, ValidityMask};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("input dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("no valid pixels under the mask")]
    EmptyMask,
    #[error("no pixel is mappable under both models")]
    NoValidPixels,
    #[error("invalid metric configuration: {0}")]
    BadConfig(&'static str),
    #[error(transparent)]
    InvalidModel(#[from] ModelError),
}

/// Which side of a length threshold τ selects prediction pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdMode {
    /// Keep pixels with `0 < value ≤ τ` (short lines up to τ).
    UpTo,
    /// Keep pixels with `value ≥ τ` (lines at least τ long).
    AtLeast,
}

/// Settings for the line precision/recall protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Strictly increasing length thresholds.
    pub tau_list: Vec<f64>,
    /// Matching radius in pixels; `None` derives 1% of the image diagonal.
    pub match_tolerance: Option<f64>,
    pub threshold_mode: ThresholdMode,
    /// Peak value for PSNR, in 8-bit units.
    pub psnr_peak: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            tau_list: vec![5.0, 10.0, 20.0, 40.0, 80.0, 120.0, 160.0, 200.0, 240.0, 255.0],
            match_tolerance: None,
            threshold_mode: ThresholdMode::UpTo,
            psnr_peak: 255.0,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        if self.tau_list.is_empty() {
            return Err(MetricError::BadConfig("tau_list must not be empty"));
        }
        if self.tau_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MetricError::BadConfig("tau_list must be strictly increasing"));
        }
        if let Some(t) = self.match_tolerance {
            if !t.is_finite() || t <= 0.0 {
                return Err(MetricError::BadConfig("match_tolerance must be positive"));
            }
        }
        if !self.psnr_peak.is_finite() || self.psnr_peak <= 0.0 {
            return Err(MetricError::BadConfig("psnr_peak must be positive"));
        }
        Ok(())
    }

    /// Resolved matching radius for a given lattice.
    pub fn tolerance_for(&self, width: u32, height: u32) -> f64 {
        self.match_tolerance.unwrap_or_else(|| {
            0.01 * ((width as f64).powi(2) + (height as f64).powi(2)).sqrt()
        })
    }
}

/// PSNR sentinel for identical inputs, decibels.
pub const PSNR_CAP: f64 = 99.0;

fn check_dims(
    aw: u32,
    ah: u32,
    bw: u32,
    bh: u32,
) -> Result<(), MetricError> {
    if (aw, ah) != (bw, bh) {
        return Err(MetricError::DimensionMismatch(aw, ah, bw, bh));
    }
    Ok(())
}

/// Peak signal-to-noise ratio over masked pixels, in decibels.
///
/// MSE is taken per channel in 8-bit units; identical masked content
/// reports the 99 dB sentinel instead of infinity.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, mask: &ValidityMask) -> Result<f64, MetricError> {
    psnr_with_peak(a, b, mask, 255.0)
}

/// [`psnr`] with a configurable peak value.
pub fn psnr_with_peak(
    a: &ImageBuffer,
    b: &ImageBuffer,
    mask: &ValidityMask,
    peak: f64,
) -> Result<f64, MetricError> {
    check_dims(a.width(), a.height(), b.width(), b.height())?;
    check_dims(a.width(), a.height(), mask.width(), mask.height())?;
    if a.channels() != b.channels() {
        return Err(MetricError::DimensionMismatch(
            a.channels() as u32,
            0,
            b.channels() as u32,
            0,
        ));
    }
    let channels = a.channels();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &valid) in mask.data().iter().enumerate() {
        if !valid {
            continue;
        }
        for c in 0..channels {
            let d = (a.data()[i * channels + c] - b.data()[i * channels + c]) * 255.0;
            sum += d * d;
        }
        count += 1;
    }
    if count == 0 {
        return Err(MetricError::EmptyMask);
    }
    let mse = sum / (count * channels) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let (dx, dy) = (x as f64 - half, y as f64 - half);
            let v = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5).
///
/// Color inputs are reduced to luma; values are scaled to 8-bit units with
/// the standard stabilizers `C1 = (0.01·255)²`, `C2 = (0.03·255)²`. Only
/// windows lying fully inside the lattice with every pixel mask-valid
/// contribute, so partial coverage shrinks the averaging domain rather than
/// biasing the score.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer, mask: &ValidityMask) -> Result<f64, MetricError> {
    check_dims(a.width(), a.height(), b.width(), b.height())?;
    check_dims(a.width(), a.height(), mask.width(), mask.height())?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::EmptyMask);
    }
    let la = a.to_luma();
    let lb = b.to_luma();
    let weights = gaussian_window();
    let c1 = (0.01_f64 * 255.0).powi(2);
    let c2 = (0.03_f64 * 255.0).powi(2);

    let rows: Vec<usize> = (0..=h - SSIM_WINDOW).collect();
    let partials = par::map_collect(rows, |y0| {
        let mut sum = 0.0;
        let mut count = 0usize;
        'window: for x0 in 0..=w - SSIM_WINDOW {
            for wy in 0..SSIM_WINDOW {
                let start = (y0 + wy) * w + x0;
                if mask.data()[start..start + SSIM_WINDOW].iter().any(|&v| !v) {
                    continue 'window;
                }
            }
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for wy in 0..SSIM_WINDOW {
                let start = (y0 + wy) * w + x0;
                for wx in 0..SSIM_WINDOW {
                    let wt = weights[wy * SSIM_WINDOW + wx];
                    let x = la.data()[start + wx] * 255.0;
                    let y = lb.data()[start + wx] * 255.0;
                    mx += wt * x;
                    my += wt * y;
                    sxx += wt * x * x;
                    syy += wt * y * y;
                    sxy += wt * x * y;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
        (sum, count)
    });
    let (sum, count) = partials
        .into_iter()
        .fold((0.0, 0usize), |(s, c), (ps, pc)| (s + ps, c + pc));
    if count == 0 {
        return Err(MetricError::EmptyMask);
    }
    Ok(sum / count as f64)
}

/// Reprojection error summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RpeResult {
    /// Mean L2 distance between rectified positions, pixels.
    pub mean: f64,
    /// Pixels mappable under both models.
    pub evaluated: usize,
    /// Pixels beyond either model's valid radius.
    pub excluded: usize,
}

/// Mean reprojection error between two models over a fisheye lattice.
///
/// Every lattice pixel is rectified under both parameter sets; the result
/// averages the L2 coordinate differences. Pixels unmappable under either
/// model are excluded and counted, so partially covering models remain
/// comparable.
pub fn rpe(
    k_hat: &DistortionParams,
    k_gt: &DistortionParams,
    pin: &PinholeSpec,
    lattice: (u32, u32),
) -> Result<RpeResult, MetricError> {
    let upper = std::f64::consts::FRAC_PI_2 * (1.0 - 1e-9);
    let hat = FisheyeModel::with_auto_range(*k_hat, upper)?;
    let gt = FisheyeModel::with_auto_range(*k_gt, upper)?;
    let (width, height) = lattice;
    let rows: Vec<u32> = (0..height).collect();
    let partials = par::map_collect(rows, |y| {
        let mut sum = 0.0;
        let mut evaluated = 0usize;
        for x in 0..width {
            let p = [x as f64, y as f64];
            if let (Ok(a), Ok(b)) = (hat.undistort_point(p, pin), gt.undistort_point(p, pin)) {
                sum += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                evaluated += 1;
            }
        }
        (sum, evaluated)
    });
    let (sum, evaluated) = partials
        .into_iter()
        .fold((0.0, 0usize), |(s, c), (ps, pc)| (s + ps, c + pc));
    if evaluated == 0 {
        return Err(MetricError::NoValidPixels);
    }
    let total = width as usize * height as usize;
    Ok(RpeResult { mean: sum / evaluated as f64, evaluated, excluded: total - evaluated })
}

/// Precision/recall over the length thresholds, plus the best F-score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PRCurve {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f_max: f64,
}

impl PRCurve {
    /// F-score at threshold index `i`, 0 when undefined.
    pub fn f_score(&self, i: usize) -> f64 {
        f_score(self.precision[i], self.recall[i])
    }
}

fn f_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Rectified-line edge matching against ground truth.
///
/// Ground-truth edge pixels are all pixels with positive heatmap value;
/// prediction pixels are selected per threshold by carried length. Matching
/// is greedy nearest-first and one-to-one within the configured tolerance,
/// with exact-distance ties resolved by row-major pixel order, so results
/// are deterministic.
pub fn line_pr(
    rectified: &LineHeatmap,
    gt: &LineHeatmap,
    cfg: &MetricConfig,
) -> Result<PRCurve, MetricError> {
    check_dims(rectified.width(), rectified.height(), gt.width(), gt.height())?;
    cfg.validate()?;
    let (width, height) = (rectified.width(), rectified.height());
    let tol = cfg.tolerance_for(width, height);

    let collect = |h: &LineHeatmap, keep: &dyn Fn(f64) -> bool| -> Vec<[f64; 2]> {
        let mut out = Vec::new();
        for y in 0..height {
            for x in 0..width {
                if keep(h.get(x, y)) {
                    out.push([x as f64, y as f64]);
                }
            }
        }
        out
    };
    let gt_pixels = collect(gt, &|v| v > 0.0);

    let mut precision = Vec::with_capacity(cfg.tau_list.len());
    let mut recall = Vec::with_capacity(cfg.tau_list.len());
    let mut f_max = 0.0_f64;
    for &tau in &cfg.tau_list {
        let pred_pixels = match cfg.threshold_mode {
            ThresholdMode::UpTo => collect(rectified, &|v| v > 0.0 && v <= tau),
            ThresholdMode::AtLeast => collect(rectified, &|v| v >= tau),
        };
        let matched = match_count(&pred_pixels, &gt_pixels, tol);
        let p = if pred_pixels.is_empty() { 0.0 } else { matched as f64 / pred_pixels.len() as f64 };
        let r = if gt_pixels.is_empty() { 0.0 } else { matched as f64 / gt_pixels.len() as f64 };
        f_max = f_max.max(f_score(p, r));
        precision.push(p);
        recall.push(r);
    }
    Ok(PRCurve { thresholds: cfg.tau_list.clone(), precision, recall, f_max })
}

/// Greedy nearest-first one-to-one matching within `tol`.
///
/// Candidate pairs are gathered through a uniform grid over the ground
/// truth (cell size = tol) so only nearby pairs are examined, then sorted
/// by (distance, prediction index, ground-truth index).
fn match_count(pred: &[[f64; 2]], gt: &[[f64; 2]], tol: f64) -> usize {
    if pred.is_empty() || gt.is_empty() {
        return 0;
    }
    let cell = tol.max(1e-9);
    let key = |p: [f64; 2]| ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64);
    let mut grid: std::collections::HashMap<(i64, i64), Vec<usize>> =
        std::collections::HashMap::new();
    for (gi, &g) in gt.iter().enumerate() {
        grid.entry(key(g)).or_default().push(gi);
    }

    let tol_sq = tol * tol;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, &p) in pred.iter().enumerate() {
        let (cx, cy) = key(p);
        for gx in cx - 1..=cx + 1 {
            for gy in cy - 1..=cy + 1 {
                let Some(cands) = grid.get(&(gx, gy)) else { continue };
                for &gi in cands {
                    let g = gt[gi];
                    let d_sq = (p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2);
                    if d_sq <= tol_sq {
                        pairs.push((d_sq, pi, gi));
                    }
                }
            }
        }
    }
    pairs.sort_by(|a, b| {
        a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)).then_with(|| a.2.cmp(&b.2))
    });

    let mut p_used = vec![false; pred.len()];
    let mut g_used = vec![false; gt.len()];
    let mut matched = 0;
    for (_, pi, gi) in pairs {
        if !p_used[pi] && !g_used[gi] {
            p_used[pi] = true;
            g_used[gi] = true;
            matched += 1;
        }
    }
    matched
}
