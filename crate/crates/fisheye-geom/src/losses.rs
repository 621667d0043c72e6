//! Training-style losses over heatmaps, parameter vectors, rectified
//! geometry, and photometric residuals with uncertainty weighting.
//!
//! Everything here is a pure function of explicit inputs so each term can be
//! unit-tested against hand-evaluated cases and reused by external training
//! code or by the calibrator's diagnostics. Gradients are not provided for
//! image-valued inputs; parameter gradients come from the camera Jacobians.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{DistortionParams, FisheyeModel, ModelError, PinholeSpec, PARAM_COUNT};
use crate::lines::{partition, LineHeatmap};
use crate::raster::ImageBuffer;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("input dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("score or data length {got} does not match {want}")]
    BadLength { got: usize, want: usize },
    #[error("uncertainty values must be strictly positive")]
    NonPositiveUncertainty,
    #[error("non-finite input value")]
    NonFinite,
    #[error("channel counts differ: {0} vs {1}")]
    ChannelMismatch(usize, usize),
    #[error(transparent)]
    InvalidModel(#[from] ModelError),
}

/// Balance weights for all loss terms, with the published defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Per-component rescaling of parameter differences, `k1..k5, mu, mv,
    /// u0, v0` order.
    pub omega: [f64; PARAM_COUNT],
    pub lambda_fus: f64,
    pub lambda_glo: f64,
    pub lambda_loc: f64,
    /// Extra weight on positive (line-band) pixels in the geometric loss.
    pub lambda_m: f64,
    pub lambda_para: f64,
    pub lambda_geo: f64,
    pub lambda_pix: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            omega: [0.1, 0.1, 0.5, 1.0, 1.0, 0.1, 0.1, 0.1, 0.1],
            lambda_fus: 2.0,
            lambda_glo: 1.0,
            lambda_loc: 1.0,
            lambda_m: 2.0,
            lambda_para: 1.0,
            lambda_geo: 100.0,
            lambda_pix: 1.0,
        }
    }
}

/// Line heatmap regression loss with cross-balanced band weighting.
///
/// With `Ω⁺`/`Ω⁻` the positive/negative pixels of the ground truth and
/// `D(p) = (gt(p) − pred(p))²`, returns
/// `(|Ω⁻|/|Ω|)·Σ_{Ω⁺} D + (|Ω⁺|/|Ω|)·Σ_{Ω⁻} D`, which rebalances the thin
/// positive band against the overwhelming background. An empty band makes
/// both weights collapse and the loss is 0 by construction.
pub fn line_loss(pred: &LineHeatmap, gt: &LineHeatmap) -> Result<f64, LossError> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(LossError::DimensionMismatch(
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height(),
        ));
    }
    let part = partition(gt);
    let total = part.total() as f64;
    let d = |i: usize| {
        let diff = gt.data()[i] - pred.data()[i];
        diff * diff
    };
    let pos_sum: f64 = part.positive.iter().map(|&i| d(i)).sum();
    let neg_sum: f64 = part.negative.iter().map(|&i| d(i)).sum();
    Ok(part.negative.len() as f64 / total * pos_sum + part.positive.len() as f64 / total * neg_sum)
}

/// Parameter regression losses: global, local, fused, and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamLosses {
    pub glo: f64,
    pub loc: f64,
    pub fus: f64,
    pub total: f64,
}

/// Rescaled squared-error losses between predicted and reference parameters.
///
/// `glo` and `fus` average `(ω ⊙ Δ)²` over the 9 components of the global
/// and fused predictions; `loc` averages over the 25 entries of five local
/// `k1..k5` predictions; `total = λ_fus·fus + λ_glo·glo + λ_loc·loc`.
pub fn param_losses(
    k_g: &[f64; PARAM_COUNT],
    k_loc: &[[f64; 5]; 5],
    k_fused: &[f64; PARAM_COUNT],
    k_gt: &[f64; PARAM_COUNT],
    w: &LossWeights,
) -> ParamLosses {
    let scaled_sq = |pred: &[f64], truth: &[f64]| -> f64 {
        pred.iter()
            .zip(truth)
            .zip(&w.omega)
            .map(|((p, t), om)| {
                let d = om * (p - t);
                d * d
            })
            .sum()
    };
    let glo = scaled_sq(k_g, k_gt) / PARAM_COUNT as f64;
    let fus = scaled_sq(k_fused, k_gt) / PARAM_COUNT as f64;
    let loc = k_loc.iter().map(|loc_i| scaled_sq(loc_i, &k_gt[..5])).sum::<f64>() / 25.0;
    let total = w.lambda_fus * fus + w.lambda_glo * glo + w.lambda_loc * loc;
    ParamLosses { glo, loc, fus, total }
}

/// Geometric rectification error of an estimated model against the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoLoss {
    pub width: u32,
    pub height: u32,
    /// Per-fisheye-pixel L1 distance between the two rectified positions;
    /// 0 where either model cannot map the pixel.
    pub error_map: Vec<f64>,
    pub scalar: f64,
}

impl GeoLoss {
    pub fn error_at(&self, x: u32, y: u32) -> f64 {
        self.error_map[y as usize * self.width as usize + x as usize]
    }
}

/// Compares the rectified positions of every fisheye pixel under an
/// estimated and a reference model.
///
/// The map holds `‖T⁻¹(p; k_hat) − T⁻¹(p; k_gt)‖₁`; the scalar reweights it
/// by band membership of `gt_heatmap` (the heatmap lives on the fisheye
/// lattice): `(λ_m/|Ω|)·Σ_{Ω⁺} + (1/|Ω|)·Σ_{Ω⁻}`. Pixels beyond either
/// model's valid radius contribute 0.
pub fn geo_loss(
    k_hat: &DistortionParams,
    k_gt: &DistortionParams,
    pin: &PinholeSpec,
    lattice: (u32, u32),
    gt_heatmap: &LineHeatmap,
    lambda_m: f64,
) -> Result<GeoLoss, LossError> {
    let (width, height) = lattice;
    if (gt_heatmap.width(), gt_heatmap.height()) != (width, height) {
        return Err(LossError::DimensionMismatch(
            gt_heatmap.width(),
            gt_heatmap.height(),
            width,
            height,
        ));
    }
    let upper = std::f64::consts::FRAC_PI_2 * (1.0 - 1e-9);
    let hat = FisheyeModel::with_auto_range(*k_hat, upper)?;
    let gt = FisheyeModel::with_auto_range(*k_gt, upper)?;

    let mut error_map = vec![0.0; width as usize * height as usize];
    crate::par::for_each_row(&mut error_map, width as usize, |y, row| {
        for (x, out) in row.iter_mut().enumerate() {
            let p = [x as f64, y as f64];
            if let (Ok(a), Ok(b)) = (hat.undistort_point(p, pin), gt.undistort_point(p, pin)) {
                *out = (a[0] - b[0]).abs() + (a[1] - b[1]).abs();
            }
        }
    });

    let part = partition(gt_heatmap);
    let total = part.total() as f64;
    let pos: f64 = part.positive.iter().map(|&i| error_map[i]).sum();
    let neg: f64 = part.negative.iter().map(|&i| error_map[i]).sum();
    let scalar = lambda_m / total * pos + neg / total;
    Ok(GeoLoss { width, height, error_map, scalar })
}

/// Strictly positive per-pixel uncertainty weights.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl UncertaintyMap {
    /// Wraps raw positive weights (need not sum to 1).
    pub fn from_data(width: u32, height: u32, data: Vec<f64>) -> Result<Self, LossError> {
        if data.len() != width as usize * height as usize {
            return Err(LossError::BadLength {
                got: data.len(),
                want: width as usize * height as usize,
            });
        }
        if data.iter().any(|&v| !v.is_finite() || v <= 0.0) {
            return Err(LossError::NonPositiveUncertainty);
        }
        Ok(Self { width, height, data })
    }

    /// Uniform map `1/(w·h)` everywhere, the no-information prior.
    pub fn uniform(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self { width, height, data: vec![1.0 / n as f64; n] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Softmax over the full pixel domain, stabilized by max subtraction.
///
/// The output is a proper distribution: strictly positive, summing to 1,
/// and invariant to adding a constant to every score.
pub fn normalize_uncertainty(
    width: u32,
    height: u32,
    scores: &[f64],
) -> Result<UncertaintyMap, LossError> {
    let want = width as usize * height as usize;
    if scores.len() != want {
        return Err(LossError::BadLength { got: scores.len(), want });
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(LossError::NonFinite);
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    let data = exp.into_iter().map(|e| e / sum).collect();
    Ok(UncertaintyMap { width, height, data })
}

/// Photometric loss with per-pixel uncertainty attenuation.
///
/// With `ℓ(p)` the channel-mean absolute difference, returns
/// `(1/|Ω|)·Σ_p [ℓ(p)/U(p) + ln U(p)]`. For each pixel in isolation the
/// minimizer over `U(p) > 0` is `U(p) = ℓ(p)`, so the map learns to widen
/// where the photometric error is irreducible.
pub fn uncertainty_pixel_loss(
    i_r: &ImageBuffer,
    i_gt: &ImageBuffer,
    u: &UncertaintyMap,
) -> Result<f64, LossError> {
    if (i_r.width(), i_r.height()) != (i_gt.width(), i_gt.height()) {
        return Err(LossError::DimensionMismatch(
            i_r.width(),
            i_r.height(),
            i_gt.width(),
            i_gt.height(),
        ));
    }
    if i_r.channels() != i_gt.channels() {
        return Err(LossError::ChannelMismatch(i_r.channels(), i_gt.channels()));
    }
    if (u.width, u.height) != (i_r.width(), i_r.height()) {
        return Err(LossError::DimensionMismatch(u.width, u.height, i_r.width(), i_r.height()));
    }
    let channels = i_r.channels();
    let n = u.data.len();
    let mut acc = 0.0;
    for (i, &up) in u.data.iter().enumerate() {
        let a = &i_r.data()[i * channels..(i + 1) * channels];
        let b = &i_gt.data()[i * channels..(i + 1) * channels];
        let ell =
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / channels as f64;
        acc += ell / up + up.ln();
    }
    Ok(acc / n as f64)
}

/// The three top-level loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub para: f64,
    pub geo: f64,
    pub pix: f64,
}

/// Weighted sum `λ_para·para + λ_geo·geo + λ_pix·pix`.
pub fn total_loss(parts: LossParts, w: &LossWeights) -> f64 {
    w.lambda_para * parts.para + w.lambda_geo * parts.geo + w.lambda_pix * parts.pix
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_weights_match_published_values() {
        let w = LossWeights::default();
        assert_eq!(w.omega, [0.1, 0.1, 0.5, 1.0, 1.0, 0.1, 0.1, 0.1, 0.1]);
        assert_eq!((w.lambda_fus, w.lambda_glo, w.lambda_loc), (2.0, 1.0, 1.0));
        assert_eq!((w.lambda_m, w.lambda_para, w.lambda_geo, w.lambda_pix), (2.0, 1.0, 100.0, 1.0));
    }

    #[test]
    fn weights_deserialize_with_defaults_filled_in() {
        let w: LossWeights = serde_json::from_str(r#"{"lambda_geo": 50.0}"#).unwrap();
        assert_eq!(w.lambda_geo, 50.0);
        assert_eq!(w.lambda_fus, 2.0);
    }

    #[test]
    fn line_loss_zero_at_truth() {
        let gt = LineHeatmap::from_data(2, 2, vec![10.0, 0.0, 0.0, 0.0]);
        assert_eq!(line_loss(&gt, &gt).unwrap(), 0.0);
    }

    #[test]
    fn line_loss_hand_case_is_75() {
        let gt = LineHeatmap::from_data(2, 2, vec![10.0, 0.0, 0.0, 0.0]);
        let pred = LineHeatmap::from_data(2, 2, vec![0.0; 4]);
        assert_eq!(line_loss(&pred, &gt).unwrap(), 75.0);
    }

    #[test]
    fn line_loss_weights_swap_as_the_band_grows() {
        // Three positive pixels flips the band balance of the 2x2 case:
        // weight 1/4 on the positive sum, 3/4 on the negative.
        let gt = LineHeatmap::from_data(2, 2, vec![10.0, 10.0, 10.0, 0.0]);
        let pred = LineHeatmap::from_data(2, 2, vec![0.0, 0.0, 0.0, 2.0]);
        assert_eq!(line_loss(&pred, &gt).unwrap(), 0.25 * 300.0 + 0.75 * 4.0);
    }

    #[test]
    fn line_loss_empty_band_is_zero() {
        let gt = LineHeatmap::from_data(2, 2, vec![0.0; 4]);
        let pred = LineHeatmap::from_data(2, 2, vec![5.0, 5.0, 5.0, 5.0]);
        assert_eq!(line_loss(&pred, &gt).unwrap(), 0.0);
    }

    #[test]
    fn line_loss_rejects_mismatched_shapes() {
        let a = LineHeatmap::from_data(2, 2, vec![0.0; 4]);
        let b = LineHeatmap::from_data(2, 1, vec![0.0; 2]);
        assert!(matches!(line_loss(&a, &b), Err(LossError::DimensionMismatch(..))));
    }

    #[test]
    fn param_losses_zero_at_truth() {
        let k = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let loc = [[1.0, 2.0, 3.0, 4.0, 5.0]; 5];
        let out = param_losses(&k, &loc, &k, &k, &LossWeights::default());
        assert_eq!((out.glo, out.loc, out.fus, out.total), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn param_global_component_hand_case() {
        let w = LossWeights::default();
        let gt = [0.0; 9];
        let mut k_g = gt;
        k_g[2] = 2.0;
        let out = param_losses(&k_g, &[[0.0; 5]; 5], &gt, &gt, &w);
        assert_relative_eq!(out.glo, (0.5 * 2.0_f64).powi(2) / 9.0, max_relative = 1e-15);
        assert_eq!(out.loc, 0.0);
    }

    #[test]
    fn param_local_component_hand_case() {
        let w = LossWeights::default();
        let gt = [0.0; 9];
        let mut loc = [[0.0; 5]; 5];
        loc[3][0] = 1.0;
        let out = param_losses(&gt, &loc, &gt, &gt, &w);
        assert_relative_eq!(out.loc, 4e-4, max_relative = 1e-12);
    }

    fn equidistant(k1: f64, u0: f64, v0: f64) -> DistortionParams {
        DistortionParams::equidistant(k1, u0, v0)
    }

    #[test]
    fn geo_loss_zero_at_truth_and_positive_off_truth() {
        let pin = PinholeSpec { f: 300.0, cx: 80.0, cy: 80.0, width: 160, height: 160 };
        let gt = equidistant(300.0, 80.0, 80.0);
        let h = LineHeatmap::from_data(160, 160, vec![0.0; 160 * 160]);
        let same = geo_loss(&gt, &gt, &pin, (160, 160), &h, 2.0).unwrap();
        assert_eq!(same.scalar, 0.0);
        assert!(same.error_map.iter().all(|&v| v == 0.0));

        let mut shifted = gt;
        shifted.u0 += 1.5;
        let off = geo_loss(&shifted, &gt, &pin, (160, 160), &h, 2.0).unwrap();
        assert!(off.scalar > 0.0);
    }

    #[test]
    fn geo_loss_matches_the_equidistant_oracle_pixel() {
        // Center placed so the probed lattice pixel sits at fisheye radius
        // 39.7655 exactly; the L1 difference between rectifying with k1=300
        // and k1=301 is then 300·(tan(r/300) − tan(r/301)).
        let c = 160.0 - 39.7655;
        let pin = PinholeSpec { f: 300.0, cx: c, cy: 160.0, width: 320, height: 320 };
        let hat = equidistant(300.0, c, 160.0);
        let gt = equidistant(301.0, c, 160.0);
        let h = LineHeatmap::from_data(320, 320, vec![0.0; 320 * 320]);
        let out = geo_loss(&hat, &gt, &pin, (320, 320), &h, 2.0).unwrap();
        assert_relative_eq!(out.error_at(160, 160), 0.134452059933946, epsilon = 1e-9);
    }

    #[test]
    fn geo_loss_band_weighting_uses_lambda_m() {
        let pin = PinholeSpec { f: 300.0, cx: 2.0, cy: 2.0, width: 4, height: 4 };
        let hat = equidistant(300.0, 2.0, 2.0);
        let mut shifted = hat;
        shifted.u0 += 0.5;
        // One positive pixel; compare the weighted scalar against a direct
        // recomputation from the error map.
        let mut hdata = vec![0.0; 16];
        hdata[5] = 7.0;
        let h = LineHeatmap::from_data(4, 4, hdata);
        let out = geo_loss(&shifted, &hat, &pin, (4, 4), &h, 2.0).unwrap();
        let pos = out.error_map[5];
        let neg: f64 = out.error_map.iter().enumerate().filter(|(i, _)| *i != 5).map(|(_, v)| v).sum();
        assert_relative_eq!(out.scalar, 2.0 / 16.0 * pos + neg / 16.0, max_relative = 1e-12);
    }

    #[test]
    fn softmax_of_constants_is_uniform() {
        let u = normalize_uncertainty(4, 3, &[2.5; 12]).unwrap();
        for &v in u.data() {
            assert_relative_eq!(v, 1.0 / 12.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn softmax_closed_form_pair() {
        let u = normalize_uncertainty(2, 1, &[0.0, 3.0_f64.ln()]).unwrap();
        assert_relative_eq!(u.data()[0], 0.25, max_relative = 1e-12);
        assert_relative_eq!(u.data()[1], 0.75, max_relative = 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant_and_sums_to_one() {
        let scores = [0.3, -1.2, 4.0, 0.0, 2.2, -0.7];
        let a = normalize_uncertainty(3, 2, &scores).unwrap();
        let shifted: Vec<f64> = scores.iter().map(|s| s + 123.456).collect();
        let b = normalize_uncertainty(3, 2, &shifted).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_relative_eq!(x, y, max_relative = 1e-12);
        }
        assert!((a.data().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn uncertainty_loss_single_pixel_closed_form() {
        let i_r = ImageBuffer::from_data(1, 1, 1, vec![2.0]).unwrap();
        let i_gt = ImageBuffer::from_data(1, 1, 1, vec![0.0]).unwrap();
        let u = UncertaintyMap::from_data(1, 1, vec![2.0]).unwrap();
        assert_relative_eq!(
            uncertainty_pixel_loss(&i_r, &i_gt, &u).unwrap(),
            1.0 + 2.0_f64.ln(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn uncertainty_loss_vanishes_at_equality_with_unit_weights() {
        let img = ImageBuffer::from_fn(3, 3, 3, |x, y, c| {
            (x as f64 + y as f64 + c as f64) / 10.0
        })
        .unwrap();
        let u = UncertaintyMap::from_data(3, 3, vec![1.0; 9]).unwrap();
        assert_eq!(uncertainty_pixel_loss(&img, &img, &u).unwrap(), 0.0);
    }

    #[test]
    fn uncertainty_map_rejects_non_positive_values() {
        assert!(matches!(
            UncertaintyMap::from_data(2, 1, vec![0.5, 0.0]),
            Err(LossError::NonPositiveUncertainty)
        ));
        assert!(matches!(
            UncertaintyMap::from_data(2, 1, vec![0.5, -1.0]),
            Err(LossError::NonPositiveUncertainty)
        ));
    }

    #[test]
    fn total_loss_hand_cases() {
        let w = LossWeights::default();
        assert_eq!(total_loss(LossParts { para: 0.0, geo: 0.0, pix: 0.0 }, &w), 0.0);
        assert_eq!(total_loss(LossParts { para: 1.0, geo: 1.0, pix: 1.0 }, &w), 102.0);
        let mut scaled = w.clone();
        scaled.lambda_para *= 3.0;
        scaled.lambda_geo *= 3.0;
        scaled.lambda_pix *= 3.0;
        assert_eq!(total_loss(LossParts { para: 1.0, geo: 1.0, pix: 1.0 }, &scaled), 306.0);
    }
}
