//! Backward-mapping resampling between fisheye and perspective views.
//!
//! All warps iterate over output pixels and pull from the source through the
//! point mappings in `camera`, so the output has no holes and every source
//! read is bounds-checked. Pixels whose pre-image is unusable are written as
//! 0 and recorded in the accompanying [`ValidityMask`].

use crate::camera::{DistortionParams, FisheyeModel, PinholeSpec};
use crate::lines::{LineSet, Polyline};
use crate::par;
use crate::raster::{ImageBuffer, RasterError, ValidityMask};
use thiserror::Error;

/// Upper θ bound used when a warp needs the model's full usable range
/// rather than a lattice-derived one; just inside the projection's π/2 pole.
const FULL_RANGE: f64 = std::f64::consts::FRAC_PI_2 * (1.0 - 1e-9);

/// Guard for degenerate lattices whose corner angle is 0.
const MIN_RANGE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum WarpError {
    /// The radial profile turns around inside the θ range the warp must
    /// cover, so the mapping is not invertible where it is needed.
    #[error(
        "radial profile not monotone over the needed range: usable to {theta_max:.4} rad, need {needed:.4}"
    )]
    InvalidModel { theta_max: f64, needed: f64 },
    #[error(transparent)]
    Model(#[from] crate::camera::ModelError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Resamples a fisheye image into the perspective view described by `pin`.
///
/// Each output pixel is backward-mapped through the forward distortion and
/// bilinearly sampled from `i_f`; out-of-bounds or out-of-range pixels stay
/// 0 with a false mask entry. The profile must be monotone over the θ range
/// reached by the output lattice corners.
pub fn rectify_image(
    i_f: &ImageBuffer,
    params: &DistortionParams,
    pin: &PinholeSpec,
) -> Result<(ImageBuffer, ValidityMask), WarpError> {
    let needed = pin.corner_theta().max(MIN_RANGE);
    let model = FisheyeModel::new(*params, needed)?;
    if !model.validity().monotone {
        return Err(WarpError::InvalidModel {
            theta_max: model.validity().theta_max,
            needed,
        });
    }
    backward_warp(i_f, pin.width, pin.height, |p_r| {
        model.distort_point(p_r, pin).ok()
    })
}

/// Synthesizes a fisheye view of a perspective image.
///
/// The opposite warp: each fisheye output pixel is mapped through the
/// inverse distortion and sampled from `i_p`. Output pixels beyond the
/// model's valid radius are masked out.
pub fn distort_image(
    i_p: &ImageBuffer,
    params: &DistortionParams,
    pin: &PinholeSpec,
    out_size: (u32, u32),
) -> Result<(ImageBuffer, ValidityMask), WarpError> {
    let needed = pin.corner_theta().max(MIN_RANGE);
    let model = FisheyeModel::new(*params, needed)?;
    if !model.validity().monotone {
        return Err(WarpError::InvalidModel {
            theta_max: model.validity().theta_max,
            needed,
        });
    }
    backward_warp(i_p, out_size.0, out_size.1, |p_f| {
        model.undistort_point(p_f, pin).ok()
    })
}

fn backward_warp(
    source: &ImageBuffer,
    out_width: u32,
    out_height: u32,
    map: impl Fn([f64; 2]) -> Option<[f64; 2]> + Sync,
) -> Result<(ImageBuffer, ValidityMask), WarpError> {
    let channels = source.channels();
    let mut out = ImageBuffer::new(out_width, out_height, channels)?;
    let mut mask = ValidityMask::new(out_width, out_height, false);
    let row_len = out.row_len();
    par::for_each_row_pair(
        out.data_mut(),
        row_len,
        mask.data_mut(),
        out_width as usize,
        |y, row, mask_row| {
            for x in 0..out_width as usize {
                let Some(src) = map([x as f64, y as f64]) else { continue };
                let Ok(sample) = source.bilinear_sample(src[0], src[1]) else { continue };
                row[x * channels..(x + 1) * channels].copy_from_slice(&sample[..channels]);
                mask_row[x] = true;
            }
        },
    );
    Ok((out, mask))
}

/// Mapping outcome for a single vertex of [`rectify_points`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum VertexStatus {
    /// Mapped and inside the output lattice.
    Mapped,
    /// Mapped correctly but landing outside `[0, w−1] × [0, h−1]`.
    OutOfLattice,
    /// Beyond the model's valid radius; the input coordinate is kept.
    OutOfRange,
}

/// Result of mapping a line set into the rectified view.
///
/// Chain grouping and vertex counts are preserved; `status` mirrors the
/// vertex layout of `lines`.
#[derive(Debug, Clone, PartialEq)]
pub struct RectifiedLines {
    pub lines: LineSet,
    pub status: Vec<Vec<VertexStatus>>,
}

impl RectifiedLines {
    /// True when every vertex mapped (lattice membership not required).
    pub fn all_in_range(&self) -> bool {
        self.status.iter().flatten().all(|s| *s != VertexStatus::OutOfRange)
    }

    /// Chains split at unmappable vertices and truncated to runs of mapped
    /// coordinates at least 2 vertices long; suitable for rasterization.
    pub fn usable_lines(&self) -> LineSet {
        let mut out = Vec::new();
        for (chain, st) in self.lines.lines.iter().zip(&self.status) {
            let mut run: Vec<[f64; 2]> = Vec::new();
            for (p, s) in chain.points.iter().zip(st) {
                if *s == VertexStatus::OutOfRange {
                    if run.len() >= 2 {
                        out.push(Polyline::new(std::mem::take(&mut run)));
                    } else {
                        run.clear();
                    }
                } else {
                    run.push(*p);
                }
            }
            if run.len() >= 2 {
                out.push(Polyline::new(run));
            }
        }
        LineSet::new(out)
    }
}

/// Maps every vertex of a line set through the inverse distortion.
///
/// Vertices beyond the valid radius are flagged [`VertexStatus::OutOfRange`]
/// and keep their input coordinates; the whole set is always returned. The
/// model range is auto-truncated to the monotone part, so a profile that
/// turns around far from the data still maps everything it can.
pub fn rectify_points(
    points: &LineSet,
    params: &DistortionParams,
    pin: &PinholeSpec,
) -> Result<RectifiedLines, WarpError> {
    let model = FisheyeModel::with_auto_range(*params, FULL_RANGE)?;
    let mut lines = Vec::with_capacity(points.len());
    let mut status = Vec::with_capacity(points.len());
    let in_lattice = |q: [f64; 2]| {
        q[0] >= 0.0
            && q[0] <= (pin.width - 1) as f64
            && q[1] >= 0.0
            && q[1] <= (pin.height - 1) as f64
    };
    for chain in &points.lines {
        let mut pts = Vec::with_capacity(chain.points.len());
        let mut st = Vec::with_capacity(chain.points.len());
        for &p in &chain.points {
            match model.undistort_point(p, pin) {
                Ok(q) => {
                    st.push(if in_lattice(q) { VertexStatus::Mapped } else { VertexStatus::OutOfLattice });
                    pts.push(q);
                }
                Err(_) => {
                    st.push(VertexStatus::OutOfRange);
                    pts.push(p);
                }
            }
        }
        lines.push(Polyline::new(pts));
        status.push(st);
    }
    Ok(RectifiedLines { lines: LineSet::new(lines), status })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::DistortionParams;

    fn gradient_image(w: u32, h: u32) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, 1, |x, y, _| {
            (x as f64 / (w - 1) as f64 * 0.7 + y as f64 / (h - 1) as f64 * 0.3).min(1.0)
        })
        .unwrap()
    }

    fn mild_model() -> (DistortionParams, PinholeSpec) {
        let params = DistortionParams {
            k: [300.0, 12.0, -2.0, 0.0, 0.0],
            mu: 1.0,
            mv: 1.0,
            u0: 160.0,
            v0: 160.0,
        };
        let pin = PinholeSpec { f: 300.0, cx: 160.0, cy: 160.0, width: 321, height: 321 };
        (params, pin)
    }

    #[test]
    fn rectified_center_pixel_reads_the_distortion_center() {
        let (params, pin) = mild_model();
        let mut i_f = gradient_image(321, 321);
        i_f.pixel_mut(160, 160)[0] = 0.875;
        let (out, mask) = rectify_image(&i_f, &params, &pin).unwrap();
        assert!(mask.get(160, 160));
        assert_eq!(out.pixel(160, 160)[0], 0.875);
    }

    #[test]
    fn distorted_center_pixel_reads_the_principal_point() {
        let (params, pin) = mild_model();
        let mut i_p = gradient_image(321, 321);
        i_p.pixel_mut(160, 160)[0] = 0.125;
        let (out, mask) = distort_image(&i_p, &params, &pin, (321, 321)).unwrap();
        assert!(mask.get(160, 160));
        assert_eq!(out.pixel(160, 160)[0], 0.125);
    }

    #[test]
    fn non_monotone_profile_is_rejected_by_both_warps() {
        // Turns around near 0.44 rad, well inside the lattice's corner angle.
        let params = DistortionParams {
            k: [300.0, -500.0, 0.0, 0.0, 0.0],
            mu: 1.0,
            mv: 1.0,
            u0: 160.0,
            v0: 160.0,
        };
        let pin = PinholeSpec { f: 300.0, cx: 160.0, cy: 160.0, width: 321, height: 321 };
        let img = gradient_image(321, 321);
        assert!(matches!(
            rectify_image(&img, &params, &pin),
            Err(WarpError::InvalidModel { .. })
        ));
        assert!(matches!(
            distort_image(&img, &params, &pin, (321, 321)),
            Err(WarpError::InvalidModel { .. })
        ));
    }

    #[test]
    fn mask_excludes_pixels_without_a_source() {
        // A profile steeper than the pinhole (k1 > f) pushes edge rays past
        // the fisheye frame, so rectified corners have no pre-image there.
        let params = DistortionParams {
            k: [380.0, 10.0, 0.0, 0.0, 0.0],
            mu: 1.0,
            mv: 1.0,
            u0: 160.0,
            v0: 160.0,
        };
        let pin = PinholeSpec { f: 300.0, cx: 160.0, cy: 160.0, width: 321, height: 321 };
        let i_f = gradient_image(321, 321);
        let (out, mask) = rectify_image(&i_f, &params, &pin).unwrap();
        let total = 321 * 321;
        assert!(mask.count() < total, "corners should lose coverage");
        assert!(mask.count() > total / 2, "the bulk of the view survives");
        for y in 0..321 {
            for x in 0..321u32 {
                if !mask.get(x, y) {
                    assert_eq!(out.pixel(x, y)[0], 0.0);
                }
            }
        }
        assert!(!mask.get(0, 0), "the far corner has no fisheye pre-image");
    }

    #[test]
    fn vertical_line_through_center_stays_vertical() {
        let (params, pin) = mild_model();
        let mut i_p = ImageBuffer::new(321, 321, 1).unwrap();
        for y in 0..321 {
            i_p.pixel_mut(160, y)[0] = 1.0;
        }
        let (out, mask) = distort_image(&i_p, &params, &pin, (321, 321)).unwrap();
        for y in 0..321u32 {
            if !mask.get(160, y) {
                continue;
            }
            let brightest = (0..321u32)
                .filter(|&x| mask.get(x, y))
                .max_by(|&a, &b| out.pixel(a, y)[0].partial_cmp(&out.pixel(b, y)[0]).unwrap())
                .unwrap();
            if out.pixel(brightest, y)[0] > 0.0 {
                assert_eq!(brightest, 160, "radial line bowed at row {y}");
            }
        }
    }

    #[test]
    fn rectify_points_restores_collinearity() {
        let (params, pin) = mild_model();
        let model = FisheyeModel::new(params, 1.2).unwrap();
        // Straight chain in the perspective view, bent by the forward map.
        let src: Vec<[f64; 2]> = (0..25)
            .map(|i| [40.0 + 10.0 * i as f64, 60.0 + 7.5 * i as f64])
            .collect();
        let bent: Vec<[f64; 2]> =
            src.iter().map(|&p| model.distort_point(p, &pin).unwrap()).collect();
        let set = LineSet::new(vec![Polyline::new(bent)]);
        let rect = rectify_points(&set, &params, &pin).unwrap();
        assert!(rect.all_in_range());
        let chain = &rect.lines.lines[0];
        for (got, want) in chain.points.iter().zip(&src) {
            let d = ((got[0] - want[0]).powi(2) + (got[1] - want[1]).powi(2)).sqrt();
            assert!(d <= 1e-6, "vertex error {d}");
        }
        assert!(chain.max_chord_deviation() <= 1e-6);
    }

    #[test]
    fn rectify_points_flags_out_of_range_vertices_and_keeps_the_rest() {
        let (params, pin) = mild_model();
        let model = FisheyeModel::with_auto_range(params, super::FULL_RANGE).unwrap();
        let beyond = model.validity().max_radius + 1.0;
        let set = LineSet::new(vec![Polyline::new(vec![
            [160.0, 160.0],
            [200.0, 160.0],
            [160.0 + beyond, 160.0],
        ])]);
        let rect = rectify_points(&set, &params, &pin).unwrap();
        assert_eq!(
            rect.status[0],
            vec![VertexStatus::Mapped, VertexStatus::Mapped, VertexStatus::OutOfRange]
        );
        // The unmappable vertex keeps its input coordinate.
        assert_eq!(rect.lines.lines[0].points[2], [160.0 + beyond, 160.0]);
        assert_eq!(rect.usable_lines().lines[0].points.len(), 2);
    }

    #[test]
    fn empty_set_maps_to_empty_set() {
        let (params, pin) = mild_model();
        let rect = rectify_points(&LineSet::default(), &params, &pin).unwrap();
        assert!(rect.lines.is_empty());
    }
}
