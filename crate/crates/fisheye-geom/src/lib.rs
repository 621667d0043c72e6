//! Fisheye camera geometry toolkit.
//!
//! Implements a generic radial distortion model with forward/inverse point
//! mappings and analytic parameter Jacobians, backward-mapping image warps
//! between fisheye and perspective views, length-valued line heatmaps,
//! plumb-line calibration by nonlinear least squares, a synthetic dataset
//! factory for line-rich scenes, and the matching evaluation metrics
//! (PSNR, SSIM, reprojection error, line precision/recall).
//!
//! The crate is organized around pure functions over immutable inputs:
//!
//! - [`camera`]: the distortion model and point-level mappings.
//! - [`raster`]: sample buffers, validity masks, bilinear sampling, PNG I/O.
//! - [`lines`]: polyline annotations and heatmap rasterization.
//! - [`warp`]: whole-image and point-set resampling between views.
//! - [`synth`]: deterministic synthetic dataset generation.
//! - [`losses`]: line, parameter, geometric, and uncertainty losses.
//! - [`calibrate`]: plumb-line Levenberg-Marquardt parameter estimation.
//! - [`metrics`]: the evaluation suite.
//!
//! With the default `parallel` feature, per-pixel and per-sample inner loops
//! run on rayon; disabling the feature selects an equivalent sequential path
//! with identical results.

pub mod calibrate;
pub mod camera;
pub mod lines;
pub mod losses;
pub mod metrics;
mod par;
pub mod raster;
pub mod synth;
pub mod warp;

pub use camera::{DistortionParams, FisheyeModel, PinholeSpec, RayDirection, ValidityReport};
pub use lines::{LineHeatmap, LineSet, PixelPartition, Polyline};
pub use raster::{ImageBuffer, ValidityMask};
