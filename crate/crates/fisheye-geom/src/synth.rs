//! Deterministic synthetic dataset generation.
//!
//! A dataset pairs fisheye views with the perspective ground truth they were
//! warped from: images, coverage masks, line annotations in both frames, and
//! their length-valued heatmaps. Distortion parameters are drawn per sample
//! by rejection from a configurable box, keeping only profiles monotone over
//! the working angle range.
//!
//! Everything is reproducible from a single seed. Each (source, sample)
//! pair owns an independent RNG stream, so regenerating a dataset with the
//! same seed yields byte-identical manifests regardless of source order or
//! partial failures.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{DistortionParams, FisheyeModel, ModelError, PinholeSpec, ProjectionError};
use crate::lines::{rasterize_heatmap, LineError, LineHeatmap, LineSet, Polyline};
use crate::raster::{ImageBuffer, RasterError, ValidityMask};
use crate::warp::{distort_image, WarpError};

/// Rejection sampling attempts per parameter draw.
const MAX_ATTEMPTS: u32 = 1000;

/// Segment spacing for densifying annotation chains, pixels.
const DENSIFY_SPACING: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no monotone parameter draw in {0} attempts; ranges are too aggressive")]
    SamplingExhausted(u32),
    #[error("corpus at {0} has no usable image/annotation pairs")]
    EmptyCorpus(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Warp(#[from] WarpError),
    #[error(transparent)]
    Lines(#[from] LineError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

/// Parameter sampling ranges, all uniform and inclusive.
///
/// `k1` is drawn directly; higher coefficients are drawn as ratios of the
/// sampled `k1` so the box scales with focal length. A draw is kept only
/// when the profile is monotone over `[0, theta_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Samples generated per corpus source.
    pub per_image: u32,
    pub k1_range: [f64; 2],
    pub k2_ratio: [f64; 2],
    pub k3_ratio: [f64; 2],
    pub k4_ratio: [f64; 2],
    pub k5_ratio: [f64; 2],
    /// Pixel scale range, shared by `mu` and `mv`.
    pub m_range: [f64; 2],
    /// Distortion center base, pixels.
    pub center: [f64; 2],
    /// Uniform jitter half-width added to each center coordinate.
    pub center_jitter: f64,
    /// Monotonicity is required over `[0, theta_max]`, radians.
    pub theta_max: f64,
    pub seed: u64,
}

impl SamplerConfig {
    /// Ranges that produce plausible fisheye profiles around a target view:
    /// `k1` within ±50% of the focal length, mild higher-order terms, ±10%
    /// pixel scales, and center jitter of 5% of the short side.
    pub fn for_pinhole(pin: &PinholeSpec, seed: u64) -> Self {
        Self {
            per_image: 1,
            k1_range: [0.5 * pin.f, 1.5 * pin.f],
            k2_ratio: [-0.1, 0.3],
            k3_ratio: [-0.05, 0.1],
            k4_ratio: [-0.02, 0.05],
            k5_ratio: [-0.02, 0.05],
            m_range: [0.9, 1.1],
            center: [pin.cx, pin.cy],
            center_jitter: 0.05 * pin.width.min(pin.height) as f64,
            theta_max: 1.2,
            seed,
        }
    }
}

/// RNG stream for sample `j` of source `i` under a dataset seed.
///
/// Streams are independent, so inserting or corrupting a source never
/// shifts the draws of any other (source, sample) pair.
pub fn sample_rng(seed: u64, source_index: u32, sample_index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((source_index as u64) << 32) | sample_index as u64);
    rng
}

/// Draws one monotone parameter set by rejection.
///
/// Each attempt consumes a fixed sequence of nine uniforms (`k1`, four
/// ratios, `mu`, `mv`, two center offsets), so the stream position after a
/// rejection is deterministic.
pub fn sample_params(
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<DistortionParams, SynthError> {
    for _ in 0..MAX_ATTEMPTS {
        let k1 = rng.random_range(cfg.k1_range[0]..=cfg.k1_range[1]);
        let k2 = k1 * rng.random_range(cfg.k2_ratio[0]..=cfg.k2_ratio[1]);
        let k3 = k1 * rng.random_range(cfg.k3_ratio[0]..=cfg.k3_ratio[1]);
        let k4 = k1 * rng.random_range(cfg.k4_ratio[0]..=cfg.k4_ratio[1]);
        let k5 = k1 * rng.random_range(cfg.k5_ratio[0]..=cfg.k5_ratio[1]);
        let mu = rng.random_range(cfg.m_range[0]..=cfg.m_range[1]);
        let mv = rng.random_range(cfg.m_range[0]..=cfg.m_range[1]);
        let du = rng.random_range(-cfg.center_jitter..=cfg.center_jitter);
        let dv = rng.random_range(-cfg.center_jitter..=cfg.center_jitter);
        let params = DistortionParams {
            k: [k1, k2, k3, k4, k5],
            mu,
            mv,
            u0: cfg.center[0] + du,
            v0: cfg.center[1] + dv,
        };
        if params.validate(cfg.theta_max).monotone {
            return Ok(params);
        }
    }
    Err(SynthError::SamplingExhausted(MAX_ATTEMPTS))
}

/// One generated sample, fully in memory.
#[derive(Debug, Clone)]
pub struct DataSample {
    pub id: String,
    /// Synthesized fisheye view.
    pub fisheye: ImageBuffer,
    /// Fisheye pixels with a perspective pre-image.
    pub fisheye_mask: ValidityMask,
    /// Perspective ground truth on the pinhole lattice.
    pub gt_image: ImageBuffer,
    /// Annotation chains mapped into the fisheye frame.
    pub lines_distorted: LineSet,
    /// Densified annotation chains on the pinhole lattice; vertex order
    /// matches `lines_distorted` one to one.
    pub lines_straight: LineSet,
    pub heatmap_distorted: LineHeatmap,
    pub heatmap_straight: LineHeatmap,
    pub params: DistortionParams,
    pub pinhole: PinholeSpec,
}

/// Target view with the conventional focal length for a lattice: 0.9375
/// of the short side, centered.
pub fn default_pinhole(width: u32, height: u32) -> PinholeSpec {
    PinholeSpec::centered(0.9375 * width.min(height) as f64, width, height)
}

fn resize_to(src: &ImageBuffer, width: u32, height: u32) -> Result<ImageBuffer, RasterError> {
    if (src.width(), src.height()) == (width, height) {
        return Ok(src.clone());
    }
    let fx = axis_scale(src.width(), width);
    let fy = axis_scale(src.height(), height);
    ImageBuffer::from_fn(width, height, src.channels(), |x, y, c| {
        src.bilinear_sample(x as f64 * fx, y as f64 * fy).expect("in-domain by construction")[c]
    })
}

/// Corner-to-corner scale from an output axis back to the source axis.
fn axis_scale(src: u32, dst: u32) -> f64 {
    if dst > 1 {
        (src - 1) as f64 / (dst - 1) as f64
    } else {
        0.0
    }
}

/// Warps one source through a distortion model into a full sample.
///
/// The source image and its annotations are rescaled to the pinhole
/// lattice, the fisheye view is rendered by backward warping, and each
/// densified chain vertex is pushed through the forward distortion, so the
/// two line sets correspond vertex by vertex.
pub fn generate_sample(
    src_image: &ImageBuffer,
    src_lines: &LineSet,
    id: &str,
    params: &DistortionParams,
    pin: &PinholeSpec,
    out_size: (u32, u32),
) -> Result<DataSample, SynthError> {
    src_lines.validate()?;
    let gt_image = resize_to(src_image, pin.width, pin.height)?;
    let lx = 1.0 / axis_scale(src_image.width(), pin.width).max(f64::MIN_POSITIVE);
    let ly = 1.0 / axis_scale(src_image.height(), pin.height).max(f64::MIN_POSITIVE);
    let straight: Vec<Polyline> = src_lines
        .lines
        .iter()
        .map(|chain| {
            Polyline::new(
                chain.points.iter().map(|p| [p[0] * lx, p[1] * ly]).collect(),
            )
            .densified(DENSIFY_SPACING)
        })
        .collect();
    let lines_straight = LineSet::new(straight);

    let (fisheye, fisheye_mask) = distort_image(&gt_image, params, pin, out_size)?;

    // Vertices on the lattice corners sit exactly at corner_theta, so the
    // model range gets a hair of slack before auto-truncation trims it.
    let mut needed = pin.corner_theta();
    for chain in &lines_straight.lines {
        for &p in &chain.points {
            needed = needed.max(pin.ray_from_pixel(p).theta);
        }
    }
    let model = FisheyeModel::with_auto_range(*params, needed * (1.0 + 1e-6))?;
    let distorted: Result<Vec<Polyline>, ProjectionError> = lines_straight
        .lines
        .iter()
        .map(|chain| {
            chain
                .points
                .iter()
                .map(|&p| model.distort_point(p, pin))
                .collect::<Result<Vec<_>, _>>()
                .map(Polyline::new)
        })
        .collect();
    let lines_distorted = LineSet::new(distorted?);

    let heatmap_straight = rasterize_heatmap(&lines_straight, pin.width, pin.height);
    let heatmap_distorted = rasterize_heatmap(&lines_distorted, out_size.0, out_size.1);

    Ok(DataSample {
        id: id.to_string(),
        fisheye,
        fisheye_mask,
        gt_image,
        lines_distorted,
        lines_straight,
        heatmap_distorted,
        heatmap_straight,
        params: *params,
        pinhole: *pin,
    })
}

/// Manifest entry for one sample; paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub fisheye: String,
    pub mask: String,
    pub gt_image: String,
    pub lines_distorted: String,
    pub lines_straight: String,
    pub heatmap_distorted: String,
    pub heatmap_straight: String,
    pub params: DistortionParams,
    pub pinhole: PinholeSpec,
}

/// A source that was skipped, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub source: String,
    pub error: String,
}

/// Dataset index: one JSON line per sample in `manifest.jsonl`, skipped
/// sources in `errors.jsonl`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub errors: Vec<ErrorRecord>,
}

impl Manifest {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), SynthError> {
        let dir = dir.as_ref();
        let mut manifest = String::new();
        for r in &self.records {
            manifest.push_str(&serde_json::to_string(r)?);
            manifest.push('\n');
        }
        std::fs::write(dir.join("manifest.jsonl"), manifest)?;
        let mut errors = String::new();
        for e in &self.errors {
            errors.push_str(&serde_json::to_string(e)?);
            errors.push('\n');
        }
        std::fs::write(dir.join("errors.jsonl"), errors)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, SynthError> {
        let dir = dir.as_ref();
        let mut records = Vec::new();
        for line in std::fs::read_to_string(dir.join("manifest.jsonl"))?.lines() {
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(line)?);
            }
        }
        let mut errors = Vec::new();
        let errors_path = dir.join("errors.jsonl");
        if errors_path.exists() {
            for line in std::fs::read_to_string(errors_path)?.lines() {
                if !line.trim().is_empty() {
                    errors.push(serde_json::from_str(line)?);
                }
            }
        }
        Ok(Self { records, errors })
    }
}

/// Generates a dataset from a corpus of perspective sources.
///
/// The corpus directory holds `X.png` images with sibling `X.json` line
/// annotations. Sources are processed in file-stem order; each yields
/// `cfg.per_image` samples with ids `{stem}_{j}`. Unreadable sources are
/// recorded and skipped rather than aborting the run. The fisheye lattice
/// matches the pinhole lattice.
pub fn generate_dataset(
    corpus_dir: impl AsRef<Path>,
    pin: &PinholeSpec,
    cfg: &SamplerConfig,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest, SynthError> {
    let corpus_dir = corpus_dir.as_ref();
    let out_dir = out_dir.as_ref();
    for sub in ["images", "masks", "lines", "heatmaps"] {
        std::fs::create_dir_all(out_dir.join(sub))?;
    }

    let mut stems: Vec<String> = std::fs::read_dir(corpus_dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let path = e.path();
            if path.extension().and_then(|s| s.to_str()) == Some("png") {
                path.file_stem().map(|s| s.to_string_lossy().into_owned())
            } else {
                None
            }
        })
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(SynthError::EmptyCorpus(corpus_dir.to_path_buf()));
    }

    let mut manifest = Manifest::default();
    for (i, stem) in stems.iter().enumerate() {
        let image_path = corpus_dir.join(format!("{stem}.png"));
        let lines_path = corpus_dir.join(format!("{stem}.json"));
        let loaded = ImageBuffer::load_png(&image_path)
            .map_err(SynthError::from)
            .and_then(|img| Ok((img, LineSet::load_json(&lines_path)?)));
        let (src_image, src_lines) = match loaded {
            Ok(pair) => pair,
            Err(err) => {
                manifest
                    .errors
                    .push(ErrorRecord { source: format!("{stem}.png"), error: err.to_string() });
                continue;
            }
        };
        for j in 0..cfg.per_image {
            let mut rng = sample_rng(cfg.seed, i as u32, j);
            let params = sample_params(cfg, &mut rng)?;
            let id = format!("{stem}_{j}");
            let sample = generate_sample(
                &src_image,
                &src_lines,
                &id,
                &params,
                pin,
                (pin.width, pin.height),
            )?;
            manifest.records.push(write_sample(out_dir, &sample)?);
        }
    }
    manifest.save(out_dir)?;
    Ok(manifest)
}

/// Writes one sample's artifacts and returns its manifest record.
pub fn write_sample(out_dir: &Path, sample: &DataSample) -> Result<ManifestRecord, SynthError> {
    let id = &sample.id;
    let record = ManifestRecord {
        id: id.clone(),
        fisheye: format!("images/{id}.fisheye.png"),
        mask: format!("masks/{id}.png"),
        gt_image: format!("images/{id}.gt.png"),
        lines_distorted: format!("lines/{id}.distorted.json"),
        lines_straight: format!("lines/{id}.straight.json"),
        heatmap_distorted: format!("heatmaps/{id}.distorted.png"),
        heatmap_straight: format!("heatmaps/{id}.straight.png"),
        params: sample.params,
        pinhole: sample.pinhole,
    };
    sample.fisheye.save_png(out_dir.join(&record.fisheye))?;
    sample.fisheye_mask.save_png(out_dir.join(&record.mask))?;
    sample.gt_image.save_png(out_dir.join(&record.gt_image))?;
    sample.lines_distorted.save_json(out_dir.join(&record.lines_distorted))?;
    sample.lines_straight.save_json(out_dir.join(&record.lines_straight))?;
    sample.heatmap_distorted.save_png16(out_dir.join(&record.heatmap_distorted))?;
    sample.heatmap_straight.save_png16(out_dir.join(&record.heatmap_straight))?;
    Ok(record)
}

/// Deterministic perspective test scene: a smooth gradient background with
/// soft dark strokes along a family of straight lines.
///
/// Three stroke families cycle with `variant`: an axis-aligned grid with one
/// diagonal, a diamond with an off-center cross, and a fan of chords. All
/// stroke arc lengths stay below `0.72 * min(width, height)`, so every line
/// of a card up to 352 px survives a length threshold of 255.
pub fn test_card(width: u32, height: u32, variant: u32) -> (ImageBuffer, LineSet) {
    let w = (width - 1) as f64;
    let h = (height - 1) as f64;
    let seg = |x0: f64, y0: f64, x1: f64, y1: f64| {
        Polyline::new(vec![[x0 * w, y0 * h], [x1 * w, y1 * h]])
    };
    let lines = match variant % 3 {
        0 => vec![
            seg(0.22, 0.15, 0.22, 0.85),
            seg(0.51, 0.16, 0.51, 0.84),
            seg(0.78, 0.15, 0.78, 0.85),
            seg(0.15, 0.26, 0.85, 0.26),
            seg(0.16, 0.74, 0.84, 0.74),
            seg(0.30, 0.70, 0.70, 0.30),
        ],
        1 => vec![
            seg(0.50, 0.14, 0.86, 0.50),
            seg(0.86, 0.50, 0.50, 0.86),
            seg(0.50, 0.86, 0.14, 0.50),
            seg(0.14, 0.50, 0.50, 0.14),
            seg(0.38, 0.32, 0.38, 0.68),
            seg(0.30, 0.42, 0.66, 0.42),
        ],
        _ => vec![
            seg(0.20, 0.22, 0.80, 0.34),
            seg(0.20, 0.42, 0.80, 0.62),
            seg(0.20, 0.62, 0.80, 0.30),
            seg(0.20, 0.80, 0.80, 0.78),
            seg(0.32, 0.18, 0.36, 0.88),
        ],
    };
    let set = LineSet::new(lines);

    const STROKE_RADIUS: f64 = 1.8;
    const INK: f64 = 0.08;
    let image = ImageBuffer::from_fn(width, height, 1, |x, y, _| {
        let (xf, yf) = (x as f64 / w.max(1.0), y as f64 / h.max(1.0));
        let bg = 0.35 + 0.3 * xf + 0.2 * yf - 0.15 * xf * yf;
        let mut d_sq = f64::INFINITY;
        for chain in &set.lines {
            for s in chain.points.windows(2) {
                d_sq = d_sq.min(crate::lines::point_segment_dist_sq(
                    x as f64, y as f64, s[0][0], s[0][1], s[1][0], s[1][1],
                ));
            }
        }
        if d_sq < STROKE_RADIUS * STROKE_RADIUS {
            let t_sq = d_sq / (STROKE_RADIUS * STROKE_RADIUS);
            let blend = (1.0 - t_sq) * (1.0 - t_sq);
            bg * (1.0 - blend) + INK * blend
        } else {
            bg
        }
    })
    .expect("card values are finite");
    (image, set)
}
