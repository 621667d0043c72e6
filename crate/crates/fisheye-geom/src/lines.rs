//! Polyline annotations and length-valued line heatmaps.
//!
//! A heatmap pixel carries the arc length of the nearest annotated chain
//! when that chain passes within 1 px, and 0 elsewhere, so the map encodes
//! both where lines are and how salient (long) they are. Distorted lines
//! are curves, hence chains rather than 2-point segments throughout.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

/// Band half-width of the heatmap support around each chain, in pixels.
const BAND_RADIUS_SQ: f64 = 1.0;

/// Margin added to the bounding-box reject so float rounding can never
/// discard a chain whose true distance sits exactly on the band edge.
const BBOX_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LineError {
    #[error("chain {0} has fewer than 2 vertices")]
    TooFewVertices(usize),
    #[error("chain {chain} repeats vertex {index}")]
    RepeatedVertex { chain: usize, index: usize },
    #[error("chain {0} contains a non-finite coordinate")]
    NonFinite(usize),
    #[error("failed to read or write line file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed line JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("failed to read or write heatmap image: {0}")]
    Image(#[from] image::ImageError),
}

/// Ordered chain of sub-pixel vertices, top-left origin, y down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
}

impl Polyline {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        Self { points }
    }

    /// Sum of segment lengths in pixels.
    pub fn arc_length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|s| {
                let (dx, dy) = (s[1][0] - s[0][0], s[1][1] - s[0][1]);
                (dx * dx + dy * dy).sqrt()
            })
            .sum()
    }

    /// Straight-line distance between the chain endpoints.
    pub fn chord_length(&self) -> f64 {
        let (a, b) = (self.points[0], self.points[self.points.len() - 1]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        (dx * dx + dy * dy).sqrt()
    }

    /// Largest distance from any vertex to the endpoint chord; measures how
    /// far the chain bends away from a straight segment.
    pub fn max_chord_deviation(&self) -> f64 {
        let (a, b) = (self.points[0], self.points[self.points.len() - 1]);
        self.points
            .iter()
            .map(|&p| point_segment_dist_sq(p[0], p[1], a[0], a[1], b[0], b[1]).sqrt())
            .fold(0.0, f64::max)
    }

    /// Copy with every segment subdivided so that vertex spacing is at most
    /// `max_spacing`; original vertices are preserved exactly.
    pub fn densified(&self, max_spacing: f64) -> Polyline {
        let mut out = Vec::with_capacity(self.points.len());
        for s in self.points.windows(2) {
            let (a, b) = (s[0], s[1]);
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let pieces = (len / max_spacing).ceil().max(1.0) as usize;
            out.push(a);
            for j in 1..pieces {
                let t = j as f64 / pieces as f64;
                out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        out.push(self.points[self.points.len() - 1]);
        Polyline::new(out)
    }
}

/// A set of polyline annotations.
///
/// JSON form: `{"lines":[[[x,y],…],…]}`. Arc lengths are derived from the
/// vertices on demand, so they can never disagree with the geometry.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LineSet {
    pub lines: Vec<Polyline>,
}

impl LineSet {
    pub fn new(lines: Vec<Polyline>) -> Self {
        Self { lines }
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    /// Structural checks: every chain has ≥ 2 finite vertices and no
    /// consecutive repeats.
    pub fn validate(&self) -> Result<(), LineError> {
        for (ci, chain) in self.lines.iter().enumerate() {
            if chain.points.len() < 2 {
                return Err(LineError::TooFewVertices(ci));
            }
            if chain.points.iter().flatten().any(|v| !v.is_finite()) {
                return Err(LineError::NonFinite(ci));
            }
            for (i, s) in chain.points.windows(2).enumerate() {
                if s[0] == s[1] {
                    return Err(LineError::RepeatedVertex { chain: ci, index: i + 1 });
                }
            }
        }
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self, LineError> {
        let text = std::fs::read_to_string(path)?;
        let set: LineSet = serde_json::from_str(&text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<(), LineError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}

/// Per-pixel arc length of the nearest chain within 1 px, 0 outside the band.
#[derive(Debug, Clone, PartialEq)]
pub struct LineHeatmap {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl LineHeatmap {
    pub fn from_data(width: u32, height: u32, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize);
        Self { width, height, data }
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

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Writes a 16-bit PNG with values `round(length)`. Lengths above 65535
    /// do not fit the channel; the exact float values then go to a sidecar
    /// JSON next to the image (same path with `.json` appended).
    pub fn save_png16(&self, path: impl AsRef<Path>) -> Result<(), LineError> {
        let pixels: Vec<u16> = self.data.iter().map(|&v| v.round().clamp(0.0, 65535.0) as u16).collect();
        let img: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
            image::ImageBuffer::from_raw(self.width, self.height, pixels)
                .expect("length checked by construction");
        img.save_with_format(&path, image::ImageFormat::Png)?;
        if self.data.iter().any(|&v| v > 65535.0) {
            std::fs::write(sidecar_path(path.as_ref()), serde_json::to_string(&self.data)?)?;
        }
        Ok(())
    }

    /// Loads a heatmap written by [`LineHeatmap::save_png16`], preferring the
    /// exact sidecar when present.
    pub fn load_png16(path: impl AsRef<Path>) -> Result<Self, LineError> {
        let img = image::open(&path)?.into_luma16();
        let (width, height) = (img.width(), img.height());
        let sidecar = sidecar_path(path.as_ref());
        if sidecar.exists() {
            let data: Vec<f64> = serde_json::from_str(&std::fs::read_to_string(sidecar)?)?;
            if data.len() == width as usize * height as usize {
                return Ok(Self { width, height, data });
            }
        }
        let data = img.into_raw().into_iter().map(|v| v as f64).collect();
        Ok(Self { width, height, data })
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}

/// The heatmap support split into the positive band Ω⁺ and its complement
/// Ω⁻, as row-major pixel indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelPartition {
    pub width: u32,
    pub height: u32,
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
}

impl PixelPartition {
    pub fn total(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Splits a heatmap's pixels by `value > 0`.
pub fn partition(h: &LineHeatmap) -> PixelPartition {
    let mut positive = Vec::new();
    let mut negative = Vec::new();
    for (i, &v) in h.data.iter().enumerate() {
        if v > 0.0 {
            positive.push(i);
        } else {
            negative.push(i);
        }
    }
    PixelPartition { width: h.width, height: h.height, positive, negative }
}

/// Squared distance from `(px, py)` to the segment `(ax, ay)–(bx, by)`.
///
/// The arithmetic sequence here is the reference semantics for the heatmap
/// band test; distance comparisons stay in the squared domain throughout.
pub fn point_segment_dist_sq(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let abx = bx - ax;
    let aby = by - ay;
    let apx = px - ax;
    let apy = py - ay;
    let len_sq = abx * abx + aby * aby;
    let t = if len_sq > 0.0 { ((apx * abx + apy * aby) / len_sq).clamp(0.0, 1.0) } else { 0.0 };
    let qx = ax + t * abx;
    let qy = ay + t * aby;
    let dx = px - qx;
    let dy = py - qy;
    dx * dx + dy * dy
}

/// Segments per subchain bounding box in the rasterizer.
const SPAN_SEGMENTS: usize = 16;

struct Span {
    bbox: [f64; 4],
    /// Vertex range `first..=last`; segments are the windows inside it.
    first: usize,
    last: usize,
}

struct ChainGeometry {
    bbox: [f64; 4],
    spans: Vec<Span>,
    arc_length: f64,
}

fn bbox_of(points: &[[f64; 2]]) -> [f64; 4] {
    let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in points {
        bbox[0] = bbox[0].min(p[0]);
        bbox[1] = bbox[1].min(p[1]);
        bbox[2] = bbox[2].max(p[0]);
        bbox[3] = bbox[3].max(p[1]);
    }
    bbox
}

/// Squared distance from a point to a bounding box, zero inside.
fn bbox_dist_sq(px: f64, py: f64, bbox: &[f64; 4]) -> f64 {
    let ox = (bbox[0] - px).max(px - bbox[2]).max(0.0);
    let oy = (bbox[1] - py).max(py - bbox[3]).max(0.0);
    ox * ox + oy * oy
}

/// Rasterizes the length-valued heatmap of a line set.
///
/// Every pixel takes the arc length of its nearest chain when the squared
/// distance is within 1, with exact-distance ties resolved toward the longer
/// chain; chains are visited in input order, so the output is deterministic.
/// A two-level bounding box hierarchy (whole chain, then runs of
/// [`SPAN_SEGMENTS`] segments) prunes candidates that provably cannot reach
/// the band around a pixel; pruned segments all sit strictly outside the
/// band, so the surviving minimum and its ties are unchanged.
pub fn rasterize_heatmap(lines: &LineSet, width: u32, height: u32) -> LineHeatmap {
    let mut data = vec![0.0; width as usize * height as usize];
    if lines.is_empty() {
        return LineHeatmap { width, height, data };
    }

    let geoms: Vec<ChainGeometry> = lines
        .lines
        .iter()
        .map(|chain| {
            let last_vertex = chain.points.len() - 1;
            let spans = (0..last_vertex)
                .step_by(SPAN_SEGMENTS)
                .map(|first| {
                    let last = (first + SPAN_SEGMENTS).min(last_vertex);
                    Span { bbox: bbox_of(&chain.points[first..=last]), first, last }
                })
                .collect();
            ChainGeometry {
                bbox: bbox_of(&chain.points),
                spans,
                arc_length: chain.arc_length(),
            }
        })
        .collect();

    par::for_each_row(&mut data, width as usize, |y, row| {
        let py = y as f64;
        for (x, out) in row.iter_mut().enumerate() {
            let px = x as f64;
            let mut best_sq = f64::INFINITY;
            let mut best_len = 0.0;
            for (chain, geom) in lines.lines.iter().zip(&geoms) {
                if bbox_dist_sq(px, py, &geom.bbox) > BAND_RADIUS_SQ + BBOX_SLACK {
                    continue;
                }
                let mut chain_sq = f64::INFINITY;
                for span in &geom.spans {
                    if bbox_dist_sq(px, py, &span.bbox) > BAND_RADIUS_SQ + BBOX_SLACK {
                        continue;
                    }
                    for s in chain.points[span.first..=span.last].windows(2) {
                        let d = point_segment_dist_sq(px, py, s[0][0], s[0][1], s[1][0], s[1][1]);
                        if d < chain_sq {
                            chain_sq = d;
                        }
                    }
                }
                if chain_sq < best_sq || (chain_sq == best_sq && geom.arc_length > best_len) {
                    best_sq = chain_sq;
                    best_len = geom.arc_length;
                }
            }
            if best_sq <= BAND_RADIUS_SQ {
                *out = best_len;
            }
        }
    });

    LineHeatmap { width, height, data }
}
