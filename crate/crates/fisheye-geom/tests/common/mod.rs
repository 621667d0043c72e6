//! Shared helpers for the integration suites.
#![allow(dead_code)]

use fisheye_geom::lines::LineSet;
use fisheye_geom::{FisheyeModel, PinholeSpec, Polyline};
use rand::Rng;

/// Brute-force reference rasterization of the length-valued heatmap.
///
/// Mirrors the documented contract directly with no pruning or hierarchy:
/// for every pixel, scan every chain in input order and every segment of
/// it, keep the nearest chain with exact-distance ties resolved toward the
/// longer one, and write its arc length when the squared distance is
/// within 1. Arithmetic follows the reference expressions so results are
/// comparable bit for bit.
pub fn naive_heatmap(lines: &LineSet, width: u32, height: u32) -> Vec<f64> {
    let arc = |chain: &Polyline| -> f64 {
        chain
            .points
            .windows(2)
            .map(|s| {
                let (dx, dy) = (s[1][0] - s[0][0], s[1][1] - s[0][1]);
                (dx * dx + dy * dy).sqrt()
            })
            .sum()
    };
    let seg_dist_sq = |px: f64, py: f64, a: [f64; 2], b: [f64; 2]| -> f64 {
        let abx = b[0] - a[0];
        let aby = b[1] - a[1];
        let apx = px - a[0];
        let apy = py - a[1];
        let len_sq = abx * abx + aby * aby;
        let t =
            if len_sq > 0.0 { ((apx * abx + apy * aby) / len_sq).clamp(0.0, 1.0) } else { 0.0 };
        let qx = a[0] + t * abx;
        let qy = a[1] + t * aby;
        let dx = px - qx;
        let dy = py - qy;
        dx * dx + dy * dy
    };

    let mut data = vec![0.0; width as usize * height as usize];
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64, y as f64);
            let mut best_sq = f64::INFINITY;
            let mut best_len = 0.0;
            for chain in &lines.lines {
                let mut chain_sq = f64::INFINITY;
                for s in chain.points.windows(2) {
                    let d = seg_dist_sq(px, py, s[0], s[1]);
                    if d < chain_sq {
                        chain_sq = d;
                    }
                }
                let len = arc(chain);
                if chain_sq < best_sq || (chain_sq == best_sq && len > best_len) {
                    best_sq = chain_sq;
                    best_len = len;
                }
            }
            if best_sq <= 1.0 {
                data[(y * width + x) as usize] = best_len;
            }
        }
    }
    data
}

/// Random polyline set with vertices spilling slightly past the lattice.
pub fn random_line_set(rng: &mut impl Rng, extent: f64) -> LineSet {
    let chains = rng.random_range(1..=6);
    let lines = (0..chains)
        .map(|_| {
            let vertices = rng.random_range(2..=6);
            Polyline::new(
                (0..vertices)
                    .map(|_| {
                        [
                            rng.random_range(-4.0..extent + 4.0),
                            rng.random_range(-4.0..extent + 4.0),
                        ]
                    })
                    .collect(),
            )
        })
        .collect();
    LineSet::new(lines)
}

/// Standard normal draw by the Box-Muller transform.
pub fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Straight chains whose distorted images cover the whole fisheye frame.
///
/// Endpoints are drawn from the perspective pre-image of the frame and a
/// candidate is kept only when every densified vertex maps inside it, so
/// the observed set constrains the model out to the corners rather than
/// just over the central disc. Returns the perspective chains and their
/// fisheye images with matching vertex order.
pub fn observed_chains(
    rng: &mut impl Rng,
    model: &FisheyeModel,
    pin: &PinholeSpec,
    count: usize,
    spacing: f64,
) -> (LineSet, LineSet) {
    let (w, h) = (pin.width as f64 - 1.0, pin.height as f64 - 1.0);
    let mut ext = 0.0_f64;
    for corner in [[0.0, 0.0], [w, 0.0], [0.0, h], [w, h]] {
        let q = model.undistort_point(corner, pin).unwrap();
        ext = ext.max((q[0] - pin.cx).abs()).max((q[1] - pin.cy).abs());
    }
    let min_len = 0.55 * w.min(h);
    let mut straight = Vec::with_capacity(count);
    let mut distorted = Vec::with_capacity(count);
    'candidate: while straight.len() < count {
        let a = [
            pin.cx + rng.random_range(-ext..ext),
            pin.cy + rng.random_range(-ext..ext),
        ];
        let b = [
            pin.cx + rng.random_range(-ext..ext),
            pin.cy + rng.random_range(-ext..ext),
        ];
        if ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() < min_len {
            continue;
        }
        let chain = Polyline::new(vec![a, b]).densified(spacing);
        let mut image = Vec::with_capacity(chain.points.len());
        for &p in &chain.points {
            match model.distort_point(p, pin) {
                Ok(q) if q[0] >= 0.0 && q[0] <= w && q[1] >= 0.0 && q[1] <= h => image.push(q),
                _ => continue 'candidate,
            }
        }
        straight.push(chain);
        distorted.push(Polyline::new(image));
    }
    (LineSet::new(straight), LineSet::new(distorted))
}

