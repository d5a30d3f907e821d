//! Fixture builders shared by the integration and acceptance suites.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use restyle_core::ImagePlane;

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Deterministic photo-like scene: sky gradient, ground, a building block,
/// a sun disc, plus mild noise.
pub fn photo_fixture(width: usize, height: usize, seed: u64) -> ImagePlane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImagePlane::from_fn(width, height, |row, col| {
        let y = row as f64 / height as f64;
        let x = col as f64 / width as f64;
        let horizon = 0.58;
        let mut rgb = if y < horizon {
            let t = y / horizon;
            [
                0.38 + 0.34 * t,
                0.55 + 0.27 * t,
                0.86 + 0.06 * t,
            ]
        } else {
            let t = (y - horizon) / (1.0 - horizon);
            [0.34 - 0.10 * t, 0.44 - 0.12 * t, 0.27 - 0.06 * t]
        };
        // sun disc
        let (sx, sy) = (0.76, 0.22);
        let d = ((x - sx) * (x - sx) + (y - sy) * (y - sy)).sqrt();
        if d < 0.13 {
            let blend = ((0.13 - d) / 0.13).min(1.0);
            rgb = [
                rgb[0] + blend * (0.97 - rgb[0]),
                rgb[1] + blend * (0.88 - rgb[1]),
                rgb[2] + blend * (0.55 - rgb[2]),
            ];
        }
        // building block
        if (0.14..0.36).contains(&x) && (0.38..0.85).contains(&y) {
            let shade = 1.0 - 0.25 * ((y - 0.38) / 0.47);
            rgb = [0.46 * shade, 0.41 * shade, 0.39 * shade];
        }
        let noise = 0.008;
        [
            clamp01(rgb[0] + rng.random_range(-noise..noise)),
            clamp01(rgb[1] + rng.random_range(-noise..noise)),
            clamp01(rgb[2] + rng.random_range(-noise..noise)),
        ]
    })
}

/// Match lines mapping every grid point to itself with score 1.
pub fn self_match_grid(width: usize, height: usize, step: usize) -> String {
    let mut out = String::new();
    for row in (0..height).step_by(step) {
        for col in (0..width).step_by(step) {
            out.push_str(&format!("{col} {row} {col} {row} 1.0\n"));
        }
    }
    out
}

/// Left/right flat-noise pair: the input is warm-left cool-right, the
/// reference recolors the same layout cool-left warm-right.
pub struct TwoRegionPair {
    pub input: ImagePlane,
    pub reference: ImagePlane,
    pub matches: String,
    pub width: usize,
    pub height: usize,
}

pub fn two_region_pair(seed: u64) -> TwoRegionPair {
    let (width, height) = (96, 64);
    let noise = 0.02;
    let paint = |left: [f64; 3], right: [f64; 3], seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImagePlane::from_fn(width, height, |_, col| {
            let base = if col < width / 2 { left } else { right };
            [
                clamp01(base[0] + rng.random_range(-noise..noise)),
                clamp01(base[1] + rng.random_range(-noise..noise)),
                clamp01(base[2] + rng.random_range(-noise..noise)),
            ]
        })
    };
    let input = paint([0.75, 0.45, 0.30], [0.25, 0.50, 0.70], seed);
    let reference = paint([0.30, 0.45, 0.75], [0.80, 0.55, 0.35], seed ^ 0x5eed);

    let mut matches = String::new();
    for &row in &[16usize, 48] {
        for &col in &[8usize, 24, 40, 56, 72, 88] {
            matches.push_str(&format!("{col} {row} {col} {row} 1.0\n"));
        }
    }
    TwoRegionPair {
        input,
        reference,
        matches,
        width,
        height,
    }
}

/// Mean absolute error over all RGB channels.
pub fn mean_abs_error(a: &ImagePlane, b: &ImagePlane) -> f64 {
    assert_eq!(a.pixel_count(), b.pixel_count());
    let mut sum = 0.0;
    for (p, q) in a.data().iter().zip(b.data()) {
        for c in 0..3 {
            sum += (p[c] - q[c]).abs();
        }
    }
    sum / (3 * a.pixel_count()) as f64
}
