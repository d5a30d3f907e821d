//! Raster types and color-space conversions.
//!
//! Images are carried as row-major grids of `(R, G, B)` triples with each
//! channel a real in `[0, 1]`; 8-bit quantization happens only at the file
//! boundary. The decorrelated working space is reached by a fixed RGB→LMS
//! matrix, a base-10 logarithm, and an orthogonal-style mixing transform:
//!
//! ```text
//! L = 0.3811 R + 0.5783 G + 0.0402 B
//! M = 0.1967 R + 0.7244 G + 0.0782 B
//! S = 0.0241 R + 0.1288 G + 0.8444 B
//! ```
//!
//! followed by `diag(1/√3, 1/√6, 1/√2) · [[1,1,1],[1,1,-2],[1,-1,0]]` on the
//! log-LMS channels. Statistics transfer treats the three resulting channels
//! as independent.

use once_cell::sync::Lazy;

/// Pixel location as (row, col), row 0 at the top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelLoc {
    pub row: usize,
    pub col: usize,
}

impl PixelLoc {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Row-major grid of RGB triples, channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

/// Row-major grid of (l, α, β) triples; values unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct LabPlane {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

/// Row-major grid of scalars (intensity, gradient magnitude, one lαβ channel).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

macro_rules! plane_impl {
    ($ty:ident, $elem:ty) => {
        impl $ty {
            pub fn new(width: usize, height: usize, fill: $elem) -> Self {
                assert!(width >= 1 && height >= 1, "empty plane");
                Self {
                    width,
                    height,
                    data: vec![fill; width * height],
                }
            }

            pub fn from_fn(
                width: usize,
                height: usize,
                mut f: impl FnMut(usize, usize) -> $elem,
            ) -> Self {
                assert!(width >= 1 && height >= 1, "empty plane");
                let mut data = Vec::with_capacity(width * height);
                for row in 0..height {
                    for col in 0..width {
                        data.push(f(row, col));
                    }
                }
                Self {
                    width,
                    height,
                    data,
                }
            }

            pub fn width(&self) -> usize {
                self.width
            }

            pub fn height(&self) -> usize {
                self.height
            }

            pub fn pixel_count(&self) -> usize {
                self.data.len()
            }

            #[inline]
            pub fn get(&self, row: usize, col: usize) -> $elem {
                debug_assert!(row < self.height && col < self.width);
                self.data[row * self.width + col]
            }

            #[inline]
            pub fn set(&mut self, row: usize, col: usize, v: $elem) {
                debug_assert!(row < self.height && col < self.width);
                self.data[row * self.width + col] = v;
            }

            /// Value at the clamped location; replicate padding for out-of-range
            /// signed coordinates.
            #[inline]
            pub fn get_clamped(&self, row: isize, col: isize) -> $elem {
                let r = row.clamp(0, self.height as isize - 1) as usize;
                let c = col.clamp(0, self.width as isize - 1) as usize;
                self.data[r * self.width + c]
            }

            pub fn data(&self) -> &[$elem] {
                &self.data
            }

            pub fn data_mut(&mut self) -> &mut [$elem] {
                &mut self.data
            }
        }
    };
}

plane_impl!(ImagePlane, [f64; 3]);
plane_impl!(LabPlane, [f64; 3]);
plane_impl!(ScalarGrid, f64);

impl ImagePlane {
    /// True when every channel of every pixel is finite and in `[0, 1]`.
    pub fn is_valid(&self) -> bool {
        self.data
            .iter()
            .all(|p| p.iter().all(|&c| c.is_finite() && (0.0..=1.0).contains(&c)))
    }
}

impl LabPlane {
    pub fn is_valid(&self) -> bool {
        self.data.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }
}

/// RGB→LMS matrix of the decorrelated-transfer lineage, row major.
pub const RGB_TO_LMS: [[f64; 3]; 3] = [
    [0.3811, 0.5783, 0.0402],
    [0.1967, 0.7244, 0.0782],
    [0.0241, 0.1288, 0.8444],
];

struct ColorMatrices {
    lms_to_rgb: [[f64; 3]; 3],
    /// `diag(1/√3, 1/√6, 1/√2) · [[1,1,1],[1,1,-2],[1,-1,0]]`, composed.
    mix: [[f64; 3]; 3],
    mix_inv: [[f64; 3]; 3],
}

static MATRICES: Lazy<ColorMatrices> = Lazy::new(|| {
    let s3 = 3.0f64.sqrt();
    let s6 = 6.0f64.sqrt();
    let s2 = 2.0f64.sqrt();
    let diag = [1.0 / s3, 1.0 / s6, 1.0 / s2];
    let blend: [[f64; 3]; 3] = [[1.0, 1.0, 1.0], [1.0, 1.0, -2.0], [1.0, -1.0, 0.0]];
    let mut mix = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            mix[r][c] = diag[r] * blend[r][c];
        }
    }
    // The diagonal times the integer blend must reproduce the explicit
    // composed matrix; guards against edits to either factor.
    let explicit = [
        [1.0 / s3, 1.0 / s3, 1.0 / s3],
        [1.0 / s6, 1.0 / s6, -2.0 / s6],
        [1.0 / s2, -1.0 / s2, 0.0],
    ];
    for r in 0..3 {
        for c in 0..3 {
            assert!(
                (mix[r][c] - explicit[r][c]).abs() <= 1e-12,
                "mixing matrix product deviates at ({r},{c})"
            );
        }
    }
    ColorMatrices {
        lms_to_rgb: invert3(&RGB_TO_LMS),
        mix,
        mix_inv: invert3(&mix),
    }
});

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    assert!(det.abs() > 1e-12, "singular 3x3 matrix");
    let inv_det = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    out[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
    out[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
    out[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
    out[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
    out[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
    out[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
    out[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
    out[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
    out[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
    out
}

#[inline]
fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Forward conversion into the decorrelated log space.
///
/// Each LMS channel is clamped to at least `log_floor` before the base-10
/// logarithm so black pixels stay finite.
pub fn rgb_to_lab(img: &ImagePlane, log_floor: f64) -> LabPlane {
    assert!(log_floor > 0.0, "log_floor must be positive");
    let m = &*MATRICES;
    LabPlane {
        width: img.width,
        height: img.height,
        data: img
            .data
            .iter()
            .map(|&rgb| {
                let lms = mat_vec(&RGB_TO_LMS, rgb);
                let logs = [
                    lms[0].max(log_floor).log10(),
                    lms[1].max(log_floor).log10(),
                    lms[2].max(log_floor).log10(),
                ];
                mat_vec(&m.mix, logs)
            })
            .collect(),
    }
}

/// Exact algebraic inverse of [`rgb_to_lab`], with the RGB output clamped to
/// `[0, 1]`.
pub fn lab_to_rgb(lab: &LabPlane) -> ImagePlane {
    let m = &*MATRICES;
    ImagePlane {
        width: lab.width,
        height: lab.height,
        data: lab
            .data
            .iter()
            .map(|&v| {
                let logs = mat_vec(&m.mix_inv, v);
                let lms = [
                    10f64.powf(logs[0]),
                    10f64.powf(logs[1]),
                    10f64.powf(logs[2]),
                ];
                let rgb = mat_vec(&m.lms_to_rgb, lms);
                [
                    rgb[0].clamp(0.0, 1.0),
                    rgb[1].clamp(0.0, 1.0),
                    rgb[2].clamp(0.0, 1.0),
                ]
            })
            .collect(),
    }
}

/// Per-pixel Euclidean norm of the RGB triple; values lie in `[0, √3]`.
pub fn intensity_plane(img: &ImagePlane) -> ScalarGrid {
    ScalarGrid {
        width: img.width,
        height: img.height,
        data: img
            .data
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
            .collect(),
    }
}

/// One channel of a lab plane as a scalar grid.
pub fn lab_channel(lab: &LabPlane, channel: usize) -> ScalarGrid {
    assert!(channel < 3);
    ScalarGrid {
        width: lab.width,
        height: lab.height,
        data: lab.data.iter().map(|p| p[channel]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize, lo: f64) -> ImagePlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImagePlane::from_fn(w, h, |_, _| {
            [
                rng.random_range(lo..=1.0),
                rng.random_range(lo..=1.0),
                rng.random_range(lo..=1.0),
            ]
        })
    }

    #[test]
    fn black_pixels_stay_finite() {
        let img = ImagePlane::new(4, 3, [0.0, 0.0, 0.0]);
        let lab = rgb_to_lab(&img, 1e-6);
        assert!(lab.is_valid());
    }

    #[test]
    fn mid_gray_has_near_zero_chroma() {
        let img = ImagePlane::new(1, 1, [0.5, 0.5, 0.5]);
        let lab = rgb_to_lab(&img, 1e-6);
        let [l, a, b] = lab.get(0, 0);
        // Hand multiplication of the two matrices on the gray triple.
        assert!((l - -0.5223530563496057).abs() < 1e-12, "l={l}");
        assert!(a.abs() < 0.01 && (a - 7.636271146635390e-4).abs() < 1e-12);
        assert!(b.abs() < 0.01 && (b - 9.217847080638482e-5).abs() < 1e-12);
    }

    #[test]
    fn roundtrip_recovers_bright_images() {
        let img = random_image(11, 9, 7, 0.01);
        let back = lab_to_rgb(&rgb_to_lab(&img, 1e-6));
        for (p, q) in img.data().iter().zip(back.data()) {
            for c in 0..3 {
                assert!((p[c] - q[c]).abs() < 1e-6, "{:?} vs {:?}", p, q);
            }
        }
    }

    #[test]
    fn zero_lab_inverts_to_the_unit_lms_image() {
        let lab = LabPlane::new(2, 2, [0.0, 0.0, 0.0]);
        let rgb = lab_to_rgb(&lab);
        // Oracle: invert the two matrices numerically on the zero triple.
        let inv = invert3(&RGB_TO_LMS);
        let expect = mat_vec(&inv, [1.0, 1.0, 1.0]);
        let got = rgb.get(1, 1);
        for c in 0..3 {
            assert!((got[c] - expect[c].clamp(0.0, 1.0)).abs() < 1e-12);
        }
        assert!(rgb.is_valid());
    }

    #[test]
    fn extreme_lab_values_clamp_into_range() {
        let mut lab = LabPlane::new(2, 1, [0.0, 0.0, 0.0]);
        lab.set(0, 0, [40.0, 0.0, 0.0]);
        lab.set(0, 1, [-40.0, 3.0, -3.0]);
        let rgb = lab_to_rgb(&lab);
        assert!(rgb.is_valid());
    }

    #[test]
    fn intensity_matches_scalar_loop() {
        assert_eq!(intensity_plane(&ImagePlane::new(1, 1, [0.0; 3])).get(0, 0), 0.0);
        let img345 = ImagePlane::new(1, 1, [0.3, 0.4, 0.0]);
        assert!((intensity_plane(&img345).get(0, 0) - 0.5).abs() < 1e-15);

        let img = random_image(3, 8, 6, 0.0);
        let plane = intensity_plane(&img);
        for row in 0..img.height() {
            for col in 0..img.width() {
                let [r, g, b] = img.get(row, col);
                let expect = (r * r + g * g + b * b).sqrt();
                assert!((plane.get(row, col) - expect).abs() < 1e-12);
                assert!((0.0..=3f64.sqrt()).contains(&plane.get(row, col)));
            }
        }
    }
}
