//! Per-pixel hierarchical features for one image.
//!
//! Style-related features (patch intensities `M`, color `C`, intensity `I`,
//! gradient patch `DV`, absolute location `L_a`) compare pixels within one
//! image; style-independent features (texture `T`, relative location `L_r`,
//! locality-constrained coding `S`) survive restyling and compare pixels
//! across the two images. `L_r` and `S` are ridge-regression coordinates in
//! the basis of the nearest matched points, stored sparse over matched-point
//! ids.

use crate::correspondence::{MatchedPointSet, Side};
use crate::error::{Error, Result};
use crate::imagecore::{intensity_plane, ImagePlane, PixelLoc};
use rayon::prelude::*;

/// Term weights of the distance and affinity sums plus the two ridge
/// parameters. All strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWeights {
    pub lambda_m: f64,
    pub lambda_t: f64,
    pub lambda_c: f64,
    pub lambda_dv: f64,
    pub lambda_s: f64,
    pub lambda_la: f64,
    pub lambda_lr: f64,
    pub n_alpha: f64,
    pub n_beta: f64,
}

impl Default for FeatureWeights {
    fn default() -> Self {
        Self {
            lambda_m: 0.1,
            lambda_t: 0.001,
            lambda_c: 0.0001,
            lambda_dv: 1e-6,
            lambda_s: 0.1,
            lambda_la: 0.01,
            lambda_lr: 0.01,
            n_alpha: 1000.0,
            n_beta: 1e6,
        }
    }
}

impl FeatureWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_m", self.lambda_m),
            ("lambda_t", self.lambda_t),
            ("lambda_c", self.lambda_c),
            ("lambda_dv", self.lambda_dv),
            ("lambda_s", self.lambda_s),
            ("lambda_la", self.lambda_la),
            ("lambda_lr", self.lambda_lr),
            ("n_alpha", self.n_alpha),
            ("n_beta", self.n_beta),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Ablation switches for the five primitive feature kinds. A disabled kind
/// contributes zero to every distance and affinity; feature computation
/// itself is unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureToggles {
    pub color: bool,
    pub distance: bool,
    pub texture: bool,
    pub patch: bool,
    pub gradient: bool,
}

impl Default for FeatureToggles {
    fn default() -> Self {
        Self {
            color: true,
            distance: true,
            texture: true,
            patch: true,
            gradient: true,
        }
    }
}

impl FeatureToggles {
    pub fn any_enabled(&self) -> bool {
        self.color || self.distance || self.texture || self.patch || self.gradient
    }
}

/// Sparse vector over matched-point ids, kept sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pairs: Vec<(u32, f64)>,
}

impl SparseCode {
    pub fn new(mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_unstable_by_key(|&(id, _)| id);
        debug_assert!(pairs.windows(2).all(|w| w[0].0 < w[1].0), "duplicate ids");
        Self { pairs }
    }

    pub fn pairs(&self) -> &[(u32, f64)] {
        &self.pairs
    }

    pub fn nnz(&self) -> usize {
        self.pairs.len()
    }

    /// Squared Euclidean distance over the full matched-id dimension.
    pub fn dist2(&self, other: &SparseCode) -> f64 {
        let (a, b) = (&self.pairs, &other.pairs);
        let (mut i, mut j) = (0, 0);
        let mut sum = 0.0;
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => {
                    sum += a[i].1 * a[i].1;
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    sum += b[j].1 * b[j].1;
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    let d = a[i].1 - b[j].1;
                    sum += d * d;
                    i += 1;
                    j += 1;
                }
            }
        }
        sum += a[i..].iter().map(|&(_, v)| v * v).sum::<f64>();
        sum += b[j..].iter().map(|&(_, v)| v * v).sum::<f64>();
        sum
    }
}

/// Borrowed view of the style-independent sub-vector `f = [S, T, L_a, L_r]`.
/// Built by construction from those four features only.
#[derive(Debug, Clone, Copy)]
pub struct StyleFreeFeature<'a> {
    pub s: &'a SparseCode,
    pub t: &'a [f64; 10],
    pub la: &'a [f64; 2],
    pub lr: &'a SparseCode,
}

/// All hierarchical features of every pixel of one image.
#[derive(Debug, Clone)]
pub struct PixelFeatureBank {
    side: Side,
    width: usize,
    height: usize,
    patch_side: usize,
    m: Vec<f64>,
    dv: Vec<f64>,
    c: Vec<[f64; 3]>,
    i: Vec<f64>,
    t: Vec<[f64; 10]>,
    la: Vec<[f64; 2]>,
    lr: Vec<SparseCode>,
    s: Vec<SparseCode>,
}

impl PixelFeatureBank {
    pub fn side(&self) -> Side {
        self.side
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn patch_len(&self) -> usize {
        self.patch_side * self.patch_side
    }

    #[inline]
    fn idx(&self, loc: PixelLoc) -> usize {
        debug_assert!(loc.row < self.height && loc.col < self.width);
        loc.row * self.width + loc.col
    }

    pub fn patch(&self, loc: PixelLoc) -> &[f64] {
        let p2 = self.patch_len();
        let i = self.idx(loc);
        &self.m[i * p2..(i + 1) * p2]
    }

    pub fn gradient(&self, loc: PixelLoc) -> &[f64] {
        let p2 = self.patch_len();
        let i = self.idx(loc);
        &self.dv[i * p2..(i + 1) * p2]
    }

    pub fn color(&self, loc: PixelLoc) -> &[f64; 3] {
        &self.c[self.idx(loc)]
    }

    pub fn intensity(&self, loc: PixelLoc) -> f64 {
        self.i[self.idx(loc)]
    }

    pub fn texture(&self, loc: PixelLoc) -> &[f64; 10] {
        &self.t[self.idx(loc)]
    }

    pub fn abs_location(&self, loc: PixelLoc) -> &[f64; 2] {
        &self.la[self.idx(loc)]
    }

    pub fn rel_location(&self, loc: PixelLoc) -> &SparseCode {
        &self.lr[self.idx(loc)]
    }

    pub fn llc(&self, loc: PixelLoc) -> &SparseCode {
        &self.s[self.idx(loc)]
    }

    pub fn style_free(&self, loc: PixelLoc) -> StyleFreeFeature<'_> {
        let i = self.idx(loc);
        StyleFreeFeature {
            s: &self.s[i],
            t: &self.t[i],
            la: &self.la[i],
            lr: &self.lr[i],
        }
    }
}

#[inline]
fn intensity_at(img: &ImagePlane, row: isize, col: isize) -> f64 {
    let [r, g, b] = img.get_clamped(row, col);
    (r * r + g * g + b * b).sqrt()
}

#[inline]
fn gradient_at(img: &ImagePlane, row: isize, col: isize) -> (f64, f64) {
    let r = row.clamp(0, img.height() as isize - 1);
    let c = col.clamp(0, img.width() as isize - 1);
    let dx = (intensity_at(img, r, c + 1) - intensity_at(img, r, c - 1)) / 2.0;
    let dy = (intensity_at(img, r + 1, c) - intensity_at(img, r - 1, c)) / 2.0;
    (dx, dy)
}

/// Row-major intensities of the `patch_side`² neighborhood centered at `loc`,
/// replicate-padded at the borders.
pub fn patch_intensity(img: &ImagePlane, loc: PixelLoc, patch_side: usize) -> Vec<f64> {
    assert!(patch_side % 2 == 1 && patch_side >= 1, "patch_side must be odd");
    let r = patch_side as isize / 2;
    let mut out = Vec::with_capacity(patch_side * patch_side);
    for dr in -r..=r {
        for dc in -r..=r {
            out.push(intensity_at(img, loc.row as isize + dr, loc.col as isize + dc));
        }
    }
    out
}

/// Gradient magnitude √(dIx² + dIy²) over the patch, central differences on
/// the intensity plane with replicate boundaries.
pub fn gradient_patch(img: &ImagePlane, loc: PixelLoc, patch_side: usize) -> Vec<f64> {
    assert!(patch_side % 2 == 1 && patch_side >= 1, "patch_side must be odd");
    let r = patch_side as isize / 2;
    let mut out = Vec::with_capacity(patch_side * patch_side);
    for dr in -r..=r {
        for dc in -r..=r {
            let (dx, dy) = gradient_at(img, loc.row as isize + dr, loc.col as isize + dc);
            out.push((dx * dx + dy * dy).sqrt());
        }
    }
    out
}

/// Texture descriptor of the patch: intensity standard deviation, mean
/// gradient magnitude, and an L2-normalized 8-bin gradient-orientation
/// histogram (bins of π/4 over [0, 2π), magnitude-weighted votes).
pub fn texture_feature(img: &ImagePlane, loc: PixelLoc, patch_side: usize) -> [f64; 10] {
    assert!(patch_side % 2 == 1 && patch_side >= 3, "patch_side must be odd and >= 3");
    let r = patch_side as isize / 2;
    let n = (patch_side * patch_side) as f64;

    let mut sum = 0.0;
    let mut grads = Vec::with_capacity(patch_side * patch_side);
    let mut vals = Vec::with_capacity(patch_side * patch_side);
    for dr in -r..=r {
        for dc in -r..=r {
            let (row, col) = (loc.row as isize + dr, loc.col as isize + dc);
            vals.push(intensity_at(img, row, col));
            grads.push(gradient_at(img, row, col));
            sum += vals[vals.len() - 1];
        }
    }
    let mean = sum / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;

    let mut hist = [0.0f64; 8];
    let mut mag_sum = 0.0;
    for &(dx, dy) in &grads {
        let mag = (dx * dx + dy * dy).sqrt();
        mag_sum += mag;
        if mag > 0.0 {
            let mut angle = dy.atan2(dx);
            if angle < 0.0 {
                angle += std::f64::consts::TAU;
            }
            let bin = ((angle / (std::f64::consts::PI / 4.0)) as usize).min(7);
            hist[bin] += mag;
        }
    }
    let norm = hist.iter().map(|h| h * h).sum::<f64>().sqrt();
    if norm > 0.0 {
        for h in &mut hist {
            *h /= norm;
        }
    }

    let mut out = [0.0; 10];
    out[0] = var.max(0.0).sqrt();
    out[1] = mag_sum / n;
    out[2..].copy_from_slice(&hist);
    out
}

/// Solves `(BᵀB + ridge·Id) x = Bᵀ target` by Cholesky, where `basis` holds
/// the columns of `B`. The ridge term keeps the system positive definite.
pub fn ridge_coefficients(basis: &[Vec<f64>], target: &[f64], ridge: f64) -> Vec<f64> {
    let k = basis.len();
    assert!(k > 0 && ridge > 0.0);
    let mut gram = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    for a in 0..k {
        debug_assert_eq!(basis[a].len(), target.len());
        for b in a..k {
            let dot: f64 = basis[a].iter().zip(&basis[b]).map(|(x, y)| x * y).sum();
            gram[a * k + b] = dot;
            gram[b * k + a] = dot;
        }
        gram[a * k + a] += ridge;
        rhs[a] = basis[a].iter().zip(target).map(|(x, y)| x * y).sum();
    }
    cholesky_solve(&mut gram, &mut rhs, k);
    rhs
}

/// In-place Cholesky factorization and solve of a symmetric positive-definite
/// system; `a` is k×k row major, `b` becomes the solution.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], k: usize) {
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= a[j * k + p] * a[j * k + p];
        }
        debug_assert!(d > 0.0, "matrix not positive definite");
        let ljj = d.sqrt();
        a[j * k + j] = ljj;
        for i in (j + 1)..k {
            let mut v = a[i * k + j];
            for p in 0..j {
                v -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = v / ljj;
        }
    }
    // forward then backward substitution
    for i in 0..k {
        let mut v = b[i];
        for p in 0..i {
            v -= a[i * k + p] * b[p];
        }
        b[i] = v / a[i * k + i];
    }
    for i in (0..k).rev() {
        let mut v = b[i];
        for p in (i + 1)..k {
            v -= a[p * k + i] * b[p];
        }
        b[i] = v / a[i * k + i];
    }
}

fn scatter(ids: &[usize], coeffs: Vec<f64>) -> SparseCode {
    SparseCode::new(
        ids.iter()
            .zip(coeffs)
            .map(|(&id, v)| (id as u32, v))
            .collect(),
    )
}

/// Ridge coordinates of `loc` in the basis of its `neighbor_count` nearest
/// matched locations on this side, scattered over matched-point ids.
pub fn relative_location(
    loc: PixelLoc,
    matches: &MatchedPointSet,
    side: Side,
    n_alpha: f64,
    neighbor_count: usize,
) -> SparseCode {
    let ids = matches.nearest_matches(side, loc, neighbor_count);
    let basis: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            let p = matches.entry(id).loc(side);
            vec![p.row as f64, p.col as f64]
        })
        .collect();
    let target = [loc.row as f64, loc.col as f64];
    scatter(&ids, ridge_coefficients(&basis, &target, n_alpha))
}

fn appearance_stack(img: &ImagePlane, loc: PixelLoc, patch_side: usize) -> Vec<f64> {
    let mut stack = patch_intensity(img, loc, patch_side);
    let [r, g, b] = img.get_clamped(loc.row as isize, loc.col as isize);
    stack.extend_from_slice(&[r, g, b]);
    stack.push(intensity_at(img, loc.row as isize, loc.col as isize));
    stack.extend(gradient_patch(img, loc, patch_side));
    stack
}

/// Locality-constrained coding: ridge coordinates of the pixel's appearance
/// stack `[M, C, I, DV]` in the basis of the nearest matched points' stacks.
pub fn llc_feature(
    loc: PixelLoc,
    img: &ImagePlane,
    matches: &MatchedPointSet,
    side: Side,
    n_beta: f64,
    patch_side: usize,
    neighbor_count: usize,
) -> SparseCode {
    let ids = matches.nearest_matches(side, loc, neighbor_count);
    let basis: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| appearance_stack(img, matches.entry(id).loc(side), patch_side))
        .collect();
    let target = appearance_stack(img, loc, patch_side);
    scatter(&ids, ridge_coefficients(&basis, &target, n_beta))
}

/// Computes every feature of every pixel. Pixels are independent, so the
/// work is parallelized over rows.
pub fn build_feature_bank(
    img: &ImagePlane,
    matches: &MatchedPointSet,
    side: Side,
    weights: &FeatureWeights,
    patch_side: usize,
    neighbor_count: usize,
) -> PixelFeatureBank {
    assert!(patch_side % 2 == 1 && patch_side >= 3, "patch_side must be odd and >= 3");
    assert!(neighbor_count >= 1 && neighbor_count <= matches.len());
    let (w, h) = (img.width(), img.height());
    let p2 = patch_side * patch_side;
    let intensity = intensity_plane(img);

    // Appearance stacks of the matched points, shared by every pixel's coding.
    let match_stacks: Vec<Vec<f64>> = (0..matches.len())
        .map(|id| appearance_stack(img, matches.entry(id).loc(side), patch_side))
        .collect();

    struct RowOut {
        m: Vec<f64>,
        dv: Vec<f64>,
        c: Vec<[f64; 3]>,
        i: Vec<f64>,
        t: Vec<[f64; 10]>,
        la: Vec<[f64; 2]>,
        lr: Vec<SparseCode>,
        s: Vec<SparseCode>,
    }

    let rows: Vec<RowOut> = (0..h)
        .into_par_iter()
        .map(|row| {
            let mut out = RowOut {
                m: Vec::with_capacity(w * p2),
                dv: Vec::with_capacity(w * p2),
                c: Vec::with_capacity(w),
                i: Vec::with_capacity(w),
                t: Vec::with_capacity(w),
                la: Vec::with_capacity(w),
                lr: Vec::with_capacity(w),
                s: Vec::with_capacity(w),
            };
            for col in 0..w {
                let loc = PixelLoc::new(row, col);
                out.m.extend(patch_intensity(img, loc, patch_side));
                out.dv.extend(gradient_patch(img, loc, patch_side));
                out.c.push(img.get(row, col));
                out.i.push(intensity.get(row, col));
                out.t.push(texture_feature(img, loc, patch_side));
                out.la.push([row as f64 / h as f64, col as f64 / w as f64]);

                let ids = matches.nearest_matches(side, loc, neighbor_count);
                let loc_basis: Vec<Vec<f64>> = ids
                    .iter()
                    .map(|&id| {
                        let p = matches.entry(id).loc(side);
                        vec![p.row as f64, p.col as f64]
                    })
                    .collect();
                let alpha = ridge_coefficients(
                    &loc_basis,
                    &[loc.row as f64, loc.col as f64],
                    weights.n_alpha,
                );
                out.lr.push(scatter(&ids, alpha));

                let feat_basis: Vec<Vec<f64>> =
                    ids.iter().map(|&id| match_stacks[id].clone()).collect();
                let target = appearance_stack(img, loc, patch_side);
                let beta = ridge_coefficients(&feat_basis, &target, weights.n_beta);
                out.s.push(scatter(&ids, beta));
            }
            out
        })
        .collect();

    let mut bank = PixelFeatureBank {
        side,
        width: w,
        height: h,
        patch_side,
        m: Vec::with_capacity(w * h * p2),
        dv: Vec::with_capacity(w * h * p2),
        c: Vec::with_capacity(w * h),
        i: Vec::with_capacity(w * h),
        t: Vec::with_capacity(w * h),
        la: Vec::with_capacity(w * h),
        lr: Vec::with_capacity(w * h),
        s: Vec::with_capacity(w * h),
    };
    for row in rows {
        bank.m.extend(row.m);
        bank.dv.extend(row.dv);
        bank.c.extend(row.c);
        bank.i.extend(row.i);
        bank.t.extend(row.t);
        bank.la.extend(row.la);
        bank.lr.extend(row.lr);
        bank.s.extend(row.s);
    }
    bank
}

pub(crate) fn dense_dist2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}
