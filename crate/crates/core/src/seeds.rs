//! Seed superpixels: one cluster grown around each matched point by
//! thresholded feature distance. Pixels that no matched point claims stay
//! uncovered and are handled by the bipartite partition afterwards.

use crate::correspondence::MatchedPointSet;
use crate::features::{dense_dist2, FeatureToggles, FeatureWeights, PixelFeatureBank};
use crate::imagecore::PixelLoc;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Where a superpixel came from: grown around a matched point, or produced
/// by the bipartite partition as the cluster with this index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuperpixelOrigin {
    Seed(usize),
    Partition(usize),
}

/// Per-pixel superpixel labels; `None` marks uncovered pixels. Ids are dense
/// and every id owns at least one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelLabelMap {
    width: usize,
    height: usize,
    labels: Vec<i32>,
    origins: Vec<SuperpixelOrigin>,
}

impl SuperpixelLabelMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn label(&self, loc: PixelLoc) -> Option<usize> {
        let v = self.labels[loc.row * self.width + loc.col];
        (v >= 0).then_some(v as usize)
    }

    pub fn raw_labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn superpixel_count(&self) -> usize {
        self.origins.len()
    }

    pub fn origin(&self, id: usize) -> SuperpixelOrigin {
        self.origins[id]
    }

    pub fn covered_count(&self) -> usize {
        self.labels.iter().filter(|&&v| v >= 0).count()
    }

    /// Locations of all uncovered pixels in row-major order.
    pub fn uncovered(&self) -> Vec<PixelLoc> {
        let mut out = Vec::new();
        for row in 0..self.height {
            for col in 0..self.width {
                if self.labels[row * self.width + col] < 0 {
                    out.push(PixelLoc::new(row, col));
                }
            }
        }
        out
    }

    /// Registers a new superpixel and returns its id.
    pub fn add_superpixel(&mut self, origin: SuperpixelOrigin) -> usize {
        self.origins.push(origin);
        self.origins.len() - 1
    }

    /// Assigns an uncovered pixel to an existing superpixel.
    pub fn assign(&mut self, loc: PixelLoc, id: usize) {
        debug_assert!(id < self.origins.len());
        debug_assert!(self.labels[loc.row * self.width + loc.col] < 0, "pixel already labeled");
        self.labels[loc.row * self.width + loc.col] = id as i32;
    }

    /// Drops registered superpixels that own no pixel and renumbers the rest
    /// densely, preserving order.
    pub fn compact(&mut self) {
        let mut counts = vec![0usize; self.origins.len()];
        for &l in &self.labels {
            if l >= 0 {
                counts[l as usize] += 1;
            }
        }
        let mut remap = vec![-1i32; self.origins.len()];
        let mut kept = Vec::with_capacity(self.origins.len());
        for (id, &n) in counts.iter().enumerate() {
            if n > 0 {
                remap[id] = kept.len() as i32;
                kept.push(self.origins[id]);
            }
        }
        for l in &mut self.labels {
            if *l >= 0 {
                *l = remap[*l as usize];
                debug_assert!(*l >= 0);
            }
        }
        self.origins = kept;
    }
}

/// Style-related feature distance between a pixel and a matched-point pixel
/// of the same image: Σ ‖Δ‖²/λ over the M, T, C, DV, L_a terms. Larger means
/// farther; compare against the clustering threshold with `<=`.
pub fn seed_distance(
    bank: &PixelFeatureBank,
    pixel_loc: PixelLoc,
    match_loc: PixelLoc,
    weights: &FeatureWeights,
    toggles: &FeatureToggles,
) -> f64 {
    let mut sum = 0.0;
    if toggles.patch {
        sum += dense_dist2(bank.patch(pixel_loc), bank.patch(match_loc)) / weights.lambda_m;
    }
    if toggles.texture {
        sum += dense_dist2(bank.texture(pixel_loc), bank.texture(match_loc)) / weights.lambda_t;
    }
    if toggles.color {
        sum += dense_dist2(bank.color(pixel_loc), bank.color(match_loc)) / weights.lambda_c;
    }
    if toggles.gradient {
        sum += dense_dist2(bank.gradient(pixel_loc), bank.gradient(match_loc)) / weights.lambda_dv;
    }
    if toggles.distance {
        sum += dense_dist2(bank.abs_location(pixel_loc), bank.abs_location(match_loc))
            / weights.lambda_la;
    }
    sum
}

/// Default spatial search radius around each matched point. Seeds are local;
/// letting every match claim the whole image is quadratic and pointless.
pub fn default_window_radius(width: usize, height: usize, match_count: usize) -> usize {
    let diag = ((width * width + height * height) as f64).sqrt();
    2 * (diag / (match_count.max(1) as f64).sqrt()).ceil() as usize
}

/// Grows one superpixel per matched point: every pixel whose best
/// seed-distance within the search window is at most `t_cluster` joins the
/// arg-min matched point (ties toward the lower matched-point id). Matched
/// points that claim no pixel produce no superpixel.
pub fn grow_seeds(
    bank: &PixelFeatureBank,
    matches: &MatchedPointSet,
    weights: &FeatureWeights,
    toggles: &FeatureToggles,
    t_cluster: f64,
    window_radius: Option<usize>,
) -> SuperpixelLabelMap {
    assert!(!matches.is_empty());
    assert!(t_cluster >= 0.0);
    let (w, h) = (bank.width(), bank.height());
    let side = bank.side();
    let radius = window_radius.unwrap_or_else(|| default_window_radius(w, h, matches.len()));

    let match_locs: Vec<PixelLoc> = (0..matches.len())
        .map(|id| matches.entry(id).loc(side))
        .collect();

    let winners: Vec<i32> = (0..h)
        .into_par_iter()
        .flat_map_iter(|row| {
            let bank = &bank;
            let match_locs = &match_locs;
            (0..w).map(move |col| {
                let loc = PixelLoc::new(row, col);
                let mut best: Option<(f64, usize)> = None;
                for (id, &mloc) in match_locs.iter().enumerate() {
                    let dr = mloc.row.abs_diff(row);
                    let dc = mloc.col.abs_diff(col);
                    if dr > radius || dc > radius {
                        continue;
                    }
                    let d = seed_distance(bank, loc, mloc, weights, toggles);
                    if best.map_or(true, |(bd, _)| d < bd) {
                        best = Some((d, id));
                    }
                }
                match best {
                    Some((d, id)) if d <= t_cluster => id as i32,
                    _ => -1,
                }
            })
        })
        .collect();

    // Compact winning match ids into dense superpixel ids, ascending.
    let mut won = vec![false; matches.len()];
    for &win in &winners {
        if win >= 0 {
            won[win as usize] = true;
        }
    }
    let mut remap = vec![-1i32; matches.len()];
    let mut origins = Vec::new();
    for (mid, &did_win) in won.iter().enumerate() {
        if did_win {
            remap[mid] = origins.len() as i32;
            origins.push(SuperpixelOrigin::Seed(mid));
        }
    }
    let labels = winners
        .into_iter()
        .map(|v| if v >= 0 { remap[v as usize] } else { -1 })
        .collect();

    SuperpixelLabelMap {
        width: w,
        height: h,
        labels,
        origins,
    }
}

/// Data-driven clustering threshold: the 60th percentile of best-in-window
/// seed distances over a random pixel subset of both images (up to 500
/// samples per side), deterministic for a fixed seed.
#[allow(clippy::too_many_arguments)]
pub fn auto_t_cluster(
    bank_in: &PixelFeatureBank,
    bank_ref: &PixelFeatureBank,
    matches: &MatchedPointSet,
    weights: &FeatureWeights,
    toggles: &FeatureToggles,
    rng_seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut samples = Vec::new();
    for bank in [bank_in, bank_ref] {
        let (w, h) = (bank.width(), bank.height());
        let radius = default_window_radius(w, h, matches.len());
        let side = bank.side();
        for _ in 0..500 {
            let loc = PixelLoc::new(rng.random_range(0..h), rng.random_range(0..w));
            let mut best: Option<f64> = None;
            for id in 0..matches.len() {
                let mloc = matches.entry(id).loc(side);
                if mloc.row.abs_diff(loc.row) > radius || mloc.col.abs_diff(loc.col) > radius {
                    continue;
                }
                let d = seed_distance(bank, loc, mloc, weights, toggles);
                if best.map_or(true, |b| d < b) {
                    best = Some(d);
                }
            }
            if let Some(d) = best {
                samples.push(d);
            }
        }
    }
    if samples.is_empty() {
        return 0.0;
    }
    samples.sort_by(|a, b| a.total_cmp(b));
    let rank = ((0.6 * samples.len() as f64).ceil() as usize).clamp(1, samples.len());
    samples[rank - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::{MatchEntry, MatchedPointSet, Side};
    use crate::features::build_feature_bank;
    use crate::imagecore::ImagePlane;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn matches_at(pts: &[(usize, usize)], dims: (usize, usize)) -> MatchedPointSet {
        let entries = pts
            .iter()
            .map(|&(r, c)| MatchEntry {
                input_loc: PixelLoc::new(r, c),
                ref_loc: PixelLoc::new(r, c),
                score: 1.0,
            })
            .collect();
        MatchedPointSet::from_entries(entries, dims, dims).unwrap()
    }

    fn random_image(seed: u64, w: usize, h: usize) -> ImagePlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImagePlane::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn self_distance_is_zero() {
        let img = random_image(1, 8, 8);
        let matches = matches_at(&[(1, 1), (2, 6), (5, 2), (6, 6), (4, 4)], (8, 8));
        let bank = build_feature_bank(&img, &matches, Side::Input, &FeatureWeights::default(), 3, 5);
        let loc = PixelLoc::new(5, 2);
        let d = seed_distance(&bank, loc, loc, &FeatureWeights::default(), &FeatureToggles::default());
        assert_eq!(d, 0.0);
    }

    #[test]
    fn constant_image_reduces_to_location_term() {
        let img = ImagePlane::new(8, 8, [0.5; 3]);
        let matches = matches_at(&[(1, 1), (2, 6), (5, 2), (6, 6), (4, 4)], (8, 8));
        let w = FeatureWeights::default();
        let bank = build_feature_bank(&img, &matches, Side::Input, &w, 3, 5);
        let a = PixelLoc::new(0, 0);
        let b = PixelLoc::new(6, 6);
        let d = seed_distance(&bank, a, b, &w, &FeatureToggles::default());
        let dla = ((6.0 / 8.0) * (6.0 / 8.0) + (6.0 / 8.0) * (6.0 / 8.0)) / w.lambda_la;
        assert!((d - dla).abs() < 1e-10, "{d} vs {dla}");
    }

    #[test]
    fn random_distance_matches_term_by_term_oracle() {
        let img = random_image(7, 10, 9);
        let matches = matches_at(&[(1, 1), (2, 6), (5, 2), (6, 6), (4, 4)], (9, 10));
        let w = FeatureWeights::default();
        let bank = build_feature_bank(&img, &matches, Side::Input, &w, 3, 5);
        let a = PixelLoc::new(3, 7);
        let b = PixelLoc::new(6, 6);
        let d = seed_distance(&bank, a, b, &w, &FeatureToggles::default());
        let term = |x: &[f64], y: &[f64], l: f64| -> f64 {
            x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / l
        };
        let want = term(bank.patch(a), bank.patch(b), w.lambda_m)
            + term(bank.texture(a), bank.texture(b), w.lambda_t)
            + term(bank.color(a), bank.color(b), w.lambda_c)
            + term(bank.gradient(a), bank.gradient(b), w.lambda_dv)
            + term(bank.abs_location(a), bank.abs_location(b), w.lambda_la);
        assert!((d - want).abs() < 1e-10);
    }

    #[test]
    fn toggles_drop_terms() {
        let img = random_image(8, 8, 8);
        let matches = matches_at(&[(1, 1), (2, 6), (5, 2), (6, 6), (4, 4)], (8, 8));
        let w = FeatureWeights::default();
        let bank = build_feature_bank(&img, &matches, Side::Input, &w, 3, 5);
        let a = PixelLoc::new(0, 3);
        let b = PixelLoc::new(6, 6);
        let only_location = FeatureToggles {
            color: false,
            texture: false,
            patch: false,
            gradient: false,
            distance: true,
        };
        let d = seed_distance(&bank, a, b, &w, &only_location);
        let want = dense_dist2(bank.abs_location(a), bank.abs_location(b)) / w.lambda_la;
        assert!((d - want).abs() < 1e-12);
    }

    #[test]
    fn zero_threshold_covers_only_match_pixels() {
        let img = random_image(3, 8, 8);
        let pts = [(1, 1), (2, 6), (5, 2), (6, 6), (4, 4)];
        let matches = matches_at(&pts, (8, 8));
        let w = FeatureWeights::default();
        let bank = build_feature_bank(&img, &matches, Side::Input, &w, 3, 5);
        let map = grow_seeds(&bank, &matches, &w, &FeatureToggles::default(), 0.0, None);
        assert_eq!(map.covered_count(), pts.len());
        for (id, &(r, c)) in pts.iter().enumerate() {
            let label = map.label(PixelLoc::new(r, c)).unwrap();
            assert_eq!(map.origin(label), SuperpixelOrigin::Seed(id));
        }
    }

    #[test]
    fn infinite_threshold_matches_brute_force_oracle() {
        let img = random_image(4, 8, 8);
        let pts = [(1, 1), (2, 6), (5, 2), (6, 6), (4, 4)];
        let matches = matches_at(&pts, (8, 8));
        let w = FeatureWeights::default();
        let t = FeatureToggles::default();
        let bank = build_feature_bank(&img, &matches, Side::Input, &w, 3, 5);
        let map = grow_seeds(&bank, &matches, &w, &t, f64::INFINITY, Some(64));
        assert_eq!(map.covered_count(), 64);
        for row in 0..8 {
            for col in 0..8 {
                let loc = PixelLoc::new(row, col);
                // Exhaustive min over all matched points.
                let mut best = (f64::INFINITY, usize::MAX);
                for id in 0..matches.len() {
                    let d = seed_distance(&bank, loc, matches.entry(id).input_loc, &w, &t);
                    if d < best.0 {
                        best = (d, id);
                    }
                }
                let label = map.label(loc).unwrap();
                assert_eq!(map.origin(label), SuperpixelOrigin::Seed(best.1));
            }
        }
    }

    #[test]
    fn constant_image_yields_location_voronoi() {
        let img = ImagePlane::new(9, 9, [0.5; 3]);
        let pts = [(4, 1), (4, 7), (0, 0), (8, 8), (0, 8)];
        let matches = matches_at(&pts, (9, 9));
        let w = FeatureWeights::default();
        let bank = build_feature_bank(&img, &matches, Side::Input, &w, 3, 5);
        // Threshold large enough that the two central seeds absorb their halves.
        let map = grow_seeds(&bank, &matches, &w, &FeatureToggles::default(), f64::INFINITY, Some(16));
        for row in 0..9 {
            for col in 0..9 {
                let loc = PixelLoc::new(row, col);
                let label = map.label(loc).unwrap();
                let got = match map.origin(label) {
                    SuperpixelOrigin::Seed(m) => m,
                    _ => unreachable!(),
                };
                let mut best = (f64::INFINITY, usize::MAX);
                for (id, &(r, c)) in pts.iter().enumerate() {
                    let d = (r as f64 - row as f64).powi(2) + (c as f64 - col as f64).powi(2);
                    if d < best.0 {
                        best = (d, id);
                    }
                }
                assert_eq!(got, best.1, "pixel ({row},{col})");
            }
        }
    }

    #[test]
    fn coverage_grows_with_threshold() {
        let img = random_image(5, 10, 10);
        let matches = matches_at(&[(1, 1), (2, 6), (5, 2), (6, 6), (8, 8)], (10, 10));
        let w = FeatureWeights::default();
        let t = FeatureToggles::default();
        let bank = build_feature_bank(&img, &matches, Side::Input, &w, 3, 5);
        let mut prev: Option<Vec<bool>> = None;
        for thr in [0.0, 1.0, 10.0, 100.0, 1e4, f64::INFINITY] {
            let map = grow_seeds(&bank, &matches, &w, &t, thr, Some(32));
            let covered: Vec<bool> = map.raw_labels().iter().map(|&v| v >= 0).collect();
            if let Some(p) = &prev {
                for (was, now) in p.iter().zip(&covered) {
                    assert!(!was || *now, "covered set must grow with the threshold");
                }
            }
            prev = Some(covered);
        }
    }

    #[test]
    fn label_map_compaction_keeps_non_empty_ids() {
        let img = random_image(6, 8, 8);
        let matches = matches_at(&[(1, 1), (2, 6), (5, 2), (6, 6), (4, 4)], (8, 8));
        let w = FeatureWeights::default();
        let bank = build_feature_bank(&img, &matches, Side::Input, &w, 3, 5);
        let mut map = grow_seeds(&bank, &matches, &w, &FeatureToggles::default(), 0.0, None);
        let empty = map.add_superpixel(SuperpixelOrigin::Partition(0));
        assert_eq!(map.superpixel_count(), 6);
        assert!(empty == 5);
        map.compact();
        assert_eq!(map.superpixel_count(), 5);
        let mut seen = vec![0usize; map.superpixel_count()];
        for &l in map.raw_labels() {
            if l >= 0 {
                seen[l as usize] += 1;
            }
        }
        assert!(seen.iter().all(|&n| n >= 1));
    }

    #[test]
    fn auto_threshold_is_deterministic() {
        let img = random_image(9, 12, 10);
        let matches = matches_at(&[(1, 1), (2, 6), (5, 2), (6, 6), (8, 8)], (10, 12));
        let w = FeatureWeights::default();
        let t = FeatureToggles::default();
        let bank_in = build_feature_bank(&img, &matches, Side::Input, &w, 3, 5);
        let bank_ref = build_feature_bank(&img, &matches, Side::Reference, &w, 3, 5);
        let a = auto_t_cluster(&bank_in, &bank_ref, &matches, &w, &t, 42);
        let b = auto_t_cluster(&bank_in, &bank_ref, &matches, &w, &t, 42);
        assert_eq!(a, b);
        assert!(a > 0.0);
    }
}
