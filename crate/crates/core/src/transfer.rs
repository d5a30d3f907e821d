//! Per-region statistics transfer in the decorrelated space and the guided
//! filter that removes the seams between regions afterwards.

use crate::imagecore::{lab_channel, LabPlane, PixelLoc, ScalarGrid};
use crate::matching::CorrespondenceTable;
use crate::seeds::SuperpixelLabelMap;

/// Per-channel mean and standard deviation of one region in lαβ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ChannelStats {
    /// Two-pass mean and population standard deviation (divisor N) over the
    /// masked pixels.
    pub fn from_region(lab: &LabPlane, mask: &[PixelLoc]) -> Self {
        assert!(!mask.is_empty(), "empty region");
        let n = mask.len() as f64;
        let mut mean = [0.0; 3];
        for loc in mask {
            let px = lab.get(loc.row, loc.col);
            for c in 0..3 {
                mean[c] += px[c];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; 3];
        for loc in mask {
            let px = lab.get(loc.row, loc.col);
            for c in 0..3 {
                let d = px[c] - mean[c];
                var[c] += d * d;
            }
        }
        let std = [
            (var[0] / n).max(0.0).sqrt(),
            (var[1] / n).max(0.0).sqrt(),
            (var[2] / n).max(0.0).sqrt(),
        ];
        Self { mean, std }
    }
}

/// Recenters and rescales the masked region so its per-channel mean and
/// standard deviation become the reference region's. `sigma_floor` bounds
/// the denominator away from zero; a constant region lands exactly on the
/// reference mean.
pub fn transfer_region(
    lab: &mut LabPlane,
    mask: &[PixelLoc],
    stats_in: &ChannelStats,
    stats_ref: &ChannelStats,
    sigma_floor: f64,
) {
    assert!(!mask.is_empty());
    assert!(sigma_floor > 0.0);
    let scale = [
        stats_ref.std[0] / stats_in.std[0].max(sigma_floor),
        stats_ref.std[1] / stats_in.std[1].max(sigma_floor),
        stats_ref.std[2] / stats_in.std[2].max(sigma_floor),
    ];
    for loc in mask {
        let mut px = lab.get(loc.row, loc.col);
        for c in 0..3 {
            px[c] = (px[c] - stats_in.mean[c]) * scale[c] + stats_ref.mean[c];
        }
        lab.set(loc.row, loc.col, px);
    }
}

/// Box mean over (2r+1)² windows with replicate padding, separable moving
/// sums. Every window always holds (2r+1)² samples.
pub fn box_mean(src: &ScalarGrid, radius: usize) -> ScalarGrid {
    if radius == 0 {
        return src.clone();
    }
    let (w, h) = (src.width(), src.height());
    let r = radius as isize;
    let win = (2 * radius + 1) as f64;

    let mut horiz = ScalarGrid::new(w, h, 0.0);
    for row in 0..h {
        let mut sum = 0.0;
        for dc in -r..=r {
            sum += src.get_clamped(row as isize, dc);
        }
        horiz.set(row, 0, sum / win);
        for col in 1..w {
            sum += src.get_clamped(row as isize, col as isize + r);
            sum -= src.get_clamped(row as isize, col as isize - r - 1);
            horiz.set(row, col, sum / win);
        }
    }

    let mut out = ScalarGrid::new(w, h, 0.0);
    for col in 0..w {
        let mut sum = 0.0;
        for dr in -r..=r {
            sum += horiz.get_clamped(dr, col as isize);
        }
        out.set(0, col, sum / win);
        for row in 1..h {
            sum += horiz.get_clamped(row as isize + r, col as isize);
            sum -= horiz.get_clamped(row as isize - r - 1, col as isize);
            out.set(row, col, sum / win);
        }
    }
    out
}

/// Guided filter: the output is the locally affine model `ā·guide + b̄` with
/// `a = cov(guide, src)/(var(guide) + eps)` fitted per window and the
/// coefficients box-averaged. Radius 0 returns the source unchanged.
pub fn guided_filter(guide: &ScalarGrid, src: &ScalarGrid, radius: usize, eps: f64) -> ScalarGrid {
    assert_eq!(guide.width(), src.width());
    assert_eq!(guide.height(), src.height());
    assert!(eps >= 0.0);
    if radius == 0 {
        return src.clone();
    }
    let (w, h) = (src.width(), src.height());

    let mean_g = box_mean(guide, radius);
    let mean_s = box_mean(src, radius);
    let gg = ScalarGrid::from_fn(w, h, |r, c| guide.get(r, c) * guide.get(r, c));
    let gs = ScalarGrid::from_fn(w, h, |r, c| guide.get(r, c) * src.get(r, c));
    let mean_gg = box_mean(&gg, radius);
    let mean_gs = box_mean(&gs, radius);

    let mut a = ScalarGrid::new(w, h, 0.0);
    let mut b = ScalarGrid::new(w, h, 0.0);
    for row in 0..h {
        for col in 0..w {
            let mg = mean_g.get(row, col);
            let ms = mean_s.get(row, col);
            let var = mean_gg.get(row, col) - mg * mg;
            let cov = mean_gs.get(row, col) - mg * ms;
            let denom = var + eps;
            let mut ai = if denom == 0.0 {
                // Degenerate window: self-guidance keeps the identity model.
                if cov == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                cov / denom
            };
            if !ai.is_finite() {
                ai = 0.0;
            }
            a.set(row, col, ai);
            b.set(row, col, ms - ai * mg);
        }
    }

    let mean_a = box_mean(&a, radius);
    let mean_b = box_mean(&b, radius);
    ScalarGrid::from_fn(w, h, |r, c| {
        mean_a.get(r, c) * guide.get(r, c) + mean_b.get(r, c)
    })
}

/// Pixel masks per superpixel id, row-major order inside each mask.
pub fn region_masks(map: &SuperpixelLabelMap) -> Vec<Vec<PixelLoc>> {
    let mut masks: Vec<Vec<PixelLoc>> = vec![Vec::new(); map.superpixel_count()];
    for row in 0..map.height() {
        for col in 0..map.width() {
            let loc = PixelLoc::new(row, col);
            if let Some(id) = map.label(loc) {
                masks[id].push(loc);
            }
        }
    }
    masks
}

/// Statistics transfer applied region by region, before smoothing. The label
/// maps must be total and the table must resolve every input superpixel.
pub fn transfer_all(
    lab_in: &LabPlane,
    lab_ref: &LabPlane,
    labels_in: &SuperpixelLabelMap,
    labels_ref: &SuperpixelLabelMap,
    table: &CorrespondenceTable,
    sigma_floor: f64,
) -> LabPlane {
    let masks_in = region_masks(labels_in);
    let masks_ref = region_masks(labels_ref);
    let ref_stats: Vec<ChannelStats> = masks_ref
        .iter()
        .map(|m| ChannelStats::from_region(lab_ref, m))
        .collect();

    let mut out = lab_in.clone();
    for (id, mask) in masks_in.iter().enumerate() {
        if mask.is_empty() {
            continue;
        }
        let stats_in = ChannelStats::from_region(lab_in, mask);
        let ref_id = table.resolve(id).expect("table must resolve every input superpixel");
        transfer_region(&mut out, mask, &stats_in, &ref_stats[ref_id], sigma_floor);
    }
    out
}

/// Result of the full transfer stage.
#[derive(Debug, Clone)]
pub struct StylizeResult {
    /// Region statistics transferred, seams still visible.
    pub pre_filter: LabPlane,
    /// Each lαβ channel smoothed by the guided filter.
    pub smoothed: LabPlane,
}

/// Runs the per-region transfer, then guided-filters each lαβ channel with
/// the input intensity plane as the guide.
#[allow(clippy::too_many_arguments)]
pub fn stylize(
    lab_in: &LabPlane,
    lab_ref: &LabPlane,
    labels_in: &SuperpixelLabelMap,
    labels_ref: &SuperpixelLabelMap,
    table: &CorrespondenceTable,
    guide: &ScalarGrid,
    radius: usize,
    eps: f64,
    sigma_floor: f64,
) -> StylizeResult {
    let pre_filter = transfer_all(lab_in, lab_ref, labels_in, labels_ref, table, sigma_floor);
    let channels: Vec<ScalarGrid> = (0..3)
        .map(|c| guided_filter(guide, &lab_channel(&pre_filter, c), radius, eps))
        .collect();
    let smoothed = LabPlane::from_fn(lab_in.width(), lab_in.height(), |r, c| {
        [
            channels[0].get(r, c),
            channels[1].get(r, c),
            channels[2].get(r, c),
        ]
    });
    StylizeResult {
        pre_filter,
        smoothed,
    }
}
