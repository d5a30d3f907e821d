//! Superpixel-level matching: mean descriptors, affinities between the two
//! images' superpixels, and the final one-to-one correspondence by exact
//! minimum-cost assignment.

use crate::correspondence::Side;
use crate::features::{FeatureToggles, FeatureWeights, PixelFeatureBank, SparseCode};
use crate::imagecore::{LabPlane, PixelLoc};
use crate::partition::style_free_exponent;
use crate::seeds::SuperpixelLabelMap;
use crate::transfer::ChannelStats;
use std::collections::BTreeMap;

/// Mean hierarchical features of one superpixel plus its lαβ statistics.
#[derive(Debug, Clone)]
pub struct SuperpixelDescriptor {
    pub id: usize,
    pub side: Side,
    pub pixel_count: usize,
    pub mean_s: SparseCode,
    pub mean_t: [f64; 10],
    pub mean_la: [f64; 2],
    pub mean_lr: SparseCode,
    pub lab_stats: ChannelStats,
}

/// Component-wise mean of the style-independent features and two-pass lαβ
/// statistics (population divisor) over every superpixel's member pixels.
/// The label map must cover all pixels.
pub fn aggregate_superpixels(
    bank: &PixelFeatureBank,
    label_map: &SuperpixelLabelMap,
    lab: &LabPlane,
) -> Vec<SuperpixelDescriptor> {
    assert_eq!(label_map.covered_count(), label_map.width() * label_map.height());
    aggregate_covered(bank, label_map, lab)
}

/// Like [`aggregate_superpixels`] but tolerates uncovered pixels (they join
/// no superpixel); used when the run stops at the seed stage.
pub fn aggregate_covered(
    bank: &PixelFeatureBank,
    label_map: &SuperpixelLabelMap,
    lab: &LabPlane,
) -> Vec<SuperpixelDescriptor> {
    let count = label_map.superpixel_count();
    let mut pixel_counts = vec![0usize; count];
    let mut sum_s: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); count];
    let mut sum_lr: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); count];
    let mut sum_t = vec![[0.0f64; 10]; count];
    let mut sum_la = vec![[0.0f64; 2]; count];
    let mut masks: Vec<Vec<PixelLoc>> = vec![Vec::new(); count];

    for row in 0..label_map.height() {
        for col in 0..label_map.width() {
            let loc = PixelLoc::new(row, col);
            let Some(id) = label_map.label(loc) else {
                continue;
            };
            pixel_counts[id] += 1;
            masks[id].push(loc);
            for &(sid, v) in bank.llc(loc).pairs() {
                *sum_s[id].entry(sid).or_insert(0.0) += v;
            }
            for &(sid, v) in bank.rel_location(loc).pairs() {
                *sum_lr[id].entry(sid).or_insert(0.0) += v;
            }
            let t = bank.texture(loc);
            for c in 0..10 {
                sum_t[id][c] += t[c];
            }
            let la = bank.abs_location(loc);
            sum_la[id][0] += la[0];
            sum_la[id][1] += la[1];
        }
    }

    (0..count)
        .map(|id| {
            let n = pixel_counts[id] as f64;
            assert!(pixel_counts[id] >= 1, "superpixel {id} owns no pixel");
            let mean_s = SparseCode::new(
                sum_s[id].iter().map(|(&sid, &v)| (sid, v / n)).collect(),
            );
            let mean_lr = SparseCode::new(
                sum_lr[id].iter().map(|(&sid, &v)| (sid, v / n)).collect(),
            );
            let mut mean_t = sum_t[id];
            mean_t.iter_mut().for_each(|v| *v /= n);
            let mean_la = [sum_la[id][0] / n, sum_la[id][1] / n];
            SuperpixelDescriptor {
                id,
                side: bank.side(),
                pixel_count: pixel_counts[id],
                mean_s,
                mean_t,
                mean_la,
                mean_lr,
                lab_stats: ChannelStats::from_region(lab, &masks[id]),
            }
        })
        .collect()
}

/// Affinity between an input and a reference superpixel: the pixel affinity
/// formula applied to the mean feature vectors. In `(0, 1]`.
pub fn superpixel_affinity(
    a: &SuperpixelDescriptor,
    b: &SuperpixelDescriptor,
    weights: &FeatureWeights,
    toggles: &FeatureToggles,
) -> f64 {
    debug_assert_eq!(a.side, Side::Input);
    debug_assert_eq!(b.side, Side::Reference);
    (-style_free_exponent(
        &a.mean_s, &b.mean_s, &a.mean_t, &b.mean_t, &a.mean_la, &b.mean_la, &a.mean_lr,
        &b.mean_lr, weights, toggles,
    ))
    .exp()
    .max(f64::MIN_POSITIVE)
}

/// Final mapping from input superpixel ids to reference superpixel ids.
/// `pairs` is the injective assignment; inputs the assignment dropped fall
/// back to their highest-affinity reference superpixel (many-to-one allowed
/// only there).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrespondenceTable {
    pairs: BTreeMap<usize, usize>,
    fallback: BTreeMap<usize, usize>,
}

impl CorrespondenceTable {
    pub fn new(pairs: BTreeMap<usize, usize>, fallback: BTreeMap<usize, usize>) -> Self {
        debug_assert!(pairs.keys().all(|k| !fallback.contains_key(k)));
        let mut seen = std::collections::HashSet::new();
        debug_assert!(pairs.values().all(|&v| seen.insert(v)), "pairs must be injective");
        Self { pairs, fallback }
    }

    pub fn pairs(&self) -> &BTreeMap<usize, usize> {
        &self.pairs
    }

    pub fn fallback(&self) -> &BTreeMap<usize, usize> {
        &self.fallback
    }

    /// Reference superpixel for an input superpixel, through the assignment
    /// or the fallback.
    pub fn resolve(&self, input_id: usize) -> Option<usize> {
        self.pairs
            .get(&input_id)
            .or_else(|| self.fallback.get(&input_id))
            .copied()
    }

    pub fn input_count(&self) -> usize {
        self.pairs.len() + self.fallback.len()
    }
}

/// Exact minimum-cost perfect assignment on a square cost matrix by the
/// potentials + shortest-augmenting-path method, O(n³). Returns the column
/// assigned to each row.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    assert!(n >= 1 && cost.iter().all(|row| row.len() == n));
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut assigned_row = vec![0usize; n + 1]; // per column, 1-based rows; 0 = free
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        assigned_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[assigned_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if assigned_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut out = vec![usize::MAX; n];
    for j in 1..=n {
        if assigned_row[j] > 0 {
            out[assigned_row[j] - 1] = j - 1;
        }
    }
    out
}

/// One-to-one matching of the affinity matrix (rows = input superpixels,
/// columns = reference superpixels).
///
/// Costs are `1 − affinity`, the rectangle is padded square with dummy cost
/// 1, and the assignment is solved exactly. Pairs landing on a dummy or with
/// affinity below `epsilon_edge` are dropped to the fallback: the reference
/// superpixel with the highest affinity to that input.
pub fn hungarian_match(affinity: &[Vec<f64>], epsilon_edge: f64) -> CorrespondenceTable {
    let n = affinity.len();
    assert!(n >= 1);
    let m = affinity[0].len();
    assert!(m >= 1 && affinity.iter().all(|row| row.len() == m));
    let dim = n.max(m);

    let mut cost = vec![vec![1.0f64; dim]; dim];
    for (i, row) in affinity.iter().enumerate() {
        for (j, &a) in row.iter().enumerate() {
            cost[i][j] = 1.0 - a;
        }
    }
    let assignment = min_cost_assignment(&cost);

    let mut pairs = BTreeMap::new();
    let mut fallback = BTreeMap::new();
    for (i, row) in affinity.iter().enumerate() {
        let j = assignment[i];
        if j < m && row[j] >= epsilon_edge {
            pairs.insert(i, j);
        } else {
            let mut best = (f64::NEG_INFINITY, 0usize);
            for (jj, &a) in row.iter().enumerate() {
                if a > best.0 {
                    best = (a, jj);
                }
            }
            fallback.insert(i, best.1);
        }
    }
    CorrespondenceTable::new(pairs, fallback)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_affinity(seed: u64, n: usize, m: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..m).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect()
    }

    /// Exhaustive minimum over all row-to-column injections, dummies allowed
    /// at cost 1; evaluates every candidate with `padded_total` so totals are
    /// bit-comparable with the solver's.
    pub(crate) fn assignment_oracle(affinity: &[Vec<f64>]) -> (f64, Vec<usize>) {
        let n = affinity.len();
        let m = affinity[0].len();
        fn recurse(
            affinity: &[Vec<f64>],
            row: usize,
            used: &mut Vec<bool>,
            chosen: &mut Vec<usize>,
            best: &mut (f64, Vec<usize>),
        ) {
            let n = affinity.len();
            let m = affinity[0].len();
            if row == n {
                let total = padded_total(affinity, chosen);
                if total < best.0 {
                    *best = (total, chosen.clone());
                }
                return;
            }
            for j in 0..m {
                if used[j] {
                    continue;
                }
                used[j] = true;
                chosen.push(j);
                recurse(affinity, row + 1, used, chosen, best);
                chosen.pop();
                used[j] = false;
            }
            if n > m {
                // row sits out against a dummy column; dummies are interchangeable
                chosen.push(usize::MAX);
                recurse(affinity, row + 1, used, chosen, best);
                chosen.pop();
            }
        }
        let mut best = (f64::INFINITY, Vec::new());
        recurse(affinity, 0, &mut vec![false; m], &mut Vec::new(), &mut best);
        best
    }

    fn padded_total(affinity: &[Vec<f64>], assignment: &[usize]) -> f64 {
        let n = affinity.len();
        let m = affinity[0].len();
        let dim = n.max(m);
        let mut total = 0.0;
        for i in 0..dim {
            let j = if i < n { assignment[i] } else { usize::MAX };
            total += if i < n && j < m {
                1.0 - affinity[i][j]
            } else {
                1.0
            };
        }
        total
    }

    #[test]
    fn two_by_two_picks_the_diagonal() {
        let affinity = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let table = hungarian_match(&affinity, 1e-4);
        assert_eq!(table.pairs().get(&0), Some(&0));
        assert_eq!(table.pairs().get(&1), Some(&1));
        assert!(table.fallback().is_empty());
    }

    #[test]
    fn dominant_diagonal_is_identity() {
        let n = 6;
        let affinity: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.01 }).collect())
            .collect();
        let table = hungarian_match(&affinity, 1e-4);
        for i in 0..n {
            assert_eq!(table.resolve(i), Some(i));
        }
    }

    #[test]
    fn rectangular_total_cost_matches_enumeration() {
        for seed in 0..30u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let n = rng.random_range(1..8);
            let m = rng.random_range(1..8);
            let affinity = random_affinity(seed, n, m);
            let (oracle_cost, _) = assignment_oracle(&affinity);
            let dim = n.max(m);
            let mut cost = vec![vec![1.0; dim]; dim];
            for i in 0..n {
                for j in 0..m {
                    cost[i][j] = 1.0 - affinity[i][j];
                }
            }
            let assignment = min_cost_assignment(&cost);
            let total = padded_total(&affinity, &assignment);
            assert_eq!(total, oracle_cost, "seed {seed} ({n}x{m})");
        }
    }

    #[test]
    fn low_affinity_rows_fall_back_to_argmax() {
        let affinity = vec![vec![0.9, 0.2], vec![1e-9, 1e-7]];
        let table = hungarian_match(&affinity, 1e-4);
        assert_eq!(table.pairs().get(&0), Some(&0));
        assert_eq!(table.pairs().get(&1), None);
        assert_eq!(table.fallback().get(&1), Some(&1));
        assert_eq!(table.resolve(1), Some(1));
    }

    #[test]
    fn extra_inputs_fall_back_when_references_run_out() {
        let affinity = random_affinity(42, 7, 3);
        let table = hungarian_match(&affinity, 1e-4);
        assert!(table.pairs().len() <= 3);
        assert_eq!(table.input_count(), 7);
        for i in 0..7 {
            assert!(table.resolve(i).unwrap() < 3);
        }
    }

    proptest! {
        #[test]
        fn pairs_are_always_injective(seed in 0u64..300, n in 1usize..9, m in 1usize..9) {
            let affinity = random_affinity(seed, n, m);
            let table = hungarian_match(&affinity, 1e-4);
            let values: Vec<usize> = table.pairs().values().copied().collect();
            let mut dedup = values.clone();
            dedup.sort_unstable();
            dedup.dedup();
            prop_assert_eq!(values.len(), dedup.len());
            prop_assert_eq!(table.input_count(), n);
        }

        #[test]
        fn pairing_is_scale_invariant(seed in 0u64..200, n in 2usize..7, m in 2usize..7, c in 0.05f64..1.0) {
            let affinity = random_affinity(seed, n, m);
            let eps = 1e-4;
            let scaled: Vec<Vec<f64>> = affinity
                .iter()
                .map(|row| row.iter().map(|a| a * c).collect())
                .collect();
            let base = hungarian_match(&affinity, eps);
            let other = hungarian_match(&scaled, eps * c);
            prop_assert_eq!(base.pairs(), other.pairs());
        }
    }
}
