//! Precomputed dense matches: parsing, confidence filtering, and
//! nearest-matched-point queries.
//!
//! Matches come from an external dense matcher as a UTF-8 text file, one
//! match per line: `x_input y_input x_ref y_ref score` with zero-based
//! integer pixel coordinates, `x` the column and `y` the row. Lines starting
//! with `#` are comments.

use crate::error::{Error, Result};
use crate::imagecore::PixelLoc;

/// Matched points needed before anything downstream will run.
pub const MIN_MATCHES: usize = 5;

/// Which image a location or query refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Input,
    Reference,
}

/// One scored correspondence between the two images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchEntry {
    pub input_loc: PixelLoc,
    pub ref_loc: PixelLoc,
    pub score: f64,
}

impl MatchEntry {
    pub fn loc(&self, side: Side) -> PixelLoc {
        match side {
            Side::Input => self.input_loc,
            Side::Reference => self.ref_loc,
        }
    }
}

/// Immutable set of scored matches. The entry index is the canonical
/// matched-point id used by the sparse codings downstream.
#[derive(Debug, Clone)]
pub struct MatchedPointSet {
    entries: Vec<MatchEntry>,
    input_dims: (usize, usize),
    ref_dims: (usize, usize),
    grid_input: Option<LocGrid>,
    grid_ref: Option<LocGrid>,
}

/// Uniform bucketing over one side's locations; below this many entries a
/// full scan is cheaper than maintaining the grid.
const GRID_THRESHOLD: usize = 1000;

impl MatchedPointSet {
    /// Builds a set from already-validated entries. `dims` are `(height, width)`.
    pub fn from_entries(
        entries: Vec<MatchEntry>,
        input_dims: (usize, usize),
        ref_dims: (usize, usize),
    ) -> Result<Self> {
        if entries.len() < MIN_MATCHES {
            return Err(Error::InsufficientMatches {
                have: entries.len(),
                need: MIN_MATCHES,
            });
        }
        let grid_input = (entries.len() >= GRID_THRESHOLD)
            .then(|| LocGrid::build(&entries, Side::Input, input_dims));
        let grid_ref = (entries.len() >= GRID_THRESHOLD)
            .then(|| LocGrid::build(&entries, Side::Reference, ref_dims));
        Ok(Self {
            entries,
            input_dims,
            ref_dims,
            grid_input,
            grid_ref,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MatchEntry] {
        &self.entries
    }

    pub fn entry(&self, id: usize) -> &MatchEntry {
        &self.entries[id]
    }

    pub fn input_dims(&self) -> (usize, usize) {
        self.input_dims
    }

    pub fn ref_dims(&self) -> (usize, usize) {
        self.ref_dims
    }

    /// Ids of the `k` entries nearest to `loc` on the chosen side, ascending
    /// by Euclidean pixel distance; ties break toward the lower entry id.
    pub fn nearest_matches(&self, side: Side, loc: PixelLoc, k: usize) -> Vec<usize> {
        assert!(k <= self.entries.len(), "k exceeds entry count");
        if k == 0 {
            return Vec::new();
        }
        let grid = match side {
            Side::Input => &self.grid_input,
            Side::Reference => &self.grid_ref,
        };
        match grid {
            Some(g) => g.nearest(&self.entries, side, loc, k),
            None => nearest_scan(&self.entries, side, loc, k),
        }
    }
}

fn dist2(a: PixelLoc, b: PixelLoc) -> f64 {
    let dr = a.row as f64 - b.row as f64;
    let dc = a.col as f64 - b.col as f64;
    dr * dr + dc * dc
}

fn nearest_scan(entries: &[MatchEntry], side: Side, loc: PixelLoc, k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = entries
        .iter()
        .enumerate()
        .map(|(id, e)| (dist2(e.loc(side), loc), id))
        .collect();
    order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.truncate(k);
    order.into_iter().map(|(_, id)| id).collect()
}

/// Square buckets over pixel space; queries expand outward ring by ring
/// until the k-th best distance beats the next ring's lower bound.
#[derive(Debug, Clone)]
struct LocGrid {
    cell: usize,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<usize>>,
}

impl LocGrid {
    fn build(entries: &[MatchEntry], side: Side, dims: (usize, usize)) -> Self {
        let (h, w) = dims;
        let cell = (((w * h) as f64 / entries.len() as f64).sqrt().floor() as usize).max(1);
        let cols = w.div_ceil(cell);
        let rows = h.div_ceil(cell);
        let mut buckets = vec![Vec::new(); cols * rows];
        for (id, e) in entries.iter().enumerate() {
            let loc = e.loc(side);
            buckets[(loc.row / cell) * cols + loc.col / cell].push(id);
        }
        Self {
            cell,
            cols,
            rows,
            buckets,
        }
    }

    fn nearest(&self, entries: &[MatchEntry], side: Side, loc: PixelLoc, k: usize) -> Vec<usize> {
        let qr = (loc.row / self.cell).min(self.rows - 1) as isize;
        let qc = (loc.col / self.cell).min(self.cols - 1) as isize;
        let mut best: Vec<(f64, usize)> = Vec::new();
        let max_ring = self.rows.max(self.cols);
        for ring in 0..=max_ring {
            // Any point in ring r is at least (r-1) whole cells away.
            if best.len() >= k {
                let bound = (ring.saturating_sub(1) * self.cell) as f64;
                if best[k - 1].0 < bound * bound {
                    break;
                }
            }
            let r = ring as isize;
            for dr in -r..=r {
                for dc in -r..=r {
                    if dr.abs().max(dc.abs()) != r {
                        continue;
                    }
                    let (br, bc) = (qr + dr, qc + dc);
                    if br < 0 || bc < 0 || br >= self.rows as isize || bc >= self.cols as isize {
                        continue;
                    }
                    for &id in &self.buckets[br as usize * self.cols + bc as usize] {
                        best.push((dist2(entries[id].loc(side), loc), id));
                    }
                }
            }
            best.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            best.truncate(k.max(1) * 4);
        }
        best.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        best.truncate(k);
        best.into_iter().map(|(_, id)| id).collect()
    }
}

/// Parses a match file against the two image extents (`(height, width)`).
///
/// Duplicate input locations are deduplicated keeping the highest score
/// (earliest line on ties); surviving entries keep file order.
pub fn load_matches(
    text: &str,
    input_dims: (usize, usize),
    ref_dims: (usize, usize),
) -> Result<MatchedPointSet> {
    let mut raw: Vec<MatchEntry> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::MatchParse {
                line: lineno,
                reason: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let coord = |s: &str, what: &str| -> Result<usize> {
            s.parse::<i64>()
                .map_err(|_| Error::MatchParse {
                    line: lineno,
                    reason: format!("{what} is not an integer: {s:?}"),
                })
                .and_then(|v| {
                    usize::try_from(v).map_err(|_| Error::MatchOutOfBounds {
                        line: lineno,
                        what: format!("{what} = {v}"),
                    })
                })
        };
        let xi = coord(fields[0], "x_input")?;
        let yi = coord(fields[1], "y_input")?;
        let xr = coord(fields[2], "x_ref")?;
        let yr = coord(fields[3], "y_ref")?;
        let score: f64 = fields[4].parse().map_err(|_| Error::MatchParse {
            line: lineno,
            reason: format!("score is not a number: {:?}", fields[4]),
        })?;
        if !score.is_finite() || score < 0.0 {
            return Err(Error::MatchParse {
                line: lineno,
                reason: format!("score must be a finite nonnegative number, got {score}"),
            });
        }
        let check = |row: usize, col: usize, dims: (usize, usize), what: &str| -> Result<()> {
            if row >= dims.0 || col >= dims.1 {
                return Err(Error::MatchOutOfBounds {
                    line: lineno,
                    what: format!("{what} = ({col}, {row}) for {}x{} image", dims.1, dims.0),
                });
            }
            Ok(())
        };
        check(yi, xi, input_dims, "input")?;
        check(yr, xr, ref_dims, "reference")?;
        raw.push(MatchEntry {
            input_loc: PixelLoc::new(yi, xi),
            ref_loc: PixelLoc::new(yr, xr),
            score,
        });
    }

    // Keep, per input location, the first entry attaining the highest score.
    let mut kept = vec![true; raw.len()];
    for (i, e) in raw.iter().enumerate() {
        for (j, f) in raw.iter().enumerate() {
            if i == j || e.input_loc != f.input_loc {
                continue;
            }
            if f.score > e.score || (f.score == e.score && j < i) {
                kept[i] = false;
                break;
            }
        }
    }
    let entries: Vec<MatchEntry> = raw
        .into_iter()
        .zip(kept)
        .filter_map(|(e, keep)| keep.then_some(e))
        .collect();
    MatchedPointSet::from_entries(entries, input_dims, ref_dims)
}

/// Keeps the `ceil(fraction * n)` highest-scoring entries, ties broken by
/// earlier file order, and reindexes ids densely.
pub fn filter_top_fraction(set: &MatchedPointSet, fraction: f64) -> Result<MatchedPointSet> {
    assert!(
        fraction > 0.0 && fraction <= 1.0,
        "fraction must lie in (0, 1]"
    );
    let n = set.len();
    let keep = ((fraction * n as f64).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        set.entry(b)
            .score
            .total_cmp(&set.entry(a).score)
            .then(a.cmp(&b))
    });
    order.truncate(keep);
    order.sort_unstable();
    let entries: Vec<MatchEntry> = order.into_iter().map(|i| *set.entry(i)).collect();
    MatchedPointSet::from_entries(entries, set.input_dims, set.ref_dims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const DIMS: (usize, usize) = (100, 120);

    fn set_of(points: &[(usize, usize, f64)]) -> MatchedPointSet {
        let entries = points
            .iter()
            .map(|&(r, c, s)| MatchEntry {
                input_loc: PixelLoc::new(r, c),
                ref_loc: PixelLoc::new(r, c),
                score: s,
            })
            .collect();
        MatchedPointSet::from_entries(entries, DIMS, DIMS).unwrap()
    }

    fn random_set(seed: u64, n: usize) -> MatchedPointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..n)
            .map(|_| MatchEntry {
                input_loc: PixelLoc::new(rng.random_range(0..DIMS.0), rng.random_range(0..DIMS.1)),
                ref_loc: PixelLoc::new(rng.random_range(0..DIMS.0), rng.random_range(0..DIMS.1)),
                score: rng.random::<f64>(),
            })
            .collect();
        MatchedPointSet::from_entries(entries, DIMS, DIMS).unwrap()
    }

    #[test]
    fn parses_well_formed_lines_in_order() {
        let text = "# comment\n3 4 5 6 0.9\n10 20 30 40 0.8\n1 2 3 4 0.7\n7 8 9 10 0.6\n11 12 13 14 0.5\n";
        let set = load_matches(text, DIMS, DIMS).unwrap();
        assert_eq!(set.len(), 5);
        assert_eq!(set.entry(0).input_loc, PixelLoc::new(4, 3));
        assert_eq!(set.entry(0).ref_loc, PixelLoc::new(6, 5));
        assert_eq!(set.entry(2).input_loc, PixelLoc::new(2, 1));
    }

    #[test]
    fn out_of_range_coordinate_names_the_line() {
        let text = "3 4 5 6 0.9\n1 2 3 4 0.8\n5 6 7 8 0.7\n9 10 11 12 0.6\n500 4 5 6 0.5\n";
        match load_matches(text, DIMS, DIMS) {
            Err(Error::MatchOutOfBounds { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected out-of-bounds error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_names_the_line() {
        let text = "3 4 5 6 0.9\n1 2 3\n";
        match load_matches(text, DIMS, DIMS) {
            Err(Error::MatchParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_input_locations_keep_highest_score() {
        let text = "3 4 5 6 0.9\n1 2 3 4 0.8\n3 4 9 9 0.2\n5 6 7 8 0.7\n9 10 11 12 0.6\n11 12 13 14 0.5\n";
        let set = load_matches(text, DIMS, DIMS).unwrap();
        assert_eq!(set.len(), 5);
        let dup: Vec<_> = set
            .entries()
            .iter()
            .filter(|e| e.input_loc == PixelLoc::new(4, 3))
            .collect();
        assert_eq!(dup.len(), 1);
        assert_eq!(dup[0].score, 0.9);
    }

    #[test]
    fn too_few_matches_is_an_error() {
        let text = "3 4 5 6 0.9\n1 2 3 4 0.8\n";
        assert!(matches!(
            load_matches(text, DIMS, DIMS),
            Err(Error::InsufficientMatches { have: 2, need: 5 })
        ));
    }

    #[test]
    fn fraction_filter_keeps_ceil_of_count() {
        let set = random_set(5, 10);
        let kept = filter_top_fraction(&set, 0.7).unwrap();
        assert_eq!(kept.len(), 7);

        let identity = filter_top_fraction(&set, 1.0).unwrap();
        assert_eq!(identity.entries(), set.entries());
    }

    #[test]
    fn fraction_filter_matches_sort_oracle() {
        let set = random_set(9, 9);
        let kept = filter_top_fraction(&set, 0.5).unwrap();
        assert_eq!(kept.len(), 5);
        // Oracle: plain sort by score descending.
        let mut scores: Vec<f64> = set.entries().iter().map(|e| e.score).collect();
        scores.sort_by(|a, b| b.total_cmp(a));
        let mut kept_scores: Vec<f64> = kept.entries().iter().map(|e| e.score).collect();
        kept_scores.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(kept_scores, scores[..5]);
    }

    #[test]
    fn fraction_filter_below_minimum_errors() {
        let set = random_set(2, 5);
        assert!(matches!(
            filter_top_fraction(&set, 0.7),
            Err(Error::InsufficientMatches { have: 4, need: 5 })
        ));
    }

    #[test]
    fn nearest_self_and_exhaustive() {
        let set = set_of(&[(4, 3, 1.0), (10, 10, 1.0), (50, 60, 1.0), (0, 0, 1.0), (99, 119, 1.0)]);
        assert_eq!(set.nearest_matches(Side::Input, PixelLoc::new(4, 3), 1), vec![0]);
        let all = set.nearest_matches(Side::Input, PixelLoc::new(11, 11), 5);
        assert_eq!(all.len(), 5);
        assert_eq!(all[0], 1);
    }

    #[test]
    fn nearest_matches_scan_oracle() {
        let set = random_set(17, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let loc = PixelLoc::new(rng.random_range(0..DIMS.0), rng.random_range(0..DIMS.1));
            let got = set.nearest_matches(Side::Reference, loc, 5);
            let want = nearest_scan(set.entries(), Side::Reference, loc, 5);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn grid_index_agrees_with_scan() {
        let set = random_set(23, 1500);
        assert!(set.grid_input.is_some());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let loc = PixelLoc::new(rng.random_range(0..DIMS.0), rng.random_range(0..DIMS.1));
            for side in [Side::Input, Side::Reference] {
                let got = set.nearest_matches(side, loc, 7);
                let want = nearest_scan(set.entries(), side, loc, 7);
                assert_eq!(got, want, "loc {loc:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn filter_is_idempotent(seed in 0u64..500, n in 8usize..40, frac in 0.5f64..1.0) {
            let set = random_set(seed, n);
            if let Ok(once) = filter_top_fraction(&set, frac) {
                let twice = filter_top_fraction(&once, 1.0).unwrap();
                prop_assert_eq!(once.entries(), twice.entries());
            }
        }

        #[test]
        fn nearest_distances_nondecreasing(seed in 0u64..500, r in 0usize..100, c in 0usize..120) {
            let set = random_set(seed, 30);
            let loc = PixelLoc::new(r, c);
            let ids = set.nearest_matches(Side::Input, loc, 10);
            let dists: Vec<f64> = ids.iter().map(|&id| dist2(set.entry(id).input_loc, loc)).collect();
            prop_assert!(dists.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
