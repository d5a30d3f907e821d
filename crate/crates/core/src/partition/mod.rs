//! Pixel-level bipartite graph over the uncovered pixels of both images and
//! its spectral co-clustering.
//!
//! Nodes are uncovered input pixels (X side) and uncovered reference pixels
//! (Y side). An edge exists only when the two pixels' nearest matched points
//! are the same match pair; its weight is the style-independent affinity.
//! Clustering runs on the top singular vectors of the degree-normalized
//! across-affinity matrix `D_X^{-1/2} Ω D_Y^{-1/2}`.

pub mod kmeans;
pub mod svd;

use crate::correspondence::{MatchedPointSet, Side};
use crate::error::Result;
use crate::features::{dense_dist2, FeatureToggles, FeatureWeights, PixelFeatureBank, StyleFreeFeature};
use crate::imagecore::PixelLoc;
use crate::seeds::SuperpixelLabelMap;
use rayon::prelude::*;

/// Sparse bipartite affinity block Ω with per-node degree sums.
#[derive(Debug, Clone)]
pub struct BipartiteAffinity {
    n_x: usize,
    n_y: usize,
    edges: Vec<(u32, u32, f64)>,
    deg_x: Vec<f64>,
    deg_y: Vec<f64>,
}

impl BipartiteAffinity {
    /// Builds the affinity from an edge list; weights must be positive and
    /// finite, and no `(x, y)` pair may repeat.
    pub fn new(n_x: usize, n_y: usize, edges: Vec<(u32, u32, f64)>) -> Self {
        let mut deg_x = vec![0.0; n_x];
        let mut deg_y = vec![0.0; n_y];
        for &(x, y, w) in &edges {
            debug_assert!(w.is_finite() && w > 0.0, "edge weight must be positive");
            deg_x[x as usize] += w;
            deg_y[y as usize] += w;
        }
        Self {
            n_x,
            n_y,
            edges,
            deg_x,
            deg_y,
        }
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn edges(&self) -> &[(u32, u32, f64)] {
        &self.edges
    }

    pub fn deg_x(&self) -> &[f64] {
        &self.deg_x
    }

    pub fn deg_y(&self) -> &[f64] {
        &self.deg_y
    }

    /// Nodes with no incident edge, per side.
    pub fn isolated_x(&self) -> Vec<usize> {
        (0..self.n_x).filter(|&i| self.deg_x[i] == 0.0).collect()
    }

    pub fn isolated_y(&self) -> Vec<usize> {
        (0..self.n_y).filter(|&i| self.deg_y[i] == 0.0).collect()
    }

    pub fn has_isolated(&self) -> bool {
        self.deg_x.iter().chain(&self.deg_y).any(|&d| d == 0.0)
    }

    /// Edge list of `D_X^{-1/2} Ω D_Y^{-1/2}`. Every entry is at most 1.
    pub fn normalized_edges(&self) -> Vec<(u32, u32, f64)> {
        self.edges
            .iter()
            .map(|&(x, y, w)| {
                (
                    x,
                    y,
                    w / (self.deg_x[x as usize] * self.deg_y[y as usize]).sqrt(),
                )
            })
            .collect()
    }
}

/// Coupled cluster labels for both sides. A cluster with nodes on only one
/// side is flagged one-sided. `None` marks nodes the embedding could not
/// place (their component ranks below the requested cluster count); the
/// caller routes those through the seed-superpixel fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct CoClustering {
    pub k: usize,
    pub x_labels: Vec<Option<usize>>,
    pub y_labels: Vec<Option<usize>>,
    pub one_sided: Vec<bool>,
}

/// Exponent of the style-independent affinity: Σ ‖Δ‖²/λ over S, T, L_a, L_r.
pub(crate) fn style_free_exponent(
    s_a: &crate::features::SparseCode,
    s_b: &crate::features::SparseCode,
    t_a: &[f64],
    t_b: &[f64],
    la_a: &[f64],
    la_b: &[f64],
    lr_a: &crate::features::SparseCode,
    lr_b: &crate::features::SparseCode,
    weights: &FeatureWeights,
    toggles: &FeatureToggles,
) -> f64 {
    let mut sum = s_a.dist2(s_b) / weights.lambda_s;
    if toggles.texture {
        sum += dense_dist2(t_a, t_b) / weights.lambda_t;
    }
    if toggles.distance {
        sum += dense_dist2(la_a, la_b) / weights.lambda_la;
        sum += lr_a.dist2(lr_b) / weights.lambda_lr;
    }
    sum
}

/// Edge weight between an input pixel and a reference pixel, in `(0, 1]`;
/// exactly 1 iff all four style-independent sub-features agree. Clamped to
/// the smallest positive float so far-apart pixels cannot underflow to a
/// zero weight.
pub fn pixel_affinity(
    f_in: StyleFreeFeature<'_>,
    f_ref: StyleFreeFeature<'_>,
    weights: &FeatureWeights,
    toggles: &FeatureToggles,
) -> f64 {
    (-style_free_exponent(
        f_in.s, f_ref.s, f_in.t, f_ref.t, f_in.la, f_ref.la, f_in.lr, f_ref.lr, weights, toggles,
    ))
    .exp()
    .max(f64::MIN_POSITIVE)
}

/// The pixel graph plus the pixel behind each node index.
#[derive(Debug, Clone)]
pub struct PixelGraph {
    pub affinity: BipartiteAffinity,
    pub x_pixels: Vec<PixelLoc>,
    pub y_pixels: Vec<PixelLoc>,
}

fn stride_lattice(map: &SuperpixelLabelMap, stride: usize) -> Vec<PixelLoc> {
    map.uncovered()
        .into_iter()
        .filter(|loc| loc.row % stride == 0 && loc.col % stride == 0)
        .collect()
}

/// Builds the bipartite graph over uncovered pixels, subsampled by `stride`
/// on each side. Returns `None` when either side has no node (the degenerate
/// signal: the partition stage is skipped).
#[allow(clippy::too_many_arguments)]
pub fn build_pixel_graph(
    bank_in: &PixelFeatureBank,
    bank_ref: &PixelFeatureBank,
    labels_in: &SuperpixelLabelMap,
    labels_ref: &SuperpixelLabelMap,
    matches: &MatchedPointSet,
    weights: &FeatureWeights,
    toggles: &FeatureToggles,
    stride: usize,
) -> Option<PixelGraph> {
    assert!(stride >= 1);
    let x_pixels = stride_lattice(labels_in, stride);
    let y_pixels = stride_lattice(labels_ref, stride);
    if x_pixels.is_empty() || y_pixels.is_empty() {
        return None;
    }

    let nearest_ids = |pixels: &[PixelLoc], side: Side| -> Vec<usize> {
        pixels
            .par_iter()
            .map(|&loc| matches.nearest_matches(side, loc, 1)[0])
            .collect()
    };
    let x_near = nearest_ids(&x_pixels, Side::Input);
    let y_near = nearest_ids(&y_pixels, Side::Reference);

    // Group node indices by nearest matched point; edges exist only inside a
    // group that has nodes on both sides.
    let mut x_groups: Vec<Vec<u32>> = vec![Vec::new(); matches.len()];
    let mut y_groups: Vec<Vec<u32>> = vec![Vec::new(); matches.len()];
    for (i, &m) in x_near.iter().enumerate() {
        x_groups[m].push(i as u32);
    }
    for (j, &m) in y_near.iter().enumerate() {
        y_groups[m].push(j as u32);
    }

    let x_pix: &[PixelLoc] = &x_pixels;
    let y_pix: &[PixelLoc] = &y_pixels;
    let edges: Vec<(u32, u32, f64)> = (0..matches.len())
        .into_par_iter()
        .flat_map_iter(|m| {
            let xs = &x_groups[m];
            let ys = &y_groups[m];
            xs.iter().flat_map(move |&xi| {
                ys.iter().map(move |&yj| {
                    let w = pixel_affinity(
                        bank_in.style_free(x_pix[xi as usize]),
                        bank_ref.style_free(y_pix[yj as usize]),
                        weights,
                        toggles,
                    );
                    (xi, yj, w)
                })
            })
        })
        .collect();

    Some(PixelGraph {
        affinity: BipartiteAffinity::new(x_pixels.len(), y_pixels.len(), edges),
        x_pixels,
        y_pixels,
    })
}

/// Cluster count from the uncovered-pixel budget: `max(2, ⌈count / area⌉)`.
pub fn choose_k(uncovered_count: usize, target_area: usize) -> usize {
    assert!(target_area >= 1);
    uncovered_count.div_ceil(target_area).max(2)
}

/// Spectral co-clustering: top singular vectors of the normalized
/// across-affinity matrix, degree-rescaled into a joint embedding, k-means
/// over both sides at once.
///
/// On a disconnected graph the leading singular space is spanned exactly by
/// one degree-scaled indicator per component, so those vectors are used
/// directly (largest components first) and no refinement past the component
/// count is attempted: with affinities spanning hundreds of orders of
/// magnitude, within-component singular vectors carry no usable geometry.
/// Nodes of components ranked beyond `k` come back unlabeled.
///
/// The seed drives the iterative solver's start vector; the graph must have
/// no isolated nodes (attach those to seed superpixels beforehand).
pub fn co_cluster(g: &BipartiteAffinity, k: usize, seed: u64) -> Result<CoClustering> {
    assert!(k >= 1);
    assert!(g.n_x() >= 1 && g.n_y() >= 1);
    assert!(!g.has_isolated(), "isolated nodes must be pre-attached");

    let (nx, ny) = (g.n_x(), g.n_y());
    if k == 1 {
        return Ok(CoClustering {
            k: 1,
            x_labels: vec![Some(0); nx],
            y_labels: vec![Some(0); ny],
            one_sided: vec![false],
        });
    }

    let rank = k.min(nx).min(ny);
    let (comp_x, comp_y, comp_count) = svd::bipartite_components(g);
    let svd = if comp_count >= 2 {
        svd::component_top_k(g, &comp_x, &comp_y, comp_count, rank)
    } else if nx + ny < svd::DENSE_NODE_LIMIT {
        svd::dense_top_k(g, rank)
    } else {
        svd::lanczos_top_k(g, rank, seed)?
    };
    let rank = svd.values.len(); // the solver may exhaust the spectrum early

    let mut points: Vec<Vec<f64>> = Vec::with_capacity(nx + ny);
    for i in 0..nx {
        let scale = 1.0 / g.deg_x[i].sqrt();
        points.push((0..rank).map(|j| svd.u[j][i] * scale).collect());
    }
    for i in 0..ny {
        let scale = 1.0 / g.deg_y[i].sqrt();
        points.push((0..rank).map(|j| svd.v[j][i] * scale).collect());
    }
    // Unit-normalize embedding rows; near-zero-degree nodes otherwise
    // explode under the D^{-1/2} scaling and k-means chases the outliers.
    // Rows that are exactly zero belong to components past the rank cut and
    // stay unlabeled.
    let mut placeable = Vec::new();
    let mut row_index = vec![usize::MAX; points.len()];
    for (i, row) in points.iter_mut().enumerate() {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
            row_index[i] = placeable.len();
            placeable.push(row.clone());
        }
    }
    if placeable.is_empty() {
        return Ok(CoClustering {
            k: 0,
            x_labels: vec![None; nx],
            y_labels: vec![None; ny],
            one_sided: Vec::new(),
        });
    }

    let clusters = kmeans::cluster(&placeable, k.min(placeable.len()));

    // Drop clusters that ended up empty, keeping ids dense.
    let mut counts = vec![0usize; clusters.k];
    for &l in &clusters.labels {
        counts[l] += 1;
    }
    let mut remap = vec![usize::MAX; clusters.k];
    let mut kept = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            remap[c] = kept;
            kept += 1;
        }
    }
    let label_of = |node: usize| -> Option<usize> {
        let slot = row_index[node];
        (slot != usize::MAX).then(|| remap[clusters.labels[slot]])
    };
    let x_labels: Vec<Option<usize>> = (0..nx).map(label_of).collect();
    let y_labels: Vec<Option<usize>> = (nx..nx + ny).map(label_of).collect();

    let mut on_x = vec![false; kept];
    let mut on_y = vec![false; kept];
    for l in x_labels.iter().flatten() {
        on_x[*l] = true;
    }
    for l in y_labels.iter().flatten() {
        on_y[*l] = true;
    }
    let one_sided = (0..kept).map(|c| !(on_x[c] && on_y[c])).collect();

    Ok(CoClustering {
        k: kept,
        x_labels,
        y_labels,
        one_sided,
    })
}
