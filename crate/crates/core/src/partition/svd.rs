//! Partial SVD of the normalized across-affinity matrix: dense decomposition
//! for small graphs, restarted Golub-Kahan-Lanczos bidiagonalization above
//! that.
//!
//! The iterative path extracts one triplet at a time. Earlier triplets are
//! deflated by keeping the working basis orthogonal to them, so duplicated
//! leading singular values (disconnected graphs produce σ = 1 once per
//! component) converge at the ordinary geometric rate instead of stalling.

use super::BipartiteAffinity;
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Below this many total nodes the dense path is used.
pub const DENSE_NODE_LIMIT: usize = 500;

/// Singular-value drift across a restart considered converged.
const DRIFT_TOL: f64 = 1e-9;

/// Ritz residual that accepts a triplet regardless of drift.
const RESIDUAL_TOL: f64 = 1e-11;

/// Bidiagonalization steps per restart.
const SUBSPACE_CAP: usize = 30;

const MAX_RESTARTS: usize = 400;

/// Top singular triplets, values descending. `u[j]` and `v[j]` are the j-th
/// left and right singular vectors.
#[derive(Debug, Clone)]
pub struct PartialSvd {
    pub values: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Flips each singular pair so the largest-magnitude entry of `u` is
/// positive; makes the decomposition reproducible across node orderings.
fn canonicalize(u: &mut [f64], v: &mut [f64]) {
    let mut best = 0.0;
    let mut sign = 1.0;
    for &x in u.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = if x < 0.0 { -1.0 } else { 1.0 };
        }
    }
    if sign < 0.0 {
        u.iter_mut().for_each(|x| *x = -*x);
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Dense SVD of the normalized matrix, truncated to `rank` triplets.
pub fn dense_top_k(g: &BipartiteAffinity, rank: usize) -> PartialSvd {
    let (nx, ny) = (g.n_x(), g.n_y());
    let mut m = DMatrix::<f64>::zeros(nx, ny);
    for (x, y, w) in g.normalized_edges() {
        m[(x as usize, y as usize)] = w;
    }
    let svd = m.svd(true, true);
    let u_mat = svd.u.expect("left singular vectors requested");
    let vt_mat = svd.v_t.expect("right singular vectors requested");

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    order.truncate(rank);

    let mut values = Vec::with_capacity(rank);
    let mut u = Vec::with_capacity(rank);
    let mut v = Vec::with_capacity(rank);
    for &j in &order {
        values.push(svd.singular_values[j]);
        let mut uc: Vec<f64> = (0..nx).map(|i| u_mat[(i, j)]).collect();
        let mut vc: Vec<f64> = (0..ny).map(|i| vt_mat[(j, i)]).collect();
        canonicalize(&mut uc, &mut vc);
        u.push(uc);
        v.push(vc);
    }
    PartialSvd { values, u, v }
}

struct NormalizedOp {
    nx: usize,
    ny: usize,
    edges: Vec<(u32, u32, f64)>,
}

impl NormalizedOp {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &(x, y, w) in &self.edges {
            out[x as usize] += w * v[y as usize];
        }
    }

    fn apply_t(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &(x, y, w) in &self.edges {
            out[y as usize] += w * u[x as usize];
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Removes the components of `v` along every vector of both bases (run
/// twice for stability).
fn reorthogonalize(v: &mut [f64], basis_a: &[Vec<f64>], basis_b: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis_a.iter().chain(basis_b) {
            let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            v.iter_mut().zip(b).for_each(|(a, c)| *a -= dot * c);
        }
    }
}

fn random_unit(
    rng: &mut ChaCha8Rng,
    n: usize,
    basis_a: &[Vec<f64>],
    basis_b: &[Vec<f64>],
) -> Option<Vec<f64>> {
    for _ in 0..32 {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        reorthogonalize(&mut v, basis_a, basis_b);
        let nv = norm(&v);
        if nv > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nv);
            return Some(v);
        }
    }
    None
}

struct Factorization {
    us: Vec<Vec<f64>>,
    vs: Vec<Vec<f64>>,
    alphas: Vec<f64>,
    betas: Vec<f64>,
    /// Norm of the residual vector that would start step m+1.
    tail_beta: f64,
}

/// Runs up to `cap` bidiagonalization steps from `v_start`, keeping the
/// basis orthogonal to the already-found triplets in `locked_u`/`locked_v`.
fn bidiagonalize(
    op: &NormalizedOp,
    v_start: Vec<f64>,
    cap: usize,
    locked_u: &[Vec<f64>],
    locked_v: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Factorization {
    let mut us: Vec<Vec<f64>> = Vec::with_capacity(cap);
    let mut vs: Vec<Vec<f64>> = vec![v_start];
    let mut alphas = Vec::with_capacity(cap);
    let mut betas = Vec::with_capacity(cap);
    let mut buf_x = vec![0.0; op.nx];
    let mut buf_y = vec![0.0; op.ny];
    let mut tail_beta = 0.0;

    for step in 0..cap {
        op.apply(&vs[step], &mut buf_x);
        let mut u = buf_x.clone();
        reorthogonalize(&mut u, &us, locked_u);
        let a = norm(&u);
        if a > 1e-13 {
            u.iter_mut().for_each(|x| *x /= a);
            alphas.push(a);
        } else {
            match random_unit(rng, op.nx, &us, locked_u) {
                Some(fresh) => {
                    u = fresh;
                    alphas.push(0.0);
                }
                None => break, // column space exhausted
            }
        }
        us.push(u);

        op.apply_t(&us[step], &mut buf_y);
        let mut w = buf_y.clone();
        reorthogonalize(&mut w, &vs, locked_v);
        let b = norm(&w);
        if step + 1 == cap {
            tail_beta = b;
            break;
        }
        if b > 1e-13 {
            w.iter_mut().for_each(|x| *x /= b);
            betas.push(b);
        } else {
            match random_unit(rng, op.ny, &vs, locked_v) {
                Some(fresh) => {
                    w = fresh;
                    betas.push(0.0);
                }
                None => {
                    tail_beta = 0.0;
                    break;
                }
            }
        }
        vs.push(w);
    }
    Factorization {
        us,
        vs,
        alphas,
        betas,
        tail_beta,
    }
}

/// Leading Ritz triplet of the factorization plus its residual bound.
fn leading_ritz(f: &Factorization) -> Option<(f64, Vec<f64>, Vec<f64>, f64)> {
    let m = f.alphas.len();
    if m == 0 {
        return None;
    }
    // A·v_{j+1} = β_j·u_j + α_{j+1}·u_{j+1}, so A V = U B with B upper
    // bidiagonal: alphas on the diagonal, betas on the superdiagonal.
    let mut b = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        b[(j, j)] = f.alphas[j];
        if j + 1 < m {
            b[(j, j + 1)] = f.betas[j];
        }
    }
    let svd = b.clone().svd(true, true);
    let p = svd.u.as_ref()?;
    let q_t = svd.v_t.as_ref()?;
    let mut top = 0;
    for j in 0..m {
        if svd.singular_values[j] > svd.singular_values[top] {
            top = j;
        }
    }
    let sigma = svd.singular_values[top];
    let mut u = vec![0.0; f.us[0].len()];
    for (step, u_vec) in f.us.iter().enumerate() {
        let c = p[(step, top)];
        u.iter_mut().zip(u_vec).for_each(|(o, x)| *o += c * x);
    }
    let mut v = vec![0.0; f.vs[0].len()];
    for (step, v_vec) in f.vs.iter().take(m).enumerate() {
        let c = q_t[(top, step)];
        v.iter_mut().zip(v_vec).for_each(|(o, x)| *o += c * x);
    }
    // ‖Aᵀu − σv‖ = tail_beta · |last row of P at the chosen column|
    let residual = f.tail_beta * p[(m - 1, top)].abs();
    Some((sigma, u, v, residual))
}

/// Connected components of the bipartite graph by union-find. Returns per-x
/// and per-y component ids (dense, order of first appearance).
pub fn bipartite_components(g: &BipartiteAffinity) -> (Vec<usize>, Vec<usize>, usize) {
    let (nx, ny) = (g.n_x(), g.n_y());
    let mut parent: Vec<usize> = (0..nx + ny).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for &(x, y, _) in g.edges() {
        let a = find(&mut parent, x as usize);
        let b = find(&mut parent, nx + y as usize);
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut dense = std::collections::HashMap::new();
    let mut comp_x = Vec::with_capacity(nx);
    let mut comp_y = Vec::with_capacity(ny);
    for i in 0..nx + ny {
        let root = find(&mut parent, i);
        let next = dense.len();
        let id = *dense.entry(root).or_insert(next);
        if i < nx {
            comp_x.push(id);
        } else {
            comp_y.push(id);
        }
    }
    (comp_x, comp_y, dense.len())
}

/// The exact σ = 1 triplet of one connected component: degree-scaled
/// indicator vectors on both sides.
fn component_triplet(
    g: &BipartiteAffinity,
    comp_x: &[usize],
    comp_y: &[usize],
    comp: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut u: Vec<f64> = (0..g.n_x())
        .map(|i| if comp_x[i] == comp { g.deg_x()[i].sqrt() } else { 0.0 })
        .collect();
    let mut v: Vec<f64> = (0..g.n_y())
        .map(|i| if comp_y[i] == comp { g.deg_y()[i].sqrt() } else { 0.0 })
        .collect();
    let nu = norm(&u);
    let nv = norm(&v);
    u.iter_mut().for_each(|x| *x /= nu);
    v.iter_mut().for_each(|x| *x /= nv);
    (u, v)
}

/// Component ids ordered for extraction: larger node count first, heavier
/// total weight next, earlier appearance last.
pub fn component_order(g: &BipartiteAffinity, comp_x: &[usize], comp_y: &[usize], count: usize) -> Vec<usize> {
    let mut sizes = vec![0usize; count];
    let mut weights = vec![0.0f64; count];
    for (i, &c) in comp_x.iter().enumerate() {
        sizes[c] += 1;
        weights[c] += g.deg_x()[i];
    }
    for &c in comp_y {
        sizes[c] += 1;
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&a, &b| {
        sizes[b]
            .cmp(&sizes[a])
            .then(weights[b].total_cmp(&weights[a]))
            .then(a.cmp(&b))
    });
    order
}

/// The exact σ = 1 triplets of the largest `rank` connected components.
/// These span the full leading singular space of a disconnected graph.
pub fn component_top_k(
    g: &BipartiteAffinity,
    comp_x: &[usize],
    comp_y: &[usize],
    count: usize,
    rank: usize,
) -> PartialSvd {
    let order = component_order(g, comp_x, comp_y, count);
    let take = rank.min(count);
    let mut out = PartialSvd {
        values: Vec::with_capacity(take),
        u: Vec::with_capacity(take),
        v: Vec::with_capacity(take),
    };
    for &comp in order.iter().take(take) {
        let (u, v) = component_triplet(g, comp_x, comp_y, comp);
        out.values.push(1.0);
        out.u.push(u);
        out.v.push(v);
    }
    out
}

/// Iterative partial SVD of the normalized across-affinity matrix.
///
/// Every connected component contributes a singular value exactly 1 whose
/// vectors are known in closed form, so those triplets are emitted directly
/// (largest component first). Only when more triplets are requested than
/// components exist does the restarted bidiagonalization run, deflated
/// against the component vectors, accepting a triplet when its value drifts
/// less than 1e-9 across a restart (or its residual is at noise level).
pub fn lanczos_top_k(g: &BipartiteAffinity, rank: usize, seed: u64) -> Result<PartialSvd> {
    let op = NormalizedOp {
        nx: g.n_x(),
        ny: g.n_y(),
        edges: g.normalized_edges(),
    };
    let m_max = op.nx.min(op.ny);
    let rank = rank.min(m_max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut out = PartialSvd {
        values: Vec::with_capacity(rank),
        u: Vec::with_capacity(rank),
        v: Vec::with_capacity(rank),
    };

    // Exact component triplets first, ordered by node count then weight.
    let (comp_x, comp_y, comp_count) = bipartite_components(g);
    let head = component_top_k(g, &comp_x, &comp_y, comp_count, rank);
    out.values.extend(head.values);
    out.u.extend(head.u);
    out.v.extend(head.v);

    'next_triplet: while out.values.len() < rank {
        let cap = SUBSPACE_CAP.min(m_max.saturating_sub(out.values.len()).max(1));
        let mut v_start = match random_unit(&mut rng, op.ny, &[], &out.v) {
            Some(v) => v,
            None => break, // row space exhausted; remaining values are zero
        };
        let mut prev_sigma = f64::INFINITY;
        let mut accepted = None;
        let mut last_drift = f64::INFINITY;
        for _ in 0..MAX_RESTARTS {
            let fact = bidiagonalize(&op, v_start.clone(), cap, &out.u, &out.v, &mut rng);
            let Some((sigma, u, v, residual)) = leading_ritz(&fact) else {
                break 'next_triplet; // deflated operator exhausted
            };
            let drift = (sigma - prev_sigma).abs();
            last_drift = drift;
            let whole_space = fact.alphas.len() >= m_max.saturating_sub(out.values.len());
            if drift < DRIFT_TOL || residual <= RESIDUAL_TOL.max(1e-14 * sigma) || whole_space {
                accepted = Some((sigma, u, v));
                break;
            }
            prev_sigma = sigma;
            v_start = v;
        }
        match accepted {
            Some((sigma, mut u, mut v)) => {
                canonicalize(&mut u, &mut v);
                out.values.push(sigma);
                out.u.push(u);
                out.v.push(v);
            }
            None => {
                return Err(Error::SvdNoConvergence {
                    iterations: MAX_RESTARTS * cap,
                    drift: last_drift,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_graph(seed: u64, nx: usize, ny: usize, density: f64) -> BipartiteAffinity {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for x in 0..nx as u32 {
            // guarantee no isolated x node
            let forced = rng.random_range(0..ny) as u32;
            for y in 0..ny as u32 {
                if y == forced || rng.random::<f64>() < density {
                    edges.push((x, y, rng.random_range(0.05..1.0)));
                }
            }
        }
        // attach any isolated y node
        let g = BipartiteAffinity::new(nx, ny, edges.clone());
        let mut edges = edges;
        for y in g.isolated_y() {
            edges.push((rng.random_range(0..nx) as u32, y as u32, rng.random_range(0.05..1.0)));
        }
        BipartiteAffinity::new(nx, ny, edges)
    }

    /// Power iteration on ΩᵀΩ, independent of both SVD paths.
    fn leading_sigma_power(g: &BipartiteAffinity) -> f64 {
        let edges = g.normalized_edges();
        let mut v = vec![1.0; g.n_y()];
        let mut u = vec![0.0; g.n_x()];
        for _ in 0..2000 {
            u.iter_mut().for_each(|x| *x = 0.0);
            for &(x, y, w) in &edges {
                u[x as usize] += w * v[y as usize];
            }
            let mut vn = vec![0.0; g.n_y()];
            for &(x, y, w) in &edges {
                vn[y as usize] += w * u[x as usize];
            }
            let n = vn.iter().map(|x| x * x).sum::<f64>().sqrt();
            vn.iter_mut().for_each(|x| *x /= n);
            v = vn;
        }
        let mut au = vec![0.0; g.n_x()];
        for &(x, y, w) in &edges {
            au[x as usize] += w * v[y as usize];
        }
        au.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn dense_leading_sigma_is_one() {
        let g = random_graph(1, 40, 30, 0.2);
        let svd = dense_top_k(&g, 3);
        assert!((svd.values[0] - 1.0).abs() < 1e-8, "sigma1 = {}", svd.values[0]);
        assert!((svd.values[0] - leading_sigma_power(&g)).abs() < 1e-8);
    }

    #[test]
    fn lanczos_matches_dense_on_shared_sizes() {
        for seed in [3, 4, 5] {
            let g = random_graph(seed, 120, 90, 0.08);
            let rank = 5;
            let dense = dense_top_k(&g, rank);
            let lanczos = lanczos_top_k(&g, rank, 1234).unwrap();
            for j in 0..rank {
                assert!(
                    (dense.values[j] - lanczos.values[j]).abs() < 1e-7,
                    "sigma_{j}: dense {} vs lanczos {}",
                    dense.values[j],
                    lanczos.values[j]
                );
            }
            // Residual check ‖A v − σ u‖ for the iterative triplets.
            let edges = g.normalized_edges();
            for j in 0..rank {
                let mut av = vec![0.0; g.n_x()];
                for &(x, y, w) in &edges {
                    av[x as usize] += w * lanczos.v[j][y as usize];
                }
                let resid: f64 = av
                    .iter()
                    .zip(&lanczos.u[j])
                    .map(|(a, u)| (a - lanczos.values[j] * u).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(resid < 1e-6, "triplet {j} residual {resid}");
            }
        }
    }

    #[test]
    fn lanczos_handles_degenerate_leading_pair() {
        // Two disconnected bicliques: sigma = 1 with multiplicity two.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut edges = Vec::new();
        for x in 0..300u32 {
            for y in 0..40u32 {
                let (gx, gy) = (x >= 150, y >= 20);
                if gx == gy && rng.random::<f64>() < 0.4 {
                    edges.push((x, y, rng.random_range(0.05..1.0)));
                }
            }
        }
        let g = BipartiteAffinity::new(300, 40, edges);
        if g.has_isolated() {
            return; // astronomically unlikely at this density
        }
        let svd = lanczos_top_k(&g, 2, 7).unwrap();
        assert!((svd.values[0] - 1.0).abs() < 1e-7, "sigma1 {}", svd.values[0]);
        assert!((svd.values[1] - 1.0).abs() < 1e-7, "sigma2 {}", svd.values[1]);
        // The two left vectors must separate the components.
        let disc = |u: &[f64]| -> f64 {
            let a: f64 = u[..150].iter().map(|x| x.abs()).sum();
            let b: f64 = u[150..].iter().map(|x| x.abs()).sum();
            (a - b).abs() / (a + b)
        };
        // Each vector lives (mostly) in one component's span or mixes them;
        // together they must span both components.
        let span0 = disc(&svd.u[0]);
        let span1 = disc(&svd.u[1]);
        assert!(span0 > 0.99 || span1 > 0.99 || (span0 < 0.9 && span1 < 0.9));
    }
}
