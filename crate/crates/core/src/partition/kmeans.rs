//! Lloyd k-means over the spectral embedding with deterministic
//! farthest-first initialization.
//!
//! The first center is the point farthest from the data mean, every further
//! center the point farthest from all chosen centers; ties break toward the
//! lower point index. Initialization is therefore a function of the data
//! alone, so relabeling nodes permutes the clustering with them.

const MAX_ITER: usize = 100;
const INERTIA_TOL: f64 = 1e-6;
const MAX_REPAIRS: usize = 10;

#[derive(Debug, Clone)]
pub struct Clustering {
    pub k: usize,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn farthest_first(points: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut mean = vec![0.0; dim];
    for p in points {
        mean.iter_mut().zip(p).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= points.len() as f64);

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut min_d: Vec<f64> = points.iter().map(|p| dist2(p, &mean)).collect();
    for _ in 0..k {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, &d) in min_d.iter().enumerate() {
            if d > best.0 {
                best = (d, i);
            }
        }
        let chosen = points[best.1].clone();
        for (i, p) in points.iter().enumerate() {
            min_d[i] = min_d[i].min(dist2(p, &chosen));
        }
        centers.push(chosen);
    }
    centers
}

fn assign(points: &[Vec<f64>], centers: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut labels = Vec::with_capacity(points.len());
    let mut inertia = 0.0;
    for p in points {
        let mut best = (f64::INFINITY, 0usize);
        for (c, center) in centers.iter().enumerate() {
            let d = dist2(p, center);
            if d < best.0 {
                best = (d, c);
            }
        }
        inertia += best.0;
        labels.push(best.1);
    }
    (labels, inertia)
}

fn lloyd(points: &[Vec<f64>], centers: &mut Vec<Vec<f64>>) -> (Vec<usize>, f64) {
    let dim = points[0].len();
    let k = centers.len();
    let (mut labels, mut inertia) = assign(points, centers);
    for _ in 0..MAX_ITER {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
            // empty clusters keep their previous center; repaired by the caller
        }
        let (new_labels, new_inertia) = assign(points, centers);
        let done = (inertia - new_inertia).abs() <= INERTIA_TOL * inertia.max(f64::MIN_POSITIVE);
        labels = new_labels;
        inertia = new_inertia;
        if done {
            break;
        }
    }
    (labels, inertia)
}

/// Clusters `points` into at most `k` groups. Clusters that come out empty
/// are re-seeded from the point farthest from its center, up to a bounded
/// number of repairs; a cluster still empty after that stays empty and the
/// caller drops it.
pub fn cluster(points: &[Vec<f64>], k: usize) -> Clustering {
    assert!(!points.is_empty() && k >= 1);
    let k = k.min(points.len());
    let mut centers = farthest_first(points, k);
    let (mut labels, mut inertia) = lloyd(points, &mut centers);

    for _ in 0..MAX_REPAIRS {
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            break;
        };
        // Re-seed from the point farthest from its assigned center.
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, p) in points.iter().enumerate() {
            let d = dist2(p, &centers[labels[i]]);
            if d > best.0 {
                best = (d, i);
            }
        }
        centers[empty] = points[best.1].clone();
        let (nl, ni) = lloyd(points, &mut centers);
        labels = nl;
        inertia = ni;
    }

    Clustering { k, labels, inertia }
}
