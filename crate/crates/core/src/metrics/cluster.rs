use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

pub const KMEANS_RESTARTS: usize = 10;

fn check_rows(x: &[Vec<f64>]) -> Result<usize> {
    let d = x.first().map_or(0, Vec::len);
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(Error::shape("feature rows", &[d], &[bad.len()]));
    }
    Ok(d)
}

/// Principal-component projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// `n × dims` scores.
    pub projected: Vec<Vec<f64>>,
    /// `dims` unit components, each of length `d`.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the covariance, descending.
    pub explained_variance: Vec<f64>,
    pub mean: Vec<f64>,
}

/// Centers the columns and projects onto the top `dims` eigenvectors of the
/// covariance. Each component is signed so its largest-magnitude entry is
/// positive.
pub fn pca(x: &[Vec<f64>], dims: usize) -> Result<Pca> {
    let d = check_rows(x)?;
    let n = x.len();
    if dims == 0 || dims > n.min(d) {
        return Err(Error::Contract(format!(
            "cannot keep {dims} components of {n} samples in {d} dimensions"
        )));
    }
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| x[i][j] - mean[j]);
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = (centered.transpose() * &centered) / denom;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(dims);
    let mut explained = Vec::with_capacity(dims);
    for &c in order.iter().take(dims) {
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (i, &x)| if x.abs() > bv { (i, x.abs()) } else { (bi, bv) })
            .0;
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained.push(eig.eigenvalues[c].max(0.0));
    }
    let projected = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|c| (0..d).map(|j| centered[(i, j)] * c[j]).sum())
                .collect()
        })
        .collect();
    Ok(Pca {
        projected,
        components,
        explained_variance: explained,
        mean,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignment: ClusterAssignment,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(c, m)| (c, dist2(point, m)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn plus_plus(x: &[Vec<f64>], k: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut centroids = vec![x[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = x.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(x[pick].clone());
        for (p, d) in x.iter().zip(d2.iter_mut()) {
            *d = d.min(dist2(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn update_centroids(x: &[Vec<f64>], labels: &mut [usize], k: usize, d: usize) -> Vec<Vec<f64>> {
    loop {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in x.iter().zip(labels.iter()) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            for (s, &c) in sums.iter_mut().zip(&counts) {
                s.iter_mut().for_each(|v| *v /= c as f64);
            }
            return sums;
        };
        // The point farthest from its centroid, taken from a cluster that can spare it.
        let means: Vec<Vec<f64>> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| s.iter().map(|v| v / c.max(1) as f64).collect())
            .collect();
        let far = (0..x.len())
            .filter(|&i| counts[labels[i]] > 1)
            .map(|i| (i, dist2(&x[i], &means[labels[i]])))
            .fold((usize::MAX, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0;
        labels[far] = empty;
    }
}

fn inertia(x: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    x.iter().zip(labels).map(|(p, &l)| dist2(p, &centroids[l])).sum()
}

fn lloyd(x: &[Vec<f64>], k: usize, max_iter: usize, rng: &mut rng::Rng, d: usize) -> KMeans {
    let mut centroids = plus_plus(x, k, rng);
    let mut labels: Vec<usize> = x.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut history = Vec::new();
    for iter in 0..max_iter.max(1) {
        centroids = update_centroids(x, &mut labels, k, d);
        history.push(inertia(x, &labels, &centroids));
        if iter + 1 == max_iter.max(1) {
            break;
        }
        let next: Vec<usize> = x.iter().map(|p| nearest(p, &centroids).0).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let total = inertia(x, &labels, &centroids);
    KMeans {
        assignment: ClusterAssignment { labels, k },
        centroids,
        inertia: total,
        history,
    }
}

/// k-means++ seeding and Lloyd iterations, best of [`KMEANS_RESTARTS`]
/// restarts by inertia (earliest on ties).
pub fn kmeans(x: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KMeans> {
    let d = check_rows(x)?;
    if k == 0 || k > x.len() {
        return Err(Error::Contract(format!("k = {k} with {} points", x.len())));
    }
    let mut best: Option<KMeans> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut r = rng::rng_for(seed, &[tag::KMEANS, restart as u64]);
        let run = lloyd(x, k, max_iter, &mut r, d);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}
