use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { k_min: 2, k_max: 15, restarts: 10, seed: 0 }
    }
}

/// Labels in `0..k`, numbered by first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub window_start: usize,
    pub labels: Vec<usize>,
    pub k: usize,
}

impl ClusterAssignment {
    pub fn from_labels(window_start: usize, raw: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels: Vec<usize> = raw
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Self { window_start, k: map.len(), labels }
    }

    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == c).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Ascending eigenpairs of the symmetric-normalized Laplacian of the
/// Gaussian affinity on rows of `z: [n, d]`. `None` when all rows coincide.
pub fn laplacian_spectrum(z: &[f64], n: usize, d: usize) -> Option<(Vec<f64>, DMatrix<f64>)> {
    let row = |i: usize| &z[i * d..(i + 1) * d];
    let mut dist = vec![0.0; n * n];
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let s = sq_dist(row(i), row(j));
            dist[i * n + j] = s;
            dist[j * n + i] = s;
            pairs.push(s);
        }
    }
    if pairs.iter().all(|&s| s == 0.0) {
        return None;
    }
    let mut sigma2 = median(pairs.clone());
    if sigma2 <= 0.0 {
        sigma2 = median(pairs.into_iter().filter(|&s| s > 0.0).collect());
    }
    let mut w = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                w[(i, j)] = (-dist[i * n + j] / sigma2).exp();
            }
        }
    }
    let deg: Vec<f64> = (0..n).map(|i| w.row(i).sum().max(1e-300)).collect();
    let mut l = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            l[(i, j)] -= w[(i, j)] / (deg[i] * deg[j]).sqrt();
        }
    }
    let eig = SymmetricEigen::new(l);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = DMatrix::<f64>::zeros(n, n);
    for (c, &k) in order.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(k));
    }
    Some((vals, vecs))
}

/// Largest gap `λ_{k+1} − λ_k` for `k` in `[k_min, k_max]` (1-based count of
/// kept eigenvalues); ties go to the smaller `k`.
pub fn eigengap_k(eigenvalues: &[f64], k_min: usize, k_max: usize) -> usize {
    let n = eigenvalues.len();
    let hi = k_max.min(n.saturating_sub(1));
    let lo = k_min.min(hi).max(1);
    let mut best = (lo, f64::NEG_INFINITY);
    for k in lo..=hi {
        let gap = eigenvalues[k] - eigenvalues[k - 1];
        if gap > best.1 {
            best = (k, gap);
        }
    }
    best.0
}

fn kmeans_once<R: Rng>(x: &[f64], n: usize, d: usize, k: usize, rng: &mut R) -> (Vec<usize>, f64) {
    let row = |i: usize| &x[i * d..(i + 1) * d];
    // k-means++ seeding
    let mut centers: Vec<Vec<f64>> = vec![row(rng.random_range(0..n)).to_vec()];
    let mut near: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = near.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in near.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        };
        centers.push(row(pick).to_vec());
        for i in 0..n {
            near[i] = near[i].min(sq_dist(row(i), centers.last().unwrap()));
        }
    }
    let mut labels = vec![usize::MAX; n];
    for _ in 0..300 {
        let mut changed = false;
        for i in 0..n {
            let (best, _) = centers
                .iter()
                .enumerate()
                .map(|(c, m)| (c, sq_dist(row(i), m)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, v) in sums[labels[i]].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed an empty cluster at the point farthest from its center
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(row(a), &centers[labels[a]]).total_cmp(&sq_dist(row(b), &centers[labels[b]]))
                    })
                    .unwrap();
                centers[c] = row(far).to_vec();
                labels[far] = c;
                changed = true;
            } else {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = (0..n).map(|i| sq_dist(row(i), &centers[labels[i]])).sum();
    (labels, inertia)
}

/// Seeded k-means++ with restarts; keeps the lowest-inertia run.
pub fn kmeans(x: &[f64], n: usize, d: usize, k: usize, restarts: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let run = kmeans_once(x, n, d, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.1 < b.1 - 1e-12) {
            best = Some(run);
        }
    }
    best.unwrap().0
}

/// Spectral clustering of embedding rows `z: [n, d]`.
pub fn spectral_cluster(z: &[f64], n: usize, d: usize, cfg: &ClusterConfig) -> Result<ClusterAssignment> {
    if z.len() != n * d {
        return Err(Error::Shape(format!("embedding needs {n}x{d} values, got {}", z.len())));
    }
    if cfg.k_min < 2 || cfg.k_min > cfg.k_max {
        return Err(Error::Config(format!("invalid cluster range [{}, {}]", cfg.k_min, cfg.k_max)));
    }
    if n < cfg.k_min {
        return Err(Error::Data(format!("{n} points cannot form {} clusters", cfg.k_min)));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embedding passed to clustering".into()));
    }
    let Some((vals, vecs)) = laplacian_spectrum(z, n, d) else {
        warn!("all embeddings identical; returning a single cluster");
        return Ok(ClusterAssignment::from_labels(0, &vec![0; n]));
    };
    let k = eigengap_k(&vals, cfg.k_min, cfg.k_max);
    let mut u = vec![0.0; n * k];
    for i in 0..n {
        let norm = (0..k).map(|c| vecs[(i, c)].powi(2)).sum::<f64>().sqrt().max(1e-12);
        for c in 0..k {
            u[i * k + c] = vecs[(i, c)] / norm;
        }
    }
    let labels = kmeans(&u, n, k, k, cfg.restarts, cfg.seed);
    Ok(ClusterAssignment::from_labels(0, &labels))
}
