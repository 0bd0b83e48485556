use serde::{Deserialize, Serialize};

use super::ClusterAssignment;
use crate::error::{Error, Result};
use crate::graphbuild::{nav_correlation, pearson};
use crate::marketdata::{FeatureTensor, PriceMatrix};

/// `(1/D) Σ_d |Corr(x_i^d, x_j^d)|` over aligned per-feature series.
pub fn multi_feature_rho(xi: &[&[f64]], xj: &[&[f64]]) -> f64 {
    assert_eq!(xi.len(), xj.len());
    xi.iter().zip(xj).map(|(a, b)| pearson(a, b).abs()).sum::<f64>() / xi.len() as f64
}

/// Pairwise `ρ_ij` for all assets of a standardized window, unit diagonal.
pub fn rho_matrix(f: &FeatureTensor) -> Vec<f64> {
    let (n, d) = (f.n_assets(), f.n_features());
    let mut out = vec![1.0; n * n];
    for i in 0..n {
        let xi: Vec<&[f64]> = (0..d).map(|k| f.series(i, k)).collect();
        for j in i + 1..n {
            let xj: Vec<&[f64]> = (0..d).map(|k| f.series(j, k)).collect();
            let r = multi_feature_rho(&xi, &xj);
            out[i * n + j] = r;
            out[j * n + i] = r;
        }
    }
    out
}

/// Within/between-cluster averages of a pairwise score matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub k: usize,
    /// Mean over non-singleton clusters; absent when every cluster is a singleton.
    pub intra_corr: Option<f64>,
    /// Absent when `k = 1`.
    pub inter_corr: Option<f64>,
    pub inter_dissim: Option<f64>,
}

/// Cluster averages of `rho` (`N × N`).
pub fn clustering_metrics(a: &ClusterAssignment, rho: &[f64]) -> Result<ClusterMetrics> {
    let n = a.labels.len();
    if rho.len() != n * n {
        return Err(Error::Shape(format!("score matrix is not {n}x{n}")));
    }
    let members: Vec<Vec<usize>> = (0..a.k).map(|c| a.members(c)).collect();
    if let Some(c) = members.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!("cluster {c} is empty")));
    }
    let mut intra = Vec::new();
    for m in members.iter().filter(|m| m.len() > 1) {
        let mut s = 0.0;
        let mut cnt = 0usize;
        for (x, &i) in m.iter().enumerate() {
            for &j in &m[x + 1..] {
                s += rho[i * n + j];
                cnt += 1;
            }
        }
        intra.push(s / cnt as f64);
    }
    let intra_corr = (!intra.is_empty()).then(|| intra.iter().sum::<f64>() / intra.len() as f64);
    let mut inter = Vec::new();
    for p in 0..a.k {
        for q in p + 1..a.k {
            let mut s = 0.0;
            for &i in &members[p] {
                for &j in &members[q] {
                    s += rho[i * n + j];
                }
            }
            inter.push(s / (members[p].len() * members[q].len()) as f64);
        }
    }
    let inter_corr = (!inter.is_empty()).then(|| inter.iter().sum::<f64>() / inter.len() as f64);
    Ok(ClusterMetrics {
        k: a.k,
        intra_corr,
        inter_corr,
        inter_dissim: inter_corr.map(|c| 1.0 - c),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeWeights {
    pub intra: f64,
    pub inter: f64,
}

impl Default for CompositeWeights {
    fn default() -> Self {
        Self { intra: 0.1, inter: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavScore {
    pub s_intra: f64,
    pub s_inter: f64,
    pub s: f64,
}

pub fn composite(s_intra: f64, s_inter: f64, w: CompositeWeights) -> f64 {
    w.intra * s_intra + w.inter * s_inter
}

/// `S = w_intra·S_intra + w_inter·(1 − InterCorr)` on signed NAV correlations.
/// Errors when the assignment has a single cluster or only singletons.
pub fn nav_composite_score(a: &ClusterAssignment, prices: &PriceMatrix, w: CompositeWeights) -> Result<NavScore> {
    let rho = nav_correlation(prices)?;
    nav_composite_from_corr(a, &rho, w)
}

pub fn nav_composite_from_corr(a: &ClusterAssignment, rho: &[f64], w: CompositeWeights) -> Result<NavScore> {
    let m = clustering_metrics(a, rho)?;
    let (Some(s_intra), Some(inter)) = (m.intra_corr, m.inter_corr) else {
        return Err(Error::Domain(format!(
            "composite score undefined for {} clusters of sizes {:?}",
            a.k,
            a.sizes()
        )));
    };
    let s_inter = 1.0 - inter;
    Ok(NavScore { s_intra, s_inter, s: composite(s_intra, s_inter, w) })
}

/// Pair-counting adjusted Rand index.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("label lengths {} and {} differ", a.len(), b.len())));
    }
    let (ka, kb) = (a.iter().max().map_or(0, |m| m + 1), b.iter().max().map_or(0, |m| m + 1));
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().map(|&v| c2(v)).sum();
    let rows: f64 = (0..ka).map(|x| c2((0..kb).map(|y| table[x * kb + y]).sum())).sum();
    let cols: f64 = (0..kb).map(|y| c2((0..ka).map(|x| table[x * kb + y]).sum())).sum();
    let total = c2(a.len() as u64);
    let expected = if total > 0.0 { rows * cols / total } else { 0.0 };
    let max = 0.5 * (rows + cols);
    if (max - expected).abs() < 1e-12 {
        // both partitions trivial (one block, or all singletons)
        let same = (0..ka).all(|x| (0..kb).filter(|&y| table[x * kb + y] > 0).count() <= 1)
            && (0..kb).all(|y| (0..ka).filter(|&x| table[x * kb + y] > 0).count() <= 1);
        return Ok(if same { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityProfile {
    pub counts: Vec<usize>,
    pub mean: f64,
    /// Window indices whose count differs from the previous window's by ≥ 2.
    pub spikes: Vec<usize>,
}

pub fn stability_profile(counts: &[usize]) -> Result<StabilityProfile> {
    if counts.is_empty() {
        return Err(Error::Data("stability profile needs at least one window".into()));
    }
    let spikes = (1..counts.len())
        .filter(|&w| counts[w].abs_diff(counts[w - 1]) >= 2)
        .collect();
    Ok(StabilityProfile {
        counts: counts.to_vec(),
        mean: counts.iter().sum::<usize>() as f64 / counts.len() as f64,
        spikes,
    })
}
