use serde::{Deserialize, Serialize};

use super::{CorrelationMatrix, ModularityMatrix};

pub const DEFAULT_TAU: f64 = 0.75;
pub const DEFAULT_DELTA: f64 = 0.1;

/// Thresholded correlation graph for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowGraph {
    pub n: usize,
    /// `N × N`, zero diagonal.
    pub adjacency: Vec<f64>,
    /// Undirected pairs `(i, j)`, `i < j`, with positive weight.
    pub edges: Vec<(usize, usize)>,
    /// `B^NAV_ij` per edge, aligned with `edges`, once attached.
    pub edge_features: Option<Vec<f64>>,
    /// Edges added by the isolated-node floor rule.
    pub floor_edges: Vec<(usize, usize)>,
    pub tau: f64,
    pub delta: f64,
}

impl WindowGraph {
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i * self.n + j]
    }

    /// Neighborhood mask, row-major `N × N`, no self-loops.
    pub fn mask(&self) -> Vec<bool> {
        self.adjacency.iter().map(|&w| w > 0.0).collect()
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.n).filter(|&j| self.weight(i, j) > 0.0).count()
    }

    pub fn has_isolated(&self) -> bool {
        (0..self.n).any(|i| self.degree(i) == 0)
    }

    /// Edge feature of `(i, j)` in either order; 0 off-graph or before attachment.
    pub fn feature(&self, i: usize, j: usize) -> f64 {
        let key = (i.min(j), i.max(j));
        match (&self.edge_features, self.edges.binary_search(&key)) {
            (Some(f), Ok(k)) => f[k],
            _ => 0.0,
        }
    }

    /// Dense `N × N` edge-feature matrix, zero off the edge set.
    pub fn feature_matrix(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        if let Some(f) = &self.edge_features {
            for (&(i, j), &b) in self.edges.iter().zip(f) {
                out[i * n + j] = b;
                out[j * n + i] = b;
            }
        }
        out
    }

    /// Consistent relabeling: new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> WindowGraph {
        let n = self.n;
        let mut inv = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }
        let mut adjacency = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                adjacency[a * n + b] = self.weight(perm[a], perm[b]);
            }
        }
        let relabel = |&(i, j): &(usize, usize)| {
            let (a, b) = (inv[i], inv[j]);
            (a.min(b), a.max(b))
        };
        let mut pairs: Vec<((usize, usize), Option<f64>)> = self
            .edges
            .iter()
            .enumerate()
            .map(|(k, e)| (relabel(e), self.edge_features.as_ref().map(|f| f[k])))
            .collect();
        pairs.sort_by_key(|p| p.0);
        let mut floor_edges: Vec<_> = self.floor_edges.iter().map(relabel).collect();
        floor_edges.sort_unstable();
        WindowGraph {
            n,
            adjacency,
            edges: pairs.iter().map(|p| p.0).collect(),
            edge_features: self
                .edge_features
                .as_ref()
                .map(|_| pairs.iter().map(|p| p.1.unwrap()).collect()),
            floor_edges,
            tau: self.tau,
            delta: self.delta,
        }
    }
}

/// `A_ij = 1[C_ij ≥ τ] + δ·1[same sector]`. Nodes left isolated are linked to
/// their highest-correlation neighbor with weight δ, preferring neighbors that
/// are themselves still isolated, then the lower index.
pub fn build_adjacency(
    c: &CorrelationMatrix,
    tau: f64,
    sectors: Option<&[String]>,
    delta: f64,
) -> WindowGraph {
    let n = c.n();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut w = if c.get(i, j) >= tau { 1.0 } else { 0.0 };
            if let Some(s) = sectors {
                if s[i] == s[j] {
                    w += delta;
                }
            }
            a[i * n + j] = w;
        }
    }
    let mut floor_edges = Vec::new();
    if delta > 0.0 && n > 1 {
        for i in 0..n {
            let isolated = |a: &[f64], k: usize| (0..n).all(|j| a[k * n + j] == 0.0);
            if !isolated(&a, i) {
                continue;
            }
            let mut best: Option<(usize, f64, bool)> = None;
            for j in (0..n).filter(|&j| j != i) {
                let cand = (j, c.get(i, j), isolated(&a, j));
                best = match best {
                    None => Some(cand),
                    Some(b) if cand.1 > b.1 || (cand.1 == b.1 && cand.2 && !b.2) => Some(cand),
                    keep => keep,
                };
            }
            let (j, _, _) = best.expect("n > 1");
            a[i * n + j] = delta;
            a[j * n + i] = delta;
            floor_edges.push((i.min(j), i.max(j)));
        }
    }
    floor_edges.sort_unstable();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if a[i * n + j] > 0.0 {
                edges.push((i, j));
            }
        }
    }
    WindowGraph {
        n,
        adjacency: a,
        edges,
        edge_features: None,
        floor_edges,
        tau,
        delta,
    }
}

/// Attaches `B^NAV_ij` to every edge.
pub fn edge_features(mut g: WindowGraph, b: &ModularityMatrix) -> WindowGraph {
    assert_eq!(g.n, b.n(), "graph and modularity sizes differ");
    g.edge_features = Some(g.edges.iter().map(|&(i, j)| b.get(i, j)).collect());
    g
}

/// Normalized thresholded correlations: `C_ij / max C` over pairs with
/// `C_ij ≥ τ`, zero elsewhere (including sector-only and floor edges).
pub fn static_weights(c: &CorrelationMatrix, tau: f64) -> Vec<f64> {
    let n = c.n();
    let mut peak = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j && c.get(i, j) >= tau {
                peak = peak.max(c.get(i, j));
            }
        }
    }
    let mut w = vec![0.0; n * n];
    if peak > 0.0 {
        for i in 0..n {
            for j in 0..n {
                if i != j && c.get(i, j) >= tau {
                    w[i * n + j] = c.get(i, j) / peak;
                }
            }
        }
    }
    w
}
