use log::warn;
use serde::{Deserialize, Serialize};

use super::pearson;
use crate::error::Result;
use crate::marketdata::{compute_nav, PriceMatrix};

/// `B = A − d dᵀ / 2m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModularityMatrix {
    values: Vec<f64>,
    n: usize,
    pub degrees: Vec<f64>,
    pub total_weight: f64,
}

impl ModularityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Modularity of a symmetric weight matrix; the diagonal is ignored.
pub fn modularity_from_weights(a: &[f64], n: usize) -> ModularityMatrix {
    let mut a = a.to_vec();
    for i in 0..n {
        a[i * n + i] = 0.0;
    }
    let degrees: Vec<f64> = (0..n).map(|i| a[i * n..(i + 1) * n].iter().sum()).collect();
    let two_m: f64 = degrees.iter().sum();
    if two_m.abs() < 1e-12 {
        warn!("degenerate modularity null model (|2m| < 1e-12); using zeros");
        return ModularityMatrix {
            values: vec![0.0; n * n],
            n,
            degrees,
            total_weight: two_m / 2.0,
        };
    }
    let mut values = a;
    for i in 0..n {
        for j in 0..n {
            values[i * n + j] -= degrees[i] * degrees[j] / two_m;
        }
    }
    ModularityMatrix {
        values,
        n,
        degrees,
        total_weight: two_m / 2.0,
    }
}

/// Signed Pearson correlation between NAV columns of a window, diagonal zero.
pub fn nav_correlation(prices: &PriceMatrix) -> Result<Vec<f64>> {
    let nav = compute_nav(prices, 0)?;
    let n = nav.n_assets();
    let cols: Vec<Vec<f64>> = (0..n).map(|i| nav.column(i)).collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let c = pearson(&cols[i], &cols[j]);
            a[i * n + j] = c;
            a[j * n + i] = c;
        }
    }
    Ok(a)
}

pub fn nav_modularity(prices: &PriceMatrix) -> Result<ModularityMatrix> {
    if prices.n_times() < 3 {
        return Err(crate::Error::Data(format!(
            "modularity needs a window of at least 3 rows, got {}",
            prices.n_times()
        )));
    }
    let a = nav_correlation(prices)?;
    Ok(modularity_from_weights(&a, prices.n_assets()))
}
