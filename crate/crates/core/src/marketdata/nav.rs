//! Net-asset-value profiles relative to a base row.

use serde::{Deserialize, Serialize};

use super::PriceMatrix;
use crate::error::{Error, Result};

/// `NAV_i(t) = P_i(t) / P_i(t0)`, `T × N` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavMatrix {
    values: Vec<f64>,
    n_assets: usize,
    base_index: usize,
}

impl NavMatrix {
    pub fn n_times(&self) -> usize {
        self.values.len() / self.n_assets.max(1)
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn base_index(&self) -> usize {
        self.base_index
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.values[t * self.n_assets + i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.n_times()).map(|t| self.get(t, i)).collect()
    }
}

pub fn compute_nav(prices: &PriceMatrix, t0: usize) -> Result<NavMatrix> {
    let (t, n) = (prices.n_times(), prices.n_assets());
    if t0 >= t {
        return Err(Error::Domain(format!("base index {t0} outside 0..{t}")));
    }
    let base: Vec<f64> = (0..n).map(|i| prices.get(t0, i)).collect();
    if let Some(i) = base.iter().position(|&b| !(b > 0.0)) {
        return Err(Error::Domain(format!(
            "zero base price for asset {} at t0={t0}",
            prices.asset_ids()[i]
        )));
    }
    let mut values = Vec::with_capacity(t * n);
    for r in 0..t {
        for (i, b) in base.iter().enumerate() {
            values.push(if r == t0 { 1.0 } else { prices.get(r, i) / b });
        }
    }
    Ok(NavMatrix {
        values,
        n_assets: n,
        base_index: t0,
    })
}
