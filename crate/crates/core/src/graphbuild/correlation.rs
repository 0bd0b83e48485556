use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marketdata::FeatureTensor;

/// Symmetric `N × N` correlation grid with unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    values: Vec<f64>,
    n: usize,
}

impl CorrelationMatrix {
    pub fn from_values(values: Vec<f64>, n: usize) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Shape(format!("{n}x{n} matrix needs {} values", n * n)));
        }
        Ok(Self { values, n })
    }

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

/// Two-pass Pearson correlation; 0 when either series has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// `C_ij` = mean over features of the signed per-feature Pearson correlation.
pub fn correlation_matrix(f: &FeatureTensor) -> Result<CorrelationMatrix> {
    let (n, d) = (f.n_assets(), f.n_features());
    if n < 2 {
        return Err(Error::Data(format!("correlation needs at least 2 assets, got {n}")));
    }
    if f.n_times() < 3 {
        return Err(Error::Data(format!(
            "correlation needs at least 3 timesteps, got {}",
            f.n_times()
        )));
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in i + 1..n {
            let c = (0..d)
                .map(|k| pearson(f.series(i, k), f.series(j, k)))
                .sum::<f64>()
                / d as f64;
            let c = c.clamp(-1.0, 1.0);
            values[i * n + j] = c;
            values[j * n + i] = c;
        }
    }
    Ok(CorrelationMatrix { values, n })
}
