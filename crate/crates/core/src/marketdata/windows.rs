//! Sliding windows and per-window standardization.

use serde::{Deserialize, Serialize};

use super::{FeatureTensor, PriceMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 89;
pub const STANDARDIZE_EPS: f64 = 1e-8;

/// Index range `start .. start + length` over feature time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSlice {
    pub start: usize,
    pub length: usize,
}

impl WindowSlice {
    pub fn end(&self) -> usize {
        self.start + self.length
    }

    pub fn features(&self, f: &FeatureTensor) -> Result<FeatureTensor> {
        f.time_slice(self.start, self.length)
    }

    /// Price rows aligned with this window's feature times.
    pub fn prices(&self, f: &FeatureTensor, p: &PriceMatrix) -> Result<PriceMatrix> {
        p.rows(f.time_offset() + self.start, self.length)
    }
}

pub fn make_windows(t_total: usize, t: usize, stride: usize) -> Result<Vec<WindowSlice>> {
    if stride == 0 {
        return Err(Error::Config("window stride must be at least 1".into()));
    }
    if t == 0 || t > t_total {
        return Err(Error::Data(format!(
            "window length {t} exceeds available history {t_total}"
        )));
    }
    Ok((0..=(t_total - t) / stride)
        .map(|k| WindowSlice {
            start: k * stride,
            length: t,
        })
        .collect())
}

/// Per feature: `(x − μ_d) / (σ_d + ε)` with population statistics pooled
/// over all assets and times.
pub fn standardize_window(f: &FeatureTensor) -> FeatureTensor {
    let (n, d, t) = (f.n_assets(), f.n_features(), f.n_times());
    let mut out = f.values().to_vec();
    let cnt = (n * t) as f64;
    for k in 0..d {
        let cells = || (0..n).flat_map(move |i| f.series(i, k).iter().copied());
        let mu = cells().sum::<f64>() / cnt;
        let var = cells().map(|x| (x - mu) * (x - mu)).sum::<f64>() / cnt;
        let s = var.sqrt() + STANDARDIZE_EPS;
        for i in 0..n {
            let base = (i * d + k) * t;
            for v in &mut out[base..base + t] {
                *v = (*v - mu) / s;
            }
        }
    }
    FeatureTensor::new(out, n, d, t, f.time_offset()).expect("same shape")
}
