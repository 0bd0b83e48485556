use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marketdata::PriceMatrix;

/// Planted-community factor model. Asset `i` in community `c` has log
/// returns `β_i f_c(t) + ε_i(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_assets: usize,
    pub t_total: usize,
    pub sizes: Vec<usize>,
    /// Standard deviation of each community factor per step.
    pub factor_vol: f64,
    /// Idiosyncratic noise standard deviation.
    pub noise_sigma: f64,
    /// Time at which community memberships are reshuffled.
    pub regime_switch: Option<usize>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_assets: 30,
            t_total: 300,
            sizes: vec![10, 10, 10],
            factor_vol: 0.01,
            noise_sigma: 0.005,
            regime_switch: None,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Reads TOML by extension, JSON otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let bad = |e: String| Error::Config(format!("{}: {e}", path.display()));
        let spec: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| bad(e.to_string()))?,
            _ => serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::Config("community sizes must be positive".into()));
        }
        let total: usize = self.sizes.iter().sum();
        if total != self.n_assets {
            return Err(Error::Config(format!(
                "community sizes sum to {total}, expected {} assets",
                self.n_assets
            )));
        }
        if !(self.noise_sigma > 0.0) || !(self.factor_vol >= 0.0) {
            return Err(Error::Config("noise sigma must be positive and factor vol nonnegative".into()));
        }
        if self.t_total < 2 {
            return Err(Error::Config("need at least 2 time steps".into()));
        }
        if let Some(s) = self.regime_switch {
            if s == 0 || s >= self.t_total {
                return Err(Error::Config(format!("regime switch {s} outside 1..{}", self.t_total)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub prices: PriceMatrix,
    /// Community of each asset (before any regime switch).
    pub labels: Vec<usize>,
    pub labels_after_switch: Option<Vec<usize>>,
}

/// Prices `100·exp(cumsum r)`, starting from the first step's return.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_assets;
    let c = spec.sizes.len();
    let labels: Vec<usize> = spec
        .sizes
        .iter()
        .enumerate()
        .flat_map(|(k, &s)| std::iter::repeat_n(k, s))
        .collect();
    let betas: Vec<f64> = (0..n).map(|_| rng.random_range(0.8..=1.2)).collect();
    let after = spec.regime_switch.map(|_| {
        let mut l = labels.clone();
        l.shuffle(&mut rng);
        l
    });
    let factor = Normal::new(0.0, spec.factor_vol).map_err(|e| Error::Config(e.to_string()))?;
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;

    let mut log_p = vec![0.0f64; n];
    let mut values = Vec::with_capacity(spec.t_total * n);
    let mut f = vec![0.0; c];
    for t in 0..spec.t_total {
        f.iter_mut().for_each(|x| *x = factor.sample(&mut rng));
        let active = match (&after, spec.regime_switch) {
            (Some(a), Some(s)) if t >= s => a,
            _ => &labels,
        };
        for i in 0..n {
            log_p[i] += betas[i] * f[active[i]] + noise.sample(&mut rng);
            values.push(100.0 * log_p[i].exp());
        }
    }
    let ids = (0..n).map(|i| format!("A{i:03}")).collect();
    Ok(SyntheticData {
        prices: PriceMatrix::with_default_dates(values, ids)?,
        labels,
        labels_after_switch: after,
    })
}
