//! The seven per-asset engineered features.

use serde::{Deserialize, Serialize};

use super::PriceMatrix;
use crate::error::{Error, Result};

/// Number of features per asset and time.
pub const N_FEATURES: usize = 7;
/// Price rows consumed before the first feature row.
pub const WARMUP: usize = 45;
/// Cumulative log-return horizons in trading days (1w, 2w, 1m, 2m).
pub const HORIZONS: [usize; 4] = [5, 10, 21, 42];
pub const RSI_PERIOD: usize = 14;
pub const MACD_FAST: usize = 12;
pub const MACD_SLOW: usize = 26;

/// Feature names in storage order.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "log_return",
    "cum_return_5",
    "cum_return_10",
    "cum_return_21",
    "cum_return_42",
    "rsi_14",
    "macd",
];

/// `N × D × T` block, index `(i * D + d) * T + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTensor {
    values: Vec<f64>,
    n: usize,
    d: usize,
    t: usize,
    /// Price row corresponding to feature time 0.
    time_offset: usize,
}

impl FeatureTensor {
    pub fn new(values: Vec<f64>, n: usize, d: usize, t: usize, time_offset: usize) -> Result<Self> {
        if values.len() != n * d * t {
            return Err(Error::Shape(format!(
                "feature block {n}x{d}x{t} needs {} values, got {}",
                n * d * t,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature tensor".into()));
        }
        Ok(Self {
            values,
            n,
            d,
            t,
            time_offset,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.d
    }

    pub fn n_times(&self) -> usize {
        self.t
    }

    pub fn time_offset(&self) -> usize {
        self.time_offset
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, d: usize, t: usize) -> f64 {
        self.values[(i * self.d + d) * self.t + t]
    }

    /// Series of feature `d` for asset `i`.
    pub fn series(&self, i: usize, d: usize) -> &[f64] {
        let s = (i * self.d + d) * self.t;
        &self.values[s..s + self.t]
    }

    /// Times `start .. start + len`.
    pub fn time_slice(&self, start: usize, len: usize) -> Result<FeatureTensor> {
        if start + len > self.t {
            return Err(Error::Shape(format!(
                "times {start}..{} out of range 0..{}",
                start + len,
                self.t
            )));
        }
        let mut v = Vec::with_capacity(self.n * self.d * len);
        for i in 0..self.n {
            for d in 0..self.d {
                v.extend_from_slice(&self.series(i, d)[start..start + len]);
            }
        }
        Ok(FeatureTensor {
            values: v,
            n: self.n,
            d: self.d,
            t: len,
            time_offset: self.time_offset + start,
        })
    }
}

/// Wilder RSI; entry `t` is defined for `t >= period`, earlier entries are 50.
pub fn wilder_rsi(p: &[f64], period: usize) -> Vec<f64> {
    let mut out = vec![50.0; p.len()];
    if p.len() <= period {
        return out;
    }
    let (mut gain, mut loss) = (0.0, 0.0);
    for t in 1..=period {
        let c = p[t] - p[t - 1];
        gain += c.max(0.0);
        loss += (-c).max(0.0);
    }
    gain /= period as f64;
    loss /= period as f64;
    let k = period as f64;
    for t in period..p.len() {
        if t > period {
            let c = p[t] - p[t - 1];
            gain = (gain * (k - 1.0) + c.max(0.0)) / k;
            loss = (loss * (k - 1.0) + (-c).max(0.0)) / k;
        }
        out[t] = if gain == 0.0 && loss == 0.0 {
            50.0
        } else {
            100.0 * gain / (gain + loss)
        };
    }
    out
}

/// Exponential moving average seeded with the first value, `α = 2/(n+1)`.
pub fn ema(x: &[f64], n: usize) -> Vec<f64> {
    let a = 2.0 / (n as f64 + 1.0);
    let mut out = Vec::with_capacity(x.len());
    let mut e = match x.first() {
        Some(&v) => v,
        None => return out,
    };
    for &v in x {
        e = a * v + (1.0 - a) * e;
        out.push(e);
    }
    out
}

/// Features for every price row from [`WARMUP`] on. MACD is taken on the
/// price normalized by its first value so every feature is invariant to a
/// per-asset rescaling.
pub fn compute_features(prices: &PriceMatrix) -> Result<FeatureTensor> {
    let total = prices.n_times();
    if total <= WARMUP {
        return Err(Error::Data(format!(
            "need at least {} price rows ({WARMUP} warm-up + 1), got {total}",
            WARMUP + 1
        )));
    }
    let (n, t) = (prices.n_assets(), total - WARMUP);
    let mut values = vec![0.0; n * N_FEATURES * t];
    for i in 0..n {
        let p = prices.column(i);
        let lp: Vec<f64> = p.iter().map(|v| v.ln()).collect();
        let rsi = wilder_rsi(&p, RSI_PERIOD);
        let ntp: Vec<f64> = p.iter().map(|v| v / p[0]).collect();
        let (fast, slow) = (ema(&ntp, MACD_FAST), ema(&ntp, MACD_SLOW));
        let base = i * N_FEATURES * t;
        for k in 0..t {
            let r = k + WARMUP;
            values[base + k] = lp[r] - lp[r - 1];
            for (h, &hz) in HORIZONS.iter().enumerate() {
                values[base + (h + 1) * t + k] = lp[r] - lp[r - hz];
            }
            values[base + 5 * t + k] = rsi[r];
            values[base + 6 * t + k] = fast[r] - slow[r];
        }
    }
    FeatureTensor::new(values, n, N_FEATURES, t, WARMUP)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(p: Vec<f64>) -> PriceMatrix {
        PriceMatrix::with_default_dates(p, vec!["X".into()]).unwrap()
    }

    #[test]
    fn doubling_gives_ln2() {
        let mut p = vec![10.0; 50];
        p[47] = 20.0;
        p[48] = 20.0;
        p[49] = 20.0;
        let f = compute_features(&single(p)).unwrap();
        assert!((f.get(0, 0, 2) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(f.get(0, 0, 3), 0.0);
    }

    #[test]
    fn constant_series_convention() {
        let f = compute_features(&single(vec![42.0; 60])).unwrap();
        for t in 0..f.n_times() {
            for d in 0..5 {
                assert_eq!(f.get(0, d, t), 0.0);
            }
            assert_eq!(f.get(0, 5, t), 50.0);
            assert_eq!(f.get(0, 6, t), 0.0);
        }
    }

    #[test]
    fn ramp_rsi_matches_scalar_recursion() {
        let p: Vec<f64> = (0..60).map(|t| 100.0 * 1.01f64.powi(t)).collect();
        let f = compute_features(&single(p.clone())).unwrap();
        // independent day-by-day recursion
        let mut ag = 0.0;
        let mut al = 0.0;
        let mut expected = Vec::new();
        for t in 1..60 {
            let c = p[t] - p[t - 1];
            let (g, l) = (c.max(0.0), (-c).max(0.0));
            if t <= 14 {
                ag += g / 14.0;
                al += l / 14.0;
            } else {
                ag = (13.0 * ag + g) / 14.0;
                al = (13.0 * al + l) / 14.0;
            }
            if t >= 14 {
                let rs_rsi = if al == 0.0 { 100.0 } else { 100.0 - 100.0 / (1.0 + ag / al) };
                expected.push((t, rs_rsi));
            }
        }
        for (t, e) in expected.into_iter().filter(|(t, _)| *t >= WARMUP) {
            assert!((f.get(0, 5, t - WARMUP) - e).abs() < 1e-12);
        }
        assert!(f.get(0, 5, f.n_times() - 1) > 99.999);
    }

    #[test]
    fn short_history_names_required_length() {
        let err = compute_features(&single(vec![1.0; 45])).unwrap_err();
        assert!(err.to_string().contains("46"), "{err}");
    }

    #[test]
    fn cumulative_returns_use_horizons() {
        let p: Vec<f64> = (0..50).map(|t| (0.01 * t as f64).exp()).collect();
        let f = compute_features(&single(p)).unwrap();
        for (h, &hz) in HORIZONS.iter().enumerate() {
            assert!((f.get(0, h + 1, 0) - 0.01 * hz as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn ema_seed_and_constant() {
        assert_eq!(ema(&[3.0; 5], 12), vec![3.0; 5]);
        let e = ema(&[0.0, 1.0], 3);
        assert_eq!(e, vec![0.0, 0.5]);
    }
}
