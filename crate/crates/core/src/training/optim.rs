use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::neuralcore::{ParamStore, Tensor};

/// Bias-corrected Adam moments, one pair per parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.m.get(name)
    }
}

/// One Adam update. Every gradient is checked before any parameter moves, so
/// a non-finite gradient leaves `store` and `state` untouched.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads {
        let p = store
            .get(name)
            .ok_or_else(|| Error::Config(format!("gradient for unknown parameter `{name}`")))?;
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient of `{name}` is {:?}, parameter is {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of `{name}`")));
        }
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (name, g) in grads {
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        let p = store.get_mut(name).expect("checked above");
        for (((pk, mk), vk), &gk) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *mk = b1 * *mk + (1.0 - b1) * gk;
            *vk = b2 * *vk + (1.0 - b2) * gk * gk;
            *pk -= lr * (*mk / c1) / ((*vk / c2).sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Stops once `|S_t − S_{t−1}| < tolerance` has held for `patience`
/// consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub tolerance: f64,
    pub patience: usize,
    prev: Option<f64>,
    streak: usize,
}

impl EarlyStopping {
    pub fn new(tolerance: f64, patience: usize) -> Self {
        Self {
            tolerance,
            patience,
            prev: None,
            streak: 0,
        }
    }

    /// Feeds the next score; true means stop now.
    pub fn update(&mut self, score: f64) -> bool {
        if let Some(p) = self.prev {
            if (score - p).abs() < self.tolerance {
                self.streak += 1;
            } else {
                self.streak = 0;
            }
        }
        self.prev = Some(score);
        self.streak >= self.patience
    }
}

/// 1-based epoch after which the rule fires on `scores`, if it does.
pub fn stopping_epoch(scores: &[f64], tolerance: f64, patience: usize) -> Option<usize> {
    let mut es = EarlyStopping::new(tolerance, patience);
    scores.iter().position(|&s| es.update(s)).map(|i| i + 1)
}
