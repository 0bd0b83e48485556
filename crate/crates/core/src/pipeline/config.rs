use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterConfig, CompositeWeights};
use crate::error::{Error, Result};
use crate::graph_encoder::{AttentionMode, TimeEmbeddingKind, DEFAULT_INDUCING};
use crate::graphbuild::{DEFAULT_DELTA, DEFAULT_TAU};
use crate::marketdata::DEFAULT_WINDOW;
use crate::neuralcore::layers::DirectionMerge;
use crate::training::{ModelConfig, TrainConfig, Validation};

/// Long-term kernel width; the shortest usable window.
pub const MIN_WINDOW: usize = 45;

/// Run configuration. File keys match the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub window: usize,
    pub stride: usize,
    pub tau: f64,
    pub delta: f64,
    pub inducing: usize,
    pub d_latent: usize,
    pub h: usize,
    pub heads: usize,
    pub dropout: f64,
    pub reduction: usize,
    pub mode: AttentionMode,
    pub merge: DirectionMerge,
    pub time_embedding: Option<TimeEmbeddingKind>,
    pub k_range: [usize; 2],
    pub kmeans_restarts: usize,
    /// `train.seed` is replaced by `seed` at run time.
    pub train: TrainConfig,
    pub seed: u64,
    pub w_intra: f64,
    pub w_inter: f64,
    /// Leading fraction of windows used for training; the rest validate.
    pub train_fraction: f64,
    pub cache_graphs: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            stride: 1,
            tau: DEFAULT_TAU,
            delta: DEFAULT_DELTA,
            inducing: DEFAULT_INDUCING,
            d_latent: 64,
            h: 64,
            heads: 4,
            dropout: 0.1,
            reduction: 16,
            mode: AttentionMode::Full,
            merge: DirectionMerge::Sum,
            time_embedding: None,
            k_range: [2, 15],
            kmeans_restarts: 10,
            train: TrainConfig::default(),
            seed: 0,
            w_intra: 0.1,
            w_inter: 0.9,
            train_fraction: 0.7,
            cache_graphs: false,
        }
    }
}

impl PipelineConfig {
    /// Reads TOML or JSON by extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let bad = |e: String| Error::Config(format!("{}: {e}", path.display()));
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| bad(e.to_string()))?,
            Some("json") => serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?,
            _ => return Err(bad("config must be .toml or .json".into())),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < MIN_WINDOW {
            return Err(Error::Config(format!(
                "window {} is shorter than the long-term kernel {MIN_WINDOW}",
                self.window
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau {} outside [-1, 1]", self.tau)));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::Config(format!("delta {} must be nonnegative", self.delta)));
        }
        let [lo, hi] = self.k_range;
        if lo < 2 || hi < lo {
            return Err(Error::Config(format!("k_range [{lo}, {hi}] must satisfy 2 <= lo <= hi")));
        }
        if self.kmeans_restarts == 0 {
            return Err(Error::Config("kmeans_restarts must be at least 1".into()));
        }
        if self.w_intra < 0.0 || self.w_inter < 0.0 || self.w_intra + self.w_inter <= 0.0 {
            return Err(Error::Config("composite weights must be nonnegative and not both zero".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!("train_fraction {} outside (0, 1]", self.train_fraction)));
        }
        self.train.validate()?;
        self.model(2, 1).validate()
    }

    pub fn model(&self, n_assets: usize, n_features: usize) -> ModelConfig {
        ModelConfig {
            n_assets,
            n_features,
            window: self.window,
            d_latent: self.d_latent,
            h: self.h,
            heads: self.heads,
            inducing: self.inducing,
            reduction: self.reduction,
            mode: self.mode,
            merge: self.merge,
            time_embedding: self.time_embedding,
            dropout: self.dropout,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train }
    }

    pub fn validation(&self) -> Validation {
        Validation {
            cluster: ClusterConfig {
                k_min: self.k_range[0],
                k_max: self.k_range[1],
                restarts: self.kmeans_restarts,
                seed: self.seed,
            },
            weights: CompositeWeights {
                intra: self.w_intra,
                inter: self.w_inter,
            },
        }
    }
}
