use std::io::Write;
use std::path::Path;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{graph_loss, sample_negatives, temporal_loss, LossBreakdown};
use super::model::{forward, init_params, ModelConfig};
use super::optim::{adam_step, AdamState, EarlyStopping};
use crate::cluster::{nav_composite_score, spectral_cluster, ClusterAssignment, ClusterConfig, CompositeWeights};
use crate::error::{Error, Result};
use crate::graph_encoder::GraphInputs;
use crate::graphbuild::{build_adjacency, correlation_matrix, edge_features, nav_modularity, static_weights, WindowGraph};
use crate::marketdata::{standardize_window, FeatureTensor, PriceMatrix, WindowSlice};
use crate::neuralcore::{ParamStore, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub tolerance: f64,
    pub lambda_graph: f64,
    pub lambda_temporal: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            max_epochs: 200,
            patience: 2,
            tolerance: 1e-4,
            lambda_graph: 1.0,
            lambda_temporal: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance {} must be positive", self.tolerance)));
        }
        if !(self.lr > 0.0) || self.max_epochs == 0 {
            return Err(Error::Config("learning rate and max epochs must be positive".into()));
        }
        if self.lambda_graph < 0.0 || self.lambda_temporal < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Everything the model needs for one window, precomputed.
#[derive(Debug, Clone)]
pub struct PreparedWindow {
    pub start: usize,
    /// Standardized `[N, D, T]` features.
    pub features: FeatureTensor,
    /// Raw prices over the same days, for NAV scoring.
    pub prices: PriceMatrix,
    pub graph: WindowGraph,
    pub inputs: GraphInputs,
}

/// Standardizes, builds the correlation graph with NAV modularity edge
/// features, and packs the attention inputs. Errors carry the window start.
pub fn prepare_window(
    features: &FeatureTensor,
    prices: &PriceMatrix,
    slice: WindowSlice,
    tau: f64,
    delta: f64,
    sectors: Option<&[String]>,
) -> Result<PreparedWindow> {
    let inner = || -> Result<PreparedWindow> {
        let f = standardize_window(&slice.features(features)?);
        let c = correlation_matrix(&f)?;
        let p = slice.prices(features, prices)?;
        let b = nav_modularity(&p)?;
        let g = edge_features(build_adjacency(&c, tau, sectors, delta), &b);
        let inputs = GraphInputs::new(&g, static_weights(&c, tau))?;
        Ok(PreparedWindow {
            start: slice.start,
            features: f,
            prices: p,
            graph: g,
            inputs,
        })
    };
    inner().map_err(|e| e.in_window(slice.start))
}

/// Clustering and scoring settings used for validation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub cluster: ClusterConfig,
    pub weights: CompositeWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub graph_loss: f64,
    pub temporal_loss: f64,
    pub total: f64,
    pub val_score: f64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation score.
    pub params: ParamStore,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_score: f64,
}

/// Eval-mode `Z_final`, row-major `N × d_latent`.
pub fn embed(store: &ParamStore, cfg: &ModelConfig, w: &PreparedWindow) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let f = forward::<ChaCha8Rng>(&mut tape, store, cfg, &w.features, &w.inputs, None)
        .map_err(|e| e.in_window(w.start))?;
    let z = tape.value(f.z_final);
    if !z.is_finite() {
        return Err(Error::NonFinite("fused embedding".into()).in_window(w.start));
    }
    Ok(z.data().to_vec())
}

/// Clusters one window's embedding; the assignment carries the window start.
pub fn cluster_window(
    store: &ParamStore,
    cfg: &ModelConfig,
    w: &PreparedWindow,
    cluster: &ClusterConfig,
) -> Result<ClusterAssignment> {
    let z = embed(store, cfg, w)?;
    let mut a = spectral_cluster(&z, cfg.n_assets, cfg.d_latent, cluster).map_err(|e| e.in_window(w.start))?;
    a.window_start = w.start;
    Ok(a)
}

/// Mean NAV composite score over the windows where it is defined, `None`
/// when it is defined nowhere.
pub fn validation_score(
    store: &ParamStore,
    cfg: &ModelConfig,
    val: &Validation,
    windows: &[PreparedWindow],
) -> Result<Option<f64>> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for w in windows {
        let a = cluster_window(store, cfg, w, &val.cluster)?;
        match nav_composite_score(&a, &w.prices, val.weights) {
            Ok(s) => {
                sum += s.s;
                count += 1;
            }
            Err(Error::Domain(_)) => {}
            Err(e) => return Err(e.in_window(w.start)),
        }
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// Per-window Adam training with validation-score early stopping.
pub fn train(
    model: &ModelConfig,
    cfg: &TrainConfig,
    val: &Validation,
    train_windows: &[PreparedWindow],
    val_windows: &[PreparedWindow],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_windows.is_empty() {
        return Err(Error::Data("no training windows".into()));
    }
    if val_windows.is_empty() {
        return Err(Error::Data("no validation windows".into()));
    }
    let mut store = init_params(model, cfg.seed)?;
    let mut adam = AdamState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut stopper = EarlyStopping::new(cfg.tolerance, cfg.patience);
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;

    for epoch in 1..=cfg.max_epochs {
        let (mut gsum, mut tsum) = (0.0, 0.0);
        for w in train_windows {
            let mut step = || -> Result<(f64, f64)> {
                let mut tape = Tape::new();
                let f = forward(&mut tape, &store, model, &w.features, &w.inputs, Some(&mut rng))?;
                let neg = sample_negatives(&w.graph, w.graph.edges.len(), &mut rng);
                let gl = graph_loss(&mut tape, f.z_final, &w.graph.edges, &neg)?;
                let tl = temporal_loss(&mut tape, f.x, f.x_short, f.x_long)?;
                let a = tape.scale(gl, cfg.lambda_graph);
                let b = tape.scale(tl, cfg.lambda_temporal);
                let total = tape.add(a, b);
                let (gv, tv) = (tape.value(gl).item(), tape.value(tl).item());
                if !tape.value(total).item().is_finite() {
                    return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
                }
                let grads = tape.param_grads(&tape.backward(total));
                adam_step(&mut store, &grads, &mut adam, cfg.lr)?;
                Ok((gv, tv))
            };
            let (gv, tv) = step().map_err(|e| e.in_window(w.start))?;
            gsum += gv;
            tsum += tv;
        }
        let nw = train_windows.len() as f64;
        let losses = LossBreakdown::new(gsum / nw, tsum / nw, cfg.lambda_graph, cfg.lambda_temporal);
        let score = validation_score(&store, model, val, val_windows)?.unwrap_or_else(|| {
            warn!("epoch {epoch}: composite score undefined on every validation window, using 0");
            0.0
        });
        let stop = stopper.update(score);
        info!(
            "epoch {epoch}: graph {:.5} temporal {:.5} total {:.5} val S {score:.5}",
            losses.graph_loss, losses.temporal_loss, losses.total
        );
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, epoch, store.clone()));
        }
        log.push(EpochRecord {
            epoch,
            graph_loss: losses.graph_loss,
            temporal_loss: losses.temporal_loss,
            total: losses.total,
            val_score: score,
            stopped_early: stop,
        });
        if stop {
            break;
        }
    }
    let (best_score, best_epoch, params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        log,
        best_epoch,
        best_score,
    })
}

/// One JSON object per epoch.
pub fn write_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in log {
        serde_json::to_writer(&mut f, r)?;
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}
