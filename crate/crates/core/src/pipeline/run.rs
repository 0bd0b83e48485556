use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use crate::cluster::{
    clustering_metrics, nav_composite_score, rho_matrix, stability_profile, ClusterAssignment, StabilityProfile,
};
use crate::encoders::scale_weights;
use crate::error::{Error, Result};
use crate::graph_encoder::AttentionMode;
use crate::marketdata::{compute_features, make_windows, PriceMatrix};
use crate::neuralcore::ParamStore;
use crate::training::{cluster_window, prepare_window, train, EpochRecord, PreparedWindow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub window_start: usize,
    pub split: Split,
    pub k: usize,
    pub intra_corr: Option<f64>,
    pub inter_corr: Option<f64>,
    pub inter_dissim: Option<f64>,
    pub nav_s_intra: Option<f64>,
    pub nav_s_inter: Option<f64>,
    pub nav_score: Option<f64>,
}

/// Means over held-out windows, each over the windows where it is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub windows: usize,
    pub intra_corr: Option<f64>,
    pub inter_corr: Option<f64>,
    pub inter_dissim: Option<f64>,
    pub nav_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: AttentionMode,
    pub n_assets: usize,
    pub window: usize,
    pub n_windows: usize,
    pub n_train_windows: usize,
    pub eval: EvalSummary,
    pub stability: StabilityProfile,
    /// Learned short/long scale weights.
    pub scale_weights: [f64; 2],
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_score: f64,
    pub windows: Vec<WindowMetrics>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub asset_ids: Vec<String>,
    pub assignments: Vec<ClusterAssignment>,
    pub report: MetricsReport,
    pub log: Vec<EpochRecord>,
    pub params: ParamStore,
    pub windows: Vec<PreparedWindow>,
}

fn mean_defined(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (s, c) = xs.flatten().fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (c > 0).then(|| s / c as f64)
}

/// Number of leading training windows; a single window serves both roles.
pub fn split_point(n_windows: usize, fraction: f64) -> usize {
    if n_windows <= 1 {
        return n_windows;
    }
    ((n_windows as f64 * fraction).floor() as usize).clamp(1, n_windows - 1)
}

/// Builds every window, trains on the leading windows, then clusters and
/// scores all of them.
pub fn run_pipeline(cfg: &PipelineConfig, prices: &PriceMatrix, sectors: Option<&[String]>) -> Result<RunOutput> {
    cfg.validate()?;
    if let Some(s) = sectors {
        if s.len() != prices.n_assets() {
            return Err(Error::Data(format!(
                "{} sector codes for {} assets",
                s.len(),
                prices.n_assets()
            )));
        }
    }
    let features = compute_features(prices)?;
    let slices = make_windows(features.n_times(), cfg.window, cfg.stride)?;
    let windows = slices
        .iter()
        .map(|&s| prepare_window(&features, prices, s, cfg.tau, cfg.delta, sectors))
        .collect::<Result<Vec<_>>>()?;
    let n_train = split_point(windows.len(), cfg.train_fraction);
    let (train_w, val_w) = if windows.len() == 1 {
        warn!("only one window: it is used for both training and validation");
        (&windows[..], &windows[..])
    } else {
        windows.split_at(n_train)
    };
    info!(
        "{} windows of {} days: {} train, {} eval",
        windows.len(),
        cfg.window,
        train_w.len(),
        val_w.len()
    );

    let model = cfg.model(prices.n_assets(), features.n_features());
    let val = cfg.validation();
    let out = train(&model, &cfg.train_config(), &val, train_w, val_w)?;

    let mut assignments = Vec::with_capacity(windows.len());
    let mut rows = Vec::with_capacity(windows.len());
    for (k, w) in windows.iter().enumerate() {
        let a = cluster_window(&out.params, &model, w, &val.cluster)?;
        let m = clustering_metrics(&a, &rho_matrix(&w.features)).map_err(|e| e.in_window(w.start))?;
        let nav = match nav_composite_score(&a, &w.prices, val.weights) {
            Ok(s) => Some(s),
            Err(Error::Domain(_)) => None,
            Err(e) => return Err(e.in_window(w.start)),
        };
        let eval = k >= n_train || windows.len() == 1;
        rows.push(WindowMetrics {
            window_start: w.start,
            split: if eval { Split::Eval } else { Split::Train },
            k: a.k,
            intra_corr: m.intra_corr,
            inter_corr: m.inter_corr,
            inter_dissim: m.inter_dissim,
            nav_s_intra: nav.map(|s| s.s_intra),
            nav_s_inter: nav.map(|s| s.s_inter),
            nav_score: nav.map(|s| s.s),
        });
        assignments.push(a);
    }
    let ev = || rows.iter().filter(|r| r.split == Split::Eval);
    let eval = EvalSummary {
        windows: ev().count(),
        intra_corr: mean_defined(ev().map(|r| r.intra_corr)),
        inter_corr: mean_defined(ev().map(|r| r.inter_corr)),
        inter_dissim: mean_defined(ev().map(|r| r.inter_dissim)),
        nav_score: mean_defined(ev().map(|r| r.nav_score)),
    };
    let logits = out.params.get("scale.logits").expect("registered").data();
    let counts: Vec<usize> = assignments.iter().map(|a| a.k).collect();
    let report = MetricsReport {
        mode: cfg.mode,
        n_assets: prices.n_assets(),
        window: cfg.window,
        n_windows: windows.len(),
        n_train_windows: train_w.len(),
        eval,
        stability: stability_profile(&counts)?,
        scale_weights: scale_weights([logits[0], logits[1]]),
        epochs_run: out.log.len(),
        best_epoch: out.best_epoch,
        best_val_score: out.best_score,
        windows: rows,
    };
    Ok(RunOutput {
        asset_ids: prices.asset_ids().to_vec(),
        assignments,
        report,
        log: out.log,
        params: out.params,
        windows,
    })
}
