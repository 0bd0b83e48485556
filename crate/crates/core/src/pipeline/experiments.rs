use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, MIN_WINDOW};
use super::run::{run_pipeline, EvalSummary};
use crate::error::{Error, Result};
use crate::graph_encoder::AttentionMode;
use crate::marketdata::{PriceMatrix, WARMUP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: AttentionMode,
    pub eval: EvalSummary,
    /// Differences against the first row; zero for the first row itself.
    pub delta_nav_score: Option<f64>,
    pub delta_intra_corr: Option<f64>,
    pub delta_inter_corr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub window: usize,
    pub n_windows: usize,
    pub eval: EvalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// (max - min) / mean of the held-out NAV scores; `None` if any row lacks one.
    pub relative_range: Option<f64>,
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

/// Runs the pipeline once per mode on shared data and seed. Rows come back
/// in the order Static, Basic, Enhanced, Full whatever the request order.
pub fn run_ablation(
    cfg: &PipelineConfig,
    prices: &PriceMatrix,
    sectors: Option<&[String]>,
    modes: &[AttentionMode],
) -> Result<Vec<AblationRow>> {
    let ordered: Vec<AttentionMode> = AttentionMode::ALL.into_iter().filter(|m| modes.contains(m)).collect();
    if ordered.len() < 2 {
        return Err(Error::Config(format!(
            "ablation needs at least two distinct modes, got {}",
            ordered.len()
        )));
    }
    cfg.validate()?;
    let mut rows: Vec<AblationRow> = Vec::with_capacity(ordered.len());
    for mode in ordered {
        let run_cfg = PipelineConfig { mode, ..cfg.clone() };
        let eval = run_pipeline(&run_cfg, prices, sectors)?.report.eval;
        let base = rows.first().map(|r| &r.eval).unwrap_or(&eval);
        rows.push(AblationRow {
            mode,
            delta_nav_score: diff(eval.nav_score, base.nav_score),
            delta_intra_corr: diff(eval.intra_corr, base.intra_corr),
            delta_inter_corr: diff(eval.inter_corr, base.inter_corr),
            eval,
        });
    }
    Ok(rows)
}

/// Spread of `scores` relative to their mean.
pub fn relative_range(scores: &[f64]) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    (mean != 0.0).then(|| (max - min) / mean.abs())
}

/// Runs the pipeline once per window length. Every length is checked before
/// anything runs.
pub fn run_window_sweep(
    cfg: &PipelineConfig,
    prices: &PriceMatrix,
    sectors: Option<&[String]>,
    windows: &[usize],
) -> Result<SweepTable> {
    if windows.is_empty() {
        return Err(Error::Config("window sweep needs at least one length".into()));
    }
    let available = prices.n_times().saturating_sub(WARMUP);
    for &t in windows {
        if t < MIN_WINDOW {
            return Err(Error::Config(format!(
                "window {t} is shorter than the long-term kernel {MIN_WINDOW}"
            )));
        }
        if t > available {
            return Err(Error::Config(format!(
                "window {t} exceeds the {available} days left after warm-up"
            )));
        }
    }
    let mut rows = Vec::with_capacity(windows.len());
    for &window in windows {
        let out = run_pipeline(&PipelineConfig { window, ..cfg.clone() }, prices, sectors)?;
        rows.push(SweepRow {
            window,
            n_windows: out.report.n_windows,
            eval: out.report.eval,
        });
    }
    let scores: Option<Vec<f64>> = rows.iter().map(|r| r.eval.nav_score).collect();
    Ok(SweepTable {
        relative_range: scores.and_then(|s| relative_range(&s)),
        rows,
    })
}
