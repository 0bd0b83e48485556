//! End-to-end runs: configuration, planted-community synthetic data, the
//! windowed pipeline, mode ablations, window sweeps, gradient checks and
//! result files.

mod config;
mod experiments;
mod gradcheck;
mod outputs;
mod run;
mod synthetic;

pub use config::{PipelineConfig, MIN_WINDOW};
pub use experiments::{relative_range, run_ablation, run_window_sweep, AblationRow, SweepRow, SweepTable};
pub use gradcheck::{run_gradcheck, GradcheckSummary, TOY_ASSETS, TOY_LATENT, TOY_WINDOW};
pub use outputs::{
    file_hash, read_assignments, read_labels, resolve_output_dir, write_assignments, write_labels, write_outputs, write_window_table, RunManifest,
    ASSIGNMENTS_FILE, DEFAULT_OUTPUT_DIR, GRAPHS_DIR, LOG_FILE, MANIFEST_FILE, MANIFEST_FORMAT, METRICS_FILE,
    OUTPUT_DIR_ENV, WINDOWS_FILE,
};
pub use run::{run_pipeline, split_point, EvalSummary, MetricsReport, RunOutput, Split, WindowMetrics};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};

#[cfg(test)]
mod tests;
