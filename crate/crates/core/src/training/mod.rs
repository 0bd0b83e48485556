//! Gated fusion of the three embedding streams, reconstruction losses,
//! Adam updates and NAV-score early stopping.

mod loss;
mod model;
mod optim;
mod train;

pub use loss::{graph_loss, sample_negatives, temporal_loss, LossBreakdown};
pub use model::{forward, gated_fusion, init_params, register_fusion, Forward, ModelConfig};
pub use optim::{adam_step, stopping_epoch, AdamState, EarlyStopping};
pub use train::{
    cluster_window, embed, prepare_window, train, validation_score, write_log, EpochRecord, PreparedWindow, TrainConfig,
    TrainOutcome, Validation,
};
