//! Temporal community detection for multivariate price series.
//!
//! The pipeline turns a price grid into per-window communities:
//! engineered features and NAV profiles ([`marketdata`]), a thresholded
//! correlation graph with modularity edge features ([`graphbuild`]),
//! dual-scale convolutional encoders ([`encoders`]), a recurrent graph
//! encoder with time-conditioned edge attention and set-transformer pooling
//! ([`graph_encoder`]), gated three-stream fusion trained on reconstruction
//! losses ([`training`]), and spectral clustering scored with NAV
//! correlation metrics ([`cluster`]). [`pipeline`] wires it end to end.

pub mod cluster;
pub mod encoders;
pub mod error;
pub mod graph_encoder;
pub mod graphbuild;
pub mod marketdata;
pub mod neuralcore;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
