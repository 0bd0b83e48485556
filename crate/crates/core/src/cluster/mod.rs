//! Spectral clustering of fused embeddings and correlation-based scoring.

mod metrics;
mod spectral;

pub use metrics::{
    adjusted_rand_index, clustering_metrics, composite, multi_feature_rho, nav_composite_from_corr,
    nav_composite_score, rho_matrix, stability_profile, ClusterMetrics, CompositeWeights, NavScore,
    StabilityProfile,
};
pub use spectral::{eigengap_k, kmeans, laplacian_spectrum, spectral_cluster, ClusterAssignment, ClusterConfig};
