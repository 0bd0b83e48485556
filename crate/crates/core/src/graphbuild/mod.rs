//! Per-window correlation graphs and NAV modularity edge features.

mod adjacency;
mod cache;
mod correlation;
mod modularity;

pub use adjacency::{build_adjacency, edge_features, static_weights, WindowGraph, DEFAULT_DELTA, DEFAULT_TAU};
pub use cache::{graph_from_json, graph_to_json, load_graph, save_graph, GRAPH_FORMAT, GRAPH_VERSION};
pub use correlation::{correlation_matrix, pearson, CorrelationMatrix};
pub use modularity::{modularity_from_weights, nav_correlation, nav_modularity, ModularityMatrix};

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_features_are_symmetric_and_cached() {
        let c = CorrelationMatrix::from_values(vec![1.0, 0.9, 0.1, 0.9, 1.0, 0.8, 0.1, 0.8, 1.0], 3).unwrap();
        let g = build_adjacency(&c, 0.75, None, 0.1);
        let b = modularity_from_weights(&[0.0, 0.9, 0.1, 0.9, 0.0, 0.2, 0.1, 0.2, 0.0], 3);
        let g = edge_features(g, &b);
        assert!((g.feature(0, 1) - 0.44167).abs() < 1e-5);
        assert_eq!(g.feature(0, 1), g.feature(1, 0));
        let back = graph_from_json(&graph_to_json(&g).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn zero_modularity_gives_zero_features() {
        let c = CorrelationMatrix::from_values(vec![1.0, 0.9, 0.9, 1.0], 2).unwrap();
        let g = edge_features(build_adjacency(&c, 0.75, None, 0.1), &modularity_from_weights(&[0.0; 4], 2));
        assert_eq!(g.edge_features.unwrap(), vec![0.0]);
    }
}
