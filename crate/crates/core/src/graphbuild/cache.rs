//! JSON dump of a window graph with a versioned header.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::WindowGraph;
use crate::error::{Error, Result};

pub const GRAPH_FORMAT: &str = "ftscomm-graph";
pub const GRAPH_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CachedEdge {
    i: usize,
    j: usize,
    weight: f64,
    feature: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphFile {
    format: String,
    version: u32,
    n: usize,
    tau: f64,
    delta: f64,
    edges: Vec<CachedEdge>,
    floor_edges: Vec<(usize, usize)>,
}

pub fn graph_to_json(g: &WindowGraph) -> Result<String> {
    let edges = g
        .edges
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| CachedEdge {
            i,
            j,
            weight: g.weight(i, j),
            feature: g.edge_features.as_ref().map(|f| f[k]),
        })
        .collect();
    let file = GraphFile {
        format: GRAPH_FORMAT.into(),
        version: GRAPH_VERSION,
        n: g.n,
        tau: g.tau,
        delta: g.delta,
        edges,
        floor_edges: g.floor_edges.clone(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn graph_from_json(s: &str) -> Result<WindowGraph> {
    let file: GraphFile = serde_json::from_str(s)?;
    if file.format != GRAPH_FORMAT || file.version != GRAPH_VERSION {
        return Err(Error::Serde(format!(
            "unsupported graph file {} v{}",
            file.format, file.version
        )));
    }
    let n = file.n;
    let mut adjacency = vec![0.0; n * n];
    let mut feats = Vec::new();
    let mut edges = Vec::new();
    for e in &file.edges {
        if e.i >= e.j || e.j >= n {
            return Err(Error::Serde(format!("bad edge ({}, {})", e.i, e.j)));
        }
        adjacency[e.i * n + e.j] = e.weight;
        adjacency[e.j * n + e.i] = e.weight;
        edges.push((e.i, e.j));
        feats.push(e.feature);
    }
    let edge_features = if feats.iter().all(Option::is_some) && !feats.is_empty() {
        Some(feats.into_iter().map(Option::unwrap).collect())
    } else {
        None
    };
    Ok(WindowGraph {
        n,
        adjacency,
        edges,
        edge_features,
        floor_edges: file.floor_edges,
        tau: file.tau,
        delta: file.delta,
    })
}

pub fn save_graph(g: &WindowGraph, path: &Path) -> Result<()> {
    std::fs::write(path, graph_to_json(g)?)?;
    Ok(())
}

pub fn load_graph(path: &Path) -> Result<WindowGraph> {
    graph_from_json(&std::fs::read_to_string(path)?)
}
