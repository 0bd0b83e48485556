use std::rc::Rc;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphbuild::WindowGraph;
use crate::neuralcore::{Tape, Unary, Var};

/// Per-term losses and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub graph_loss: f64,
    pub temporal_loss: f64,
    pub total: f64,
    pub lambda_graph: f64,
    pub lambda_temporal: f64,
}

impl LossBreakdown {
    pub fn new(graph_loss: f64, temporal_loss: f64, lambda_graph: f64, lambda_temporal: f64) -> Self {
        Self {
            graph_loss,
            temporal_loss,
            total: lambda_graph * graph_loss + lambda_temporal * temporal_loss,
            lambda_graph,
            lambda_temporal,
        }
    }
}

/// Up to `count` distinct non-edges `(i, j)`, `i < j`, uniformly without
/// replacement, sorted.
pub fn sample_negatives<R: Rng>(g: &WindowGraph, count: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let n = g.n;
    let mut pool = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if g.weight(i, j) == 0.0 {
                pool.push((i, j));
            }
        }
    }
    if count >= pool.len() {
        return pool;
    }
    let mut idx = sample(rng, pool.len(), count).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|k| pool[k]).collect()
}

/// Mean binary cross-entropy of `σ(z_iᵀz_j)` over positive and negative pairs.
pub fn graph_loss(
    tape: &mut Tape,
    z: Var,
    positives: &[(usize, usize)],
    negatives: &[(usize, usize)],
) -> Result<Var> {
    if positives.is_empty() {
        return Err(Error::Graph("graph has no edges".into()));
    }
    let sp = tape.pair_dot(z, Rc::new(positives.to_vec()));
    let mut terms = tape.unary(sp, Unary::LogSigmoid);
    if !negatives.is_empty() {
        let sn = tape.pair_dot(z, Rc::new(negatives.to_vec()));
        let sn = tape.scale(sn, -1.0);
        let ln = tape.unary(sn, Unary::LogSigmoid);
        terms = tape.concat(&[terms, ln], 0);
    }
    let m = tape.mean_all(terms);
    Ok(tape.scale(m, -1.0))
}

/// `½(MSE(X, X̂_short) + MSE(X, X̂_long))`.
pub fn temporal_loss(tape: &mut Tape, x: Var, x_short: Var, x_long: Var) -> Result<Var> {
    for r in [x_short, x_long] {
        if tape.shape(r) != tape.shape(x) {
            return Err(Error::Shape(format!(
                "reconstruction {:?} does not match input {:?}",
                tape.shape(r),
                tape.shape(x)
            )));
        }
    }
    let mut parts = Vec::with_capacity(2);
    for r in [x_short, x_long] {
        let d = tape.sub(x, r);
        let sq = tape.unary(d, Unary::Square);
        parts.push(tape.mean_all(sq));
    }
    let s = tape.add(parts[0], parts[1]);
    Ok(tape.scale(s, 0.5))
}
