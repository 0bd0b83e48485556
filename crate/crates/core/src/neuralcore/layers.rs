//! Parameterized building blocks over the tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{orthogonal_recurrent, xavier_dense, ParamStore, Tape, Tensor, Var};

/// How the two LSTM directions are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DirectionMerge {
    /// `H = H→ + H←`, width `h`.
    #[default]
    Sum,
    /// `H = [H→; H←]`, width `2h`.
    Concat,
}

impl DirectionMerge {
    pub fn out_width(self, h: usize) -> usize {
        match self {
            DirectionMerge::Sum => h,
            DirectionMerge::Concat => 2 * h,
        }
    }
}

pub fn register_dense<R: Rng>(
    store: &mut ParamStore,
    rng: &mut R,
    name: &str,
    out: usize,
    inp: usize,
    bias: bool,
) {
    store.insert(format!("{name}.weight"), xavier_dense(rng, out, inp));
    if bias {
        store.insert(format!("{name}.bias"), Tensor::zeros(&[out]));
    }
}

/// `x · Wᵀ (+ b)` with parameters `{name}.weight` and optional `{name}.bias`.
pub fn dense(tape: &mut Tape, store: &ParamStore, name: &str, x: Var) -> Var {
    let w = tape.param(store, &format!("{name}.weight"));
    let bname = format!("{name}.bias");
    let b = store.contains(&bname).then(|| tape.param(store, &bname));
    tape.linear(x, w, b)
}

pub fn register_layer_norm(store: &mut ParamStore, name: &str, d: usize) {
    store.insert(format!("{name}.gamma"), Tensor::full(&[d], 1.0));
    store.insert(format!("{name}.beta"), Tensor::zeros(&[d]));
}

pub fn layer_norm(tape: &mut Tape, store: &ParamStore, name: &str, x: Var) -> Var {
    let g = tape.param(store, &format!("{name}.gamma"));
    let b = tape.param(store, &format!("{name}.beta"));
    tape.layer_norm(x, g, b)
}

pub fn register_lstm<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, inp: usize, h: usize) {
    store.insert(format!("{name}.w_ih"), xavier_dense(rng, 4 * h, inp));
    store.insert(format!("{name}.w_hh"), orthogonal_recurrent(rng, h));
    store.insert(format!("{name}.b"), Tensor::zeros(&[4 * h]));
}

pub fn register_bilstm<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, inp: usize, h: usize) {
    register_lstm(store, rng, &format!("{name}.fwd"), inp, h);
    register_lstm(store, rng, &format!("{name}.bwd"), inp, h);
}

fn lstm(tape: &mut Tape, store: &ParamStore, name: &str, x: Var, reverse: bool) -> Var {
    let w_ih = tape.param(store, &format!("{name}.w_ih"));
    let w_hh = tape.param(store, &format!("{name}.w_hh"));
    let b = tape.param(store, &format!("{name}.b"));
    tape.lstm(x, w_ih, w_hh, b, reverse)
}

/// Bidirectional LSTM over `x: [T, N, in]` with zero initial states.
pub fn bilstm(tape: &mut Tape, store: &ParamStore, name: &str, x: Var, merge: DirectionMerge) -> Var {
    let f = lstm(tape, store, &format!("{name}.fwd"), x, false);
    let b = lstm(tape, store, &format!("{name}.bwd"), x, true);
    match merge {
        DirectionMerge::Sum => tape.add(f, b),
        DirectionMerge::Concat => tape.concat(&[f, b], 2),
    }
}
