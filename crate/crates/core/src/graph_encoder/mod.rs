//! Recurrent graph encoder: BiLSTM stages around a dynamic dependency
//! module, time-conditioned edge attention over the window graph, and
//! Set Transformer pooling over time.

mod heads;

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphbuild::WindowGraph;
use crate::neuralcore::layers::{bilstm, dense, register_bilstm, register_dense, DirectionMerge};
use crate::neuralcore::{xavier_uniform, ParamStore, Tape, Tensor, Var};
use heads::{head_vector, mab, merge_heads, register_mab, split_heads};

pub const DEFAULT_INDUCING: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Static,
    Basic,
    Enhanced,
    #[default]
    Full,
}

impl AttentionMode {
    pub const ALL: [AttentionMode; 4] = [
        AttentionMode::Static,
        AttentionMode::Basic,
        AttentionMode::Enhanced,
        AttentionMode::Full,
    ];

    fn uses_edges(self) -> bool {
        matches!(self, AttentionMode::Enhanced | AttentionMode::Full)
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AttentionMode::Static => "static",
            AttentionMode::Basic => "basic",
            AttentionMode::Enhanced => "enhanced",
            AttentionMode::Full => "full",
        };
        f.write_str(s)
    }
}

impl FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "static" => Ok(AttentionMode::Static),
            "basic" => Ok(AttentionMode::Basic),
            "enhanced" => Ok(AttentionMode::Enhanced),
            "full" => Ok(AttentionMode::Full),
            other => Err(Error::Config(format!("unknown attention mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeEmbeddingKind {
    Sinusoidal,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphEncoderConfig {
    pub n_assets: usize,
    pub n_features: usize,
    pub window: usize,
    pub h: usize,
    pub heads: usize,
    pub inducing: usize,
    pub mode: AttentionMode,
    pub merge: DirectionMerge,
    /// `None` picks sinusoidal for Enhanced and learned for Full.
    pub time_embedding: Option<TimeEmbeddingKind>,
}

impl GraphEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.h % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden width {} not divisible by {} heads",
                self.h, self.heads
            )));
        }
        if self.inducing == 0 || self.inducing > 64 {
            return Err(Error::Config(format!("inducing points {} outside 1..=64", self.inducing)));
        }
        if self.merge == DirectionMerge::Concat && self.h % 2 != 0 {
            return Err(Error::Config("concatenated BiLSTM needs an even width".into()));
        }
        Ok(())
    }

    pub fn time_kind(&self) -> Option<TimeEmbeddingKind> {
        match self.mode {
            AttentionMode::Static | AttentionMode::Basic => None,
            AttentionMode::Enhanced => Some(self.time_embedding.unwrap_or(TimeEmbeddingKind::Sinusoidal)),
            AttentionMode::Full => Some(self.time_embedding.unwrap_or(TimeEmbeddingKind::Learned)),
        }
    }

    /// Units per LSTM direction; concatenation splits `h` between directions.
    fn lstm_units(&self) -> usize {
        match self.merge {
            DirectionMerge::Sum => self.h,
            DirectionMerge::Concat => self.h / 2,
        }
    }
}

/// Per-window graph inputs as dense `N × N` constants.
#[derive(Debug, Clone)]
pub struct GraphInputs {
    pub n: usize,
    pub mask: Vec<bool>,
    pub static_weights: Rc<Vec<f64>>,
    pub edge_features: Rc<Vec<f64>>,
}

impl GraphInputs {
    pub fn new(graph: &WindowGraph, static_weights: Vec<f64>) -> Result<Self> {
        let n = graph.n;
        if let Some(i) = (0..n).find(|&i| graph.degree(i) == 0) {
            return Err(Error::Graph(format!("node {i} has an empty neighborhood")));
        }
        Ok(Self {
            n,
            mask: graph.mask(),
            static_weights: Rc::new(static_weights),
            edge_features: Rc::new(graph.feature_matrix()),
        })
    }
}

pub fn register_graph_encoder<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &GraphEncoderConfig) -> Result<()> {
    cfg.validate()?;
    let (h, u) = (cfg.h, cfg.lstm_units());
    register_bilstm(store, rng, "lstm1", cfg.n_features, u);
    register_bilstm(store, rng, "lstm2", h, u);
    register_dense(store, rng, "attn.w_v", h, h, false);
    if cfg.mode != AttentionMode::Static {
        for p in ["attn.w_q", "attn.w_k", "attn.w_o"] {
            register_dense(store, rng, p, h, h, false);
        }
    }
    if cfg.mode.uses_edges() {
        store.insert("attn.w_edge", xavier_uniform(rng, &[h], 1, h));
        store.insert("attn.w_edge_v", xavier_uniform(rng, &[h], 1, h));
    }
    if cfg.time_kind() == Some(TimeEmbeddingKind::Learned) {
        store.insert("time.table", xavier_uniform(rng, &[cfg.window, h], cfg.window, h));
    }
    if cfg.mode == AttentionMode::Full {
        register_dense(store, rng, "dyn.fc2", h, h, true);
        store.insert("dyn.e_node", xavier_uniform(rng, &[cfg.n_assets, h], cfg.n_assets, h));
        register_dense(store, rng, "tmod.w_g", h, h, true);
        register_dense(store, rng, "tmod.w_b", h, h, false);
        register_dense(store, rng, "attn.w_k_time", h, h, false);
        register_dense(store, rng, "attn.w_v_time", h, h, false);
    }
    store.insert("set.inducing", xavier_uniform(rng, &[cfg.inducing, h], cfg.inducing, h));
    store.insert("set.seed", xavier_uniform(rng, &[1, h], 1, h));
    for m in ["set.mab_ind", "set.mab_out", "set.pma"] {
        register_mab(store, rng, m, h);
    }
    Ok(())
}

/// `x: [N, D, T]` → `H1: [T, N, h]`.
pub fn bilstm_stage1(tape: &mut Tape, store: &ParamStore, merge: DirectionMerge, x: Var) -> Var {
    let xt = tape.permute(x, &[2, 0, 1]);
    bilstm(tape, store, "lstm1", xt, merge)
}

pub fn bilstm_stage2(tape: &mut Tape, store: &ParamStore, merge: DirectionMerge, h1: Var) -> Var {
    bilstm(tape, store, "lstm2", h1, merge)
}

/// `D_t = ReLU(V Vᵀ)` with `V = tanh(E_node ⊙ FC₂(H1_t))`; returns
/// `(D_t H1_t + H1_t, D)` with `D: [T, N, N]`.
pub fn dynamic_dependency(tape: &mut Tape, store: &ParamStore, h1: Var) -> (Var, Var) {
    let shape = tape.shape(h1).to_vec();
    let f = dense(tape, store, "dyn.fc2", h1);
    let e = tape.param(store, "dyn.e_node");
    let e = tape.reshape(e, &[1, shape[1], shape[2]]);
    let e = tape.broadcast_to(e, &shape);
    let v = tape.mul(e, f);
    let v = tape.tanh(v);
    let d = tape.bmm(v, v, true);
    let d = tape.relu(d);
    let prop = tape.bmm(d, h1, false);
    (tape.add(prop, h1), d)
}

/// Standard sinusoidal position table `[T, h]`.
pub fn sinusoidal_embedding(t: usize, h: usize) -> Tensor {
    let mut v = vec![0.0; t * h];
    for pos in 0..t {
        for k in 0..h {
            let freq = 10000f64.powf(-((k / 2 * 2) as f64) / h as f64);
            let a = pos as f64 * freq;
            v[pos * h + k] = if k % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    Tensor::from_vec(&[t, h], v)
}

/// `e: [T, h]` for the configured mode, `None` for modes without time input.
pub fn time_embedding(tape: &mut Tape, store: &ParamStore, cfg: &GraphEncoderConfig) -> Option<Var> {
    match cfg.time_kind()? {
        TimeEmbeddingKind::Learned => Some(tape.param(store, "time.table")),
        TimeEmbeddingKind::Sinusoidal => Some(tape.constant(sinusoidal_embedding(cfg.window, cfg.h))),
    }
}

fn per_time(tape: &mut Tape, x: Var, n: usize) -> Var {
    // [T, h] -> [T, N, h]
    let s = tape.shape(x).to_vec();
    let y = tape.reshape(x, &[s[0], 1, s[1]]);
    tape.broadcast_to(y, &[s[0], n, s[1]])
}

/// `H̃ = H2 ⊙ σ(W_g e_t + b_g) + W_b e_t`.
pub fn temporal_modulation(tape: &mut Tape, store: &ParamStore, h2: Var, e: Var) -> Var {
    let n = tape.shape(h2)[1];
    let g = dense(tape, store, "tmod.w_g", e);
    let g = tape.sigmoid(g);
    let g = per_time(tape, g, n);
    let b = dense(tape, store, "tmod.w_b", e);
    let b = per_time(tape, b, n);
    let y = tape.mul(h2, g);
    tape.add(y, b)
}

fn batched_const(tape: &mut Tape, m: &Rc<Vec<f64>>, b: usize, n: usize) -> Var {
    let c = tape.constant(Tensor::from_vec(&[1, n, n], m.as_ref().clone()));
    tape.broadcast_to(c, &[b, n, n])
}

/// Edge attention over every timestep, `H2: [T, N, h]` → `O: [T, N, h]`.
pub fn edge_attention(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GraphEncoderConfig,
    h2: Var,
    e: Option<Var>,
    g: &GraphInputs,
) -> Result<Var> {
    let shape = tape.shape(h2).to_vec();
    let (t, n, h) = (shape[0], shape[1], shape[2]);
    if n != g.n {
        return Err(Error::Shape(format!("graph has {} nodes, states have {n}", g.n)));
    }
    if cfg.mode == AttentionMode::Static {
        let v = dense(tape, store, "attn.w_v", h2);
        let w = batched_const(tape, &g.static_weights, t, n);
        return Ok(tape.bmm(w, v, false));
    }
    let nh = cfg.heads;
    let dh = h / nh;
    let bt = t * nh;
    let scale = 1.0 / (dh as f64).sqrt();

    let q_in = match (cfg.mode, e) {
        (AttentionMode::Full, Some(e)) => temporal_modulation(tape, store, h2, e),
        _ => h2,
    };
    let mut q = dense(tape, store, "attn.w_q", q_in);
    let mut k = dense(tape, store, "attn.w_k", h2);
    let mut v = dense(tape, store, "attn.w_v", h2);
    match (cfg.mode, e) {
        (AttentionMode::Enhanced, Some(e)) => {
            let eb = per_time(tape, e, n);
            q = tape.mul(q, eb);
        }
        (AttentionMode::Full, Some(e)) => {
            let ek = dense(tape, store, "attn.w_k_time", e);
            let ek = per_time(tape, ek, n);
            k = tape.add(k, ek);
            let ev = dense(tape, store, "attn.w_v_time", e);
            let ev = per_time(tape, ev, n);
            v = tape.add(v, ev);
        }
        _ => {}
    }
    let (qh, kh, vh) = (split_heads(tape, q, nh), split_heads(tape, k, nh), split_heads(tape, v, nh));
    let logits = tape.bmm(qh, kh, true);
    let mut logits = tape.scale(logits, scale);
    if cfg.mode == AttentionMode::Basic {
        let w = batched_const(tape, &g.static_weights, bt, n);
        logits = tape.add(logits, w);
    }
    let b = cfg.mode.uses_edges().then(|| batched_const(tape, &g.edge_features, bt, n));
    if let Some(b) = b {
        let we = tape.param(store, "attn.w_edge");
        let we = head_vector(tape, we, t, n, nh);
        let qe = tape.mul(qh, we);
        let qe = tape.sum_axis(qe, 2);
        let qe = tape.reshape(qe, &[bt, n, 1]);
        let qe = tape.broadcast_to(qe, &[bt, n, n]);
        let eb = tape.mul(qe, b);
        let eb = tape.scale(eb, scale);
        logits = tape.add(logits, eb);
    }
    let alpha = tape.softmax(logits, Some(&g.mask));
    let mut o = tape.bmm(alpha, vh, false);
    if let Some(b) = b {
        let ab = tape.mul(alpha, b);
        let ab = tape.sum_axis(ab, 2);
        let ab = tape.reshape(ab, &[bt, n, 1]);
        let ab = tape.broadcast_to(ab, &[bt, n, dh]);
        let wv = tape.param(store, "attn.w_edge_v");
        let wv = head_vector(tape, wv, t, n, nh);
        let ev = tape.mul(ab, wv);
        o = tape.add(o, ev);
    }
    let o = merge_heads(tape, o, nh);
    Ok(dense(tape, store, "attn.w_o", o))
}

/// ISAB then PMA over the time axis of `o: [N, T, h]`, giving `[N, h]`.
pub fn set_transformer_aggregate(tape: &mut Tape, store: &ParamStore, heads: usize, o: Var) -> Var {
    let s = tape.shape(o).to_vec();
    let (n, h) = (s[0], s[2]);
    let ind = tape.param(store, "set.inducing");
    let k = tape.shape(ind)[0];
    let ind = tape.reshape(ind, &[1, k, h]);
    let ind = tape.broadcast_to(ind, &[n, k, h]);
    let h_i = mab(tape, store, "set.mab_ind", ind, o, heads);
    let h_out = mab(tape, store, "set.mab_out", o, h_i, heads);
    let seed = tape.param(store, "set.seed");
    let seed = tape.reshape(seed, &[1, 1, h]);
    let seed = tape.broadcast_to(seed, &[n, 1, h]);
    let z = mab(tape, store, "set.pma", seed, h_out, heads);
    tape.reshape(z, &[n, h])
}

/// Full graph encoder, `x: [N, D, T]` → `Z_graph: [N, h]`.
pub fn graph_encode(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GraphEncoderConfig,
    x: Var,
    g: &GraphInputs,
) -> Result<Var> {
    let mut h1 = bilstm_stage1(tape, store, cfg.merge, x);
    if cfg.mode == AttentionMode::Full {
        h1 = dynamic_dependency(tape, store, h1).0;
    }
    let h2 = bilstm_stage2(tape, store, cfg.merge, h1);
    let e = time_embedding(tape, store, cfg);
    let o = edge_attention(tape, store, cfg, h2, e, g)?;
    let o = tape.permute(o, &[1, 0, 2]);
    Ok(set_transformer_aggregate(tape, store, cfg.heads, o))
}

#[cfg(test)]
mod tests;
