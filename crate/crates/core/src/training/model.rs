use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{
    adaptive_scale_weights, decode_scales, long_term_encode, register_encoders, short_term_encode, EncoderConfig,
};
use crate::error::{Error, Result};
use crate::graph_encoder::{
    graph_encode, register_graph_encoder, AttentionMode, GraphEncoderConfig, GraphInputs, TimeEmbeddingKind,
    DEFAULT_INDUCING,
};
use crate::marketdata::FeatureTensor;
use crate::neuralcore::layers::{dense, layer_norm, register_dense, register_layer_norm, DirectionMerge};
use crate::neuralcore::{dropout_mask, ParamStore, Tape, Tensor, Var};

/// Every width and switch of the composed model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_assets: usize,
    pub n_features: usize,
    pub window: usize,
    pub d_latent: usize,
    pub h: usize,
    pub heads: usize,
    pub inducing: usize,
    pub reduction: usize,
    pub mode: AttentionMode,
    pub merge: DirectionMerge,
    pub time_embedding: Option<TimeEmbeddingKind>,
    pub dropout: f64,
}

impl ModelConfig {
    /// Defaults for `n_assets` assets and `d_latent` = `h` = 64.
    pub fn new(n_assets: usize, n_features: usize, window: usize) -> Self {
        Self {
            n_assets,
            n_features,
            window,
            d_latent: 64,
            h: 64,
            heads: 4,
            inducing: DEFAULT_INDUCING,
            reduction: 16,
            mode: AttentionMode::Full,
            merge: DirectionMerge::Sum,
            time_embedding: None,
            dropout: 0.1,
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig::new(self.n_features, self.window, self.d_latent, self.reduction)
    }

    pub fn graph(&self) -> GraphEncoderConfig {
        GraphEncoderConfig {
            n_assets: self.n_assets,
            n_features: self.n_features,
            window: self.window,
            h: self.h,
            heads: self.heads,
            inducing: self.inducing,
            mode: self.mode,
            merge: self.merge,
            time_embedding: self.time_embedding,
        }
    }

    /// `h + T_s·d_l + T_l·d_g`, from the actual convolution lengths.
    pub fn concat_width(&self) -> Result<usize> {
        let enc = self.encoder();
        let (ts, tl) = enc.latent_lengths()?;
        Ok(self.h + ts * enc.short.latent + tl * enc.long.latent)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_assets < 2 || self.n_features == 0 {
            return Err(Error::Config(format!(
                "need at least 2 assets and 1 feature, got {} and {}",
                self.n_assets, self.n_features
            )));
        }
        if self.d_latent < 2 || self.h == 0 {
            return Err(Error::Config(format!("latent width {} too small", self.d_latent)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.reduction == 0 {
            return Err(Error::Config("reduction ratio must be positive".into()));
        }
        self.graph().validate()?;
        self.concat_width().map(|_| ())
    }
}

pub fn register_fusion<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) -> Result<()> {
    let (w, d) = (cfg.concat_width()?, cfg.d_latent);
    register_dense(store, rng, "fusion.w3", d, w, true);
    register_layer_norm(store, "fusion.ln3", d);
    register_dense(store, rng, "fusion.w4", d, d, true);
    register_layer_norm(store, "fusion.ln4", d);
    register_dense(store, rng, "fusion.gate", d, w, true);
    register_dense(store, rng, "fusion.w_r", d, w, false);
    Ok(())
}

/// Fresh parameters for every component, drawn from one seeded stream.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    register_encoders(&mut store, &mut rng, &cfg.encoder())?;
    register_graph_encoder(&mut store, &mut rng, &cfg.graph())?;
    register_fusion(&mut store, &mut rng, cfg)?;
    Ok(store)
}

/// `Z_final = LN(W₄ drop(ReLU(LN(W₃ z + b₃))) + b₄) ⊙ σ(W_g z + b_g) + W_r z`
/// over `z = [Z_graph; flat(Z_short); flat(Z_long)]`.
pub fn gated_fusion(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    z_graph: Var,
    z_short: Var,
    z_long: Var,
    dropout: Option<Rc<Vec<f64>>>,
) -> Result<Var> {
    let (sg, ss, sl) = (
        tape.shape(z_graph).to_vec(),
        tape.shape(z_short).to_vec(),
        tape.shape(z_long).to_vec(),
    );
    if sg.len() != 2 || ss.len() != 3 || sl.len() != 3 {
        return Err(Error::Shape(format!(
            "fusion streams must be [N, h], [N, C, L], [N, C, L]; got {sg:?}, {ss:?}, {sl:?}"
        )));
    }
    let n = sg[0];
    if ss[0] != n || sl[0] != n {
        return Err(Error::Shape(format!(
            "fusion streams disagree on N: {n}, {}, {}",
            ss[0], sl[0]
        )));
    }
    let expected = cfg.concat_width()?;
    let actual = sg[1] + ss[1] * ss[2] + sl[1] * sl[2];
    if actual != expected {
        return Err(Error::Shape(format!(
            "fusion input width: expected {expected}, got {actual}"
        )));
    }
    let fs = tape.reshape(z_short, &[n, ss[1] * ss[2]]);
    let fl = tape.reshape(z_long, &[n, sl[1] * sl[2]]);
    let z = tape.concat(&[z_graph, fs, fl], 1);

    let hidden = dense(tape, store, "fusion.w3", z);
    let hidden = layer_norm(tape, store, "fusion.ln3", hidden);
    let mut a = tape.relu(hidden);
    if let Some(mask) = dropout {
        a = tape.mul_const(a, mask);
    }
    let tr = dense(tape, store, "fusion.w4", a);
    let tr = layer_norm(tape, store, "fusion.ln4", tr);
    let gate = dense(tape, store, "fusion.gate", z);
    let gate = tape.sigmoid(gate);
    let res = dense(tape, store, "fusion.w_r", z);
    let gated = tape.mul(tr, gate);
    Ok(tape.add(gated, res))
}

/// Handles into one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub x: Var,
    pub z_graph: Var,
    pub z_short: Var,
    pub z_long: Var,
    pub x_short: Var,
    pub x_long: Var,
    pub scale_weights: Var,
    pub z_final: Var,
}

fn scaled(tape: &mut Tape, z: Var, w: Var, k: usize) -> Var {
    let shape = tape.shape(z).to_vec();
    let wk = tape.slice(w, 0, k, 1);
    let wk = tape.reshape(wk, &[1, 1, 1]);
    let wk = tape.broadcast_to(wk, &shape);
    tape.mul(z, wk)
}

/// Full model on one standardized window. Dropout is active only when an
/// RNG is supplied.
pub fn forward<R: Rng>(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    features: &FeatureTensor,
    graph: &GraphInputs,
    rng: Option<&mut R>,
) -> Result<Forward> {
    let (n, d, t) = (features.n_assets(), features.n_features(), features.n_times());
    if n != cfg.n_assets || d != cfg.n_features || t != cfg.window {
        return Err(Error::Shape(format!(
            "window is [{n}, {d}, {t}], model expects [{}, {}, {}]",
            cfg.n_assets, cfg.n_features, cfg.window
        )));
    }
    let enc = cfg.encoder();
    let x = tape.constant(Tensor::from_vec(&[n, d, t], features.values().to_vec()));
    let z_short = short_term_encode(tape, store, &enc, x)?;
    let z_long = long_term_encode(tape, store, &enc, x)?;
    let (x_short, x_long) = decode_scales(tape, store, &enc, z_short, z_long)?;
    let w = adaptive_scale_weights(tape, store);
    let zs = scaled(tape, z_short, w, 0);
    let zl = scaled(tape, z_long, w, 1);
    let z_graph = graph_encode(tape, store, &cfg.graph(), x, graph)?;
    let mask = match rng {
        Some(r) if cfg.dropout > 0.0 => Some(dropout_mask(r, n * cfg.d_latent, cfg.dropout)),
        _ => None,
    };
    let z_final = gated_fusion(tape, store, cfg, z_graph, zs, zl, mask)?;
    Ok(Forward {
        x,
        z_graph,
        z_short,
        z_long,
        x_short,
        x_long,
        scale_weights: w,
        z_final,
    })
}
