use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::synthetic::{generate_synthetic, SyntheticSpec};
use crate::encoders::{adaptive_scale_weights, decode_scales, long_term_encode, short_term_encode};
use crate::error::Result;
use crate::graph_encoder::{graph_encode, AttentionMode, TimeEmbeddingKind};
use crate::marketdata::{compute_features, make_windows};
use crate::neuralcore::{grad_check, GradCheckOptions, GradReport, ParamStore, Tape, Tensor, Var};
use crate::training::{
    forward, gated_fusion, init_params, prepare_window, sample_negatives, temporal_loss, graph_loss, ModelConfig,
    PreparedWindow,
};

pub const TOY_ASSETS: usize = 6;
pub const TOY_WINDOW: usize = 89;
pub const TOY_LATENT: usize = 8;

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckSummary {
    pub reports: Vec<GradReport>,
    pub max_rel_error: f64,
    pub pass: bool,
    /// `fragment/parameter` for every check above tolerance.
    pub failing: Vec<String>,
}

fn toy_model(mode: AttentionMode) -> ModelConfig {
    ModelConfig {
        d_latent: TOY_LATENT,
        h: TOY_LATENT,
        heads: 2,
        inducing: 4,
        reduction: 4,
        mode,
        ..ModelConfig::new(TOY_ASSETS, 7, TOY_WINDOW)
    }
}

fn toy_window(seed: u64) -> Result<PreparedWindow> {
    let data = generate_synthetic(&SyntheticSpec {
        n_assets: TOY_ASSETS,
        t_total: 45 + TOY_WINDOW,
        sizes: vec![2, 2, 2],
        seed,
        ..SyntheticSpec::default()
    })?;
    let f = compute_features(&data.prices)?;
    let slice = make_windows(f.n_times(), TOY_WINDOW, 1)?[0];
    prepare_window(&f, &data.prices, slice, 0.5, 0.1, None)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect())
}

/// Fixed random linear readout so every output coordinate reaches the loss.
fn project(tape: &mut Tape, v: Var, r: &Tensor) -> Var {
    let r = tape.constant(r.clone());
    let p = tape.mul(v, r);
    tape.sum_all(p)
}

/// Finite-difference checks over the encoders, the graph encoder in every
/// attention mode, the fusion block and the full model with its training
/// loss. The dropout path is reported as skipped.
pub fn run_gradcheck(opts: &GradCheckOptions) -> Result<GradcheckSummary> {
    let w = toy_window(opts.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9c);
    let n = TOY_ASSETS;
    let full = toy_model(AttentionMode::Full);
    let enc = full.encoder();
    let (ts, tl) = enc.latent_lengths()?;
    let x_tensor = Tensor::from_vec(&[n, 7, TOY_WINDOW], w.features.values().to_vec());
    let mut reports = Vec::new();

    let store = init_params(&full, opts.seed)?;
    let rs = random(&mut rng, &[n, enc.short.latent, ts]);
    let rl = random(&mut rng, &[n, enc.long.latent, tl]);
    reports.push(grad_check(
        "encoders",
        &store,
        |s, tape| {
            let x = tape.constant(x_tensor.clone());
            let zs = short_term_encode(tape, s, &enc, x)?;
            let zl = long_term_encode(tape, s, &enc, x)?;
            let (xs, xl) = decode_scales(tape, s, &enc, zs, zl)?;
            let rec = temporal_loss(tape, x, xs, xl)?;
            let a = project(tape, zs, &rs);
            let b = project(tape, zl, &rl);
            let ab = tape.add(a, b);
            Ok(tape.add(rec, ab))
        },
        opts,
    )?);

    let rg = random(&mut rng, &[n, TOY_LATENT]);
    for mode in AttentionMode::ALL {
        let mut variants = vec![(mode, None)];
        if mode == AttentionMode::Enhanced {
            variants.push((mode, Some(TimeEmbeddingKind::Learned)));
        }
        for (mode, time) in variants {
            let cfg = ModelConfig {
                time_embedding: time,
                ..toy_model(mode)
            };
            let store = init_params(&cfg, opts.seed)?;
            let name = match time {
                Some(_) => format!("graph_encoder/{mode}+time"),
                None => format!("graph_encoder/{mode}"),
            };
            reports.push(grad_check(
                &name,
                &store,
                |s, tape| {
                    let x = tape.constant(x_tensor.clone());
                    let z = graph_encode(tape, s, &cfg.graph(), x, &w.inputs)?;
                    Ok(project(tape, z, &rg))
                },
                opts,
            )?);
        }
    }

    let zg = random(&mut rng, &[n, TOY_LATENT]);
    let zs = random(&mut rng, &[n, enc.short.latent, ts]);
    let zl = random(&mut rng, &[n, enc.long.latent, tl]);
    let rf = random(&mut rng, &[n, TOY_LATENT]);
    reports.push(grad_check(
        "fusion",
        &store,
        |s, tape| {
            let g = tape.constant(zg.clone());
            let a = tape.constant(zs.clone());
            let b = tape.constant(zl.clone());
            let sw = adaptive_scale_weights(tape, s);
            let w0 = tape.slice(sw, 0, 0, 1);
            let w0 = tape.reshape(w0, &[1, 1, 1]);
            let w0 = tape.broadcast_to(w0, &[n, enc.short.latent, ts]);
            let w1 = tape.slice(sw, 0, 1, 1);
            let w1 = tape.reshape(w1, &[1, 1, 1]);
            let w1 = tape.broadcast_to(w1, &[n, enc.long.latent, tl]);
            let a = tape.mul(a, w0);
            let b = tape.mul(b, w1);
            let z = gated_fusion(tape, s, &full, g, a, b, None)?;
            Ok(project(tape, z, &rf))
        },
        opts,
    )?);

    let neg = sample_negatives(&w.graph, w.graph.edges.len(), &mut rng);
    for mode in AttentionMode::ALL {
        let cfg = toy_model(mode);
        let store = init_params(&cfg, opts.seed)?;
        reports.push(grad_check(
            &format!("model/{mode}"),
            &store,
            |s, tape| model_loss(tape, s, &cfg, &w, &neg, None),
            opts,
        )?);
    }

    let store = init_params(&full, opts.seed)?;
    reports.push(grad_check(
        "model/dropout",
        &store,
        |s, tape| {
            let mut r = ChaCha8Rng::seed_from_u64(opts.seed);
            model_loss(tape, s, &full, &w, &neg, Some(&mut r))
        },
        &GradCheckOptions {
            stochastic: true,
            ..opts.clone()
        },
    )?);

    let max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let failing: Vec<String> = reports
        .iter()
        .flat_map(|r| r.failing().into_iter().map(|c| format!("{}/{}", r.fragment, c.name)))
        .collect();
    Ok(GradcheckSummary {
        pass: failing.is_empty(),
        max_rel_error,
        failing,
        reports,
    })
}

fn model_loss(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    w: &PreparedWindow,
    neg: &[(usize, usize)],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let fw = forward(tape, store, cfg, &w.features, &w.inputs, rng)?;
    let g = graph_loss(tape, fw.z_final, &w.graph.edges, neg)?;
    let t = temporal_loss(tape, fw.x, fw.x_short, fw.x_long)?;
    Ok(tape.add(g, t))
}
