//! Dual-scale convolutional encoders with channel/temporal attention and
//! mirrored transposed-convolution decoders.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralcore::layers::{dense, register_dense};
use crate::neuralcore::{conv_out_len, conv_transpose_out_len, xavier_uniform, ParamStore, Tape, Tensor, Var};

/// Smallest long/short kernel ratio accepted without a warning.
pub const MIN_KERNEL_RATIO: f64 = 8.0;

/// One convolutional pathway.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleEncoderConfig {
    pub kernel: usize,
    pub stride: usize,
    pub layers: usize,
    pub latent: usize,
    pub reduction: usize,
}

impl ScaleEncoderConfig {
    pub fn short_term(latent: usize) -> Self {
        Self { kernel: 5, stride: 3, layers: 2, latent, reduction: 16 }
    }

    pub fn long_term(latent: usize) -> Self {
        Self { kernel: 45, stride: 11, layers: 1, latent, reduction: 16 }
    }

    /// Temporal lengths `[T, L1, ..]` through the layers.
    pub fn lengths(&self, name: &str, t: usize) -> Result<Vec<usize>> {
        let mut out = vec![t];
        for layer in 1..=self.layers {
            let l = *out.last().unwrap();
            let next = conv_out_len(l, self.kernel, self.stride).ok_or_else(|| {
                Error::Shape(format!(
                    "{name} conv layer {layer}: input length {l} shorter than kernel {}",
                    self.kernel
                ))
            })?;
            out.push(next);
        }
        Ok(out)
    }
}

/// Both pathways over windows of `window` steps with `n_features` inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_features: usize,
    pub window: usize,
    pub short: ScaleEncoderConfig,
    pub long: ScaleEncoderConfig,
}

impl EncoderConfig {
    pub fn new(n_features: usize, window: usize, d_latent: usize, reduction: usize) -> Self {
        let d_l = d_latent / 2;
        let mut short = ScaleEncoderConfig::short_term(d_l);
        let mut long = ScaleEncoderConfig::long_term(d_latent - d_l);
        short.reduction = reduction;
        long.reduction = reduction;
        Self { n_features, window, short, long }
    }

    pub fn short_lengths(&self) -> Result<Vec<usize>> {
        self.short.lengths("short-term", self.window)
    }

    pub fn long_lengths(&self) -> Result<Vec<usize>> {
        self.long.lengths("long-term", self.window)
    }

    /// `(T_s, T_l)`.
    pub fn latent_lengths(&self) -> Result<(usize, usize)> {
        Ok((
            *self.short_lengths()?.last().unwrap(),
            *self.long_lengths()?.last().unwrap(),
        ))
    }

    /// Returns false (and warns) when `k_long / k_short` is below [`MIN_KERNEL_RATIO`].
    pub fn check_kernel_ratio(&self) -> bool {
        let ratio = self.long.kernel as f64 / self.short.kernel as f64;
        if ratio < MIN_KERNEL_RATIO {
            warn!(
                "kernel ratio {}:{} = {ratio:.2} is below {MIN_KERNEL_RATIO}",
                self.long.kernel, self.short.kernel
            );
            return false;
        }
        true
    }
}

fn bottleneck(c: usize, r: usize) -> usize {
    (c / r.max(1)).max(1)
}

fn register_conv<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, cout: usize, cin: usize, k: usize) {
    store.insert(format!("{name}.weight"), xavier_uniform(rng, &[cout, cin, k], cin * k, cout * k));
    store.insert(format!("{name}.bias"), Tensor::zeros(&[cout]));
}

fn register_deconv<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, cin: usize, cout: usize, k: usize) {
    store.insert(format!("{name}.weight"), xavier_uniform(rng, &[cin, cout, k], cout * k, cin * k));
    store.insert(format!("{name}.bias"), Tensor::zeros(&[cout]));
}

/// Parameters of one dual-attention block over `[N, c, l]` maps.
pub fn register_dual_attention<R: Rng>(
    store: &mut ParamStore,
    rng: &mut R,
    name: &str,
    c: usize,
    l: usize,
    r: usize,
) {
    let b = bottleneck(c, r);
    register_dense(store, rng, &format!("{name}.channel.fc1"), b, c, true);
    register_dense(store, rng, &format!("{name}.channel.fc2"), c, b, true);
    register_dense(store, rng, &format!("{name}.temporal.fc1"), b, l, true);
    register_dense(store, rng, &format!("{name}.temporal.fc2"), l, b, true);
}

/// `H ⊙ σ(FC(avg_L H) + FC(max_L H)) ⊙ σ(W₂ GELU(W₁ mean_C H))` on `h: [N, C, L]`.
pub fn dual_attention(tape: &mut Tape, store: &ParamStore, name: &str, h: Var) -> Var {
    let shape = tape.shape(h).to_vec();
    let (n, c, l) = (shape[0], shape[1], shape[2]);
    let fc = |tape: &mut Tape, x: Var| {
        let y = dense(tape, store, &format!("{name}.channel.fc1"), x);
        let y = tape.relu(y);
        dense(tape, store, &format!("{name}.channel.fc2"), y)
    };
    let avg = tape.mean_axis(h, 2);
    let mx = tape.max_axis(h, 2);
    let (a, m) = (fc(tape, avg), fc(tape, mx));
    let ch = tape.add(a, m);
    let ch = tape.sigmoid(ch);
    let ch = tape.reshape(ch, &[n, c, 1]);
    let ch = tape.broadcast_to(ch, &[n, c, l]);

    let mean_c = tape.mean_axis(h, 1);
    let t = dense(tape, store, &format!("{name}.temporal.fc1"), mean_c);
    let t = tape.gelu(t);
    let t = dense(tape, store, &format!("{name}.temporal.fc2"), t);
    let t = tape.sigmoid(t);
    let t = tape.reshape(t, &[n, 1, l]);
    let t = tape.broadcast_to(t, &[n, c, l]);

    let y = tape.mul(h, ch);
    tape.mul(y, t)
}

/// Registers encoder, decoder and scale-logit parameters.
pub fn register_encoders<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &EncoderConfig) -> Result<()> {
    cfg.check_kernel_ratio();
    let d = cfg.n_features;
    for (tag, sc, lens) in [
        ("short", cfg.short, cfg.short_lengths()?),
        ("long", cfg.long, cfg.long_lengths()?),
    ] {
        let mut cin = d;
        for layer in 1..=sc.layers {
            register_conv(store, rng, &format!("{tag}.conv{layer}"), sc.latent, cin, sc.kernel);
            register_dual_attention(store, rng, &format!("{tag}.attn{layer}"), sc.latent, lens[layer], sc.reduction);
            let cout = if layer == 1 { d } else { sc.latent };
            register_deconv(store, rng, &format!("{tag}.deconv{layer}"), sc.latent, cout, sc.kernel);
            cin = sc.latent;
        }
    }
    store.insert("scale.logits", Tensor::zeros(&[2]));
    Ok(())
}

fn encode_path(
    tape: &mut Tape,
    store: &ParamStore,
    tag: &str,
    sc: &ScaleEncoderConfig,
    lens: &[usize],
    x: Var,
) -> Result<Var> {
    if tape.shape(x)[2] != lens[0] {
        return Err(Error::Shape(format!(
            "{tag} encoder expects length {}, got {}",
            lens[0],
            tape.shape(x)[2]
        )));
    }
    let mut h = x;
    for layer in 1..=sc.layers {
        let w = tape.param(store, &format!("{tag}.conv{layer}.weight"));
        let b = tape.param(store, &format!("{tag}.conv{layer}.bias"));
        h = tape.conv1d(h, w, b, sc.stride);
        h = dual_attention(tape, store, &format!("{tag}.attn{layer}"), h);
        h = tape.gelu(h);
    }
    Ok(h)
}

/// `x: [N, D, T]` → `Z_short: [N, d_l, T_s]`.
pub fn short_term_encode(tape: &mut Tape, store: &ParamStore, cfg: &EncoderConfig, x: Var) -> Result<Var> {
    encode_path(tape, store, "short", &cfg.short, &cfg.short_lengths()?, x)
}

/// `x: [N, D, T]` → `Z_long: [N, d_g, T_l]`.
pub fn long_term_encode(tape: &mut Tape, store: &ParamStore, cfg: &EncoderConfig, x: Var) -> Result<Var> {
    encode_path(tape, store, "long", &cfg.long, &cfg.long_lengths()?, x)
}

fn decode_path(
    tape: &mut Tape,
    store: &ParamStore,
    tag: &str,
    sc: &ScaleEncoderConfig,
    lens: &[usize],
    z: Var,
) -> Result<Var> {
    let (got_c, got_l) = (tape.shape(z)[1], tape.shape(z)[2]);
    if got_c != sc.latent || got_l != *lens.last().unwrap() {
        return Err(Error::Shape(format!(
            "{tag} decoder expects [N, {}, {}], got [N, {got_c}, {got_l}]",
            sc.latent,
            lens.last().unwrap()
        )));
    }
    let mut h = z;
    for layer in (1..=sc.layers).rev() {
        let w = tape.param(store, &format!("{tag}.deconv{layer}.weight"));
        let b = tape.param(store, &format!("{tag}.deconv{layer}.bias"));
        let base = conv_transpose_out_len(lens[layer], sc.kernel, sc.stride);
        let pad = lens[layer - 1] - base;
        h = tape.conv1d_transpose(h, w, b, sc.stride, pad);
        if layer > 1 {
            h = tape.gelu(h);
        }
    }
    Ok(h)
}

/// Mirrored decoders back to `[N, D, T]`. Output padding restores lengths the
/// strided convolutions floored away.
pub fn decode_scales(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &EncoderConfig,
    z_short: Var,
    z_long: Var,
) -> Result<(Var, Var)> {
    let xs = decode_path(tape, store, "short", &cfg.short, &cfg.short_lengths()?, z_short)?;
    let xl = decode_path(tape, store, "long", &cfg.long, &cfg.long_lengths()?, z_long)?;
    Ok((xs, xl))
}

/// Softmax of the two scale logits, as a `[2]` node.
pub fn adaptive_scale_weights(tape: &mut Tape, store: &ParamStore) -> Var {
    let l = tape.param(store, "scale.logits");
    tape.softmax(l, None)
}

/// Plain-value softmax of two logits.
pub fn scale_weights(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let (a, b) = ((logits[0] - m).exp(), (logits[1] - m).exp());
    [a / (a + b), b / (a + b)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralcore::{gelu, sigmoid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn default_shape_chain() {
        let cfg = EncoderConfig::new(7, 89, 16, 16);
        assert_eq!(cfg.short_lengths().unwrap(), vec![89, 29, 9]);
        assert_eq!(cfg.long_lengths().unwrap(), vec![89, 5]);
        let cfg = EncoderConfig::new(7, 60, 16, 16);
        assert_eq!(cfg.short_lengths().unwrap(), vec![60, 19, 5]);
        assert_eq!(EncoderConfig::new(7, 120, 16, 16).long_lengths().unwrap(), vec![120, 7]);
        assert_eq!(EncoderConfig::new(7, 45, 16, 16).long_lengths().unwrap(), vec![45, 1]);
        let err = EncoderConfig::new(7, 44, 16, 16).long_lengths().unwrap_err();
        assert!(err.to_string().contains("long-term conv layer 1"));
    }

    #[test]
    fn kernel_ratio_validation() {
        let mut cfg = EncoderConfig::new(7, 89, 16, 16);
        assert!(cfg.check_kernel_ratio());
        cfg.long.kernel = 35;
        assert!(!cfg.check_kernel_ratio());
    }

    #[test]
    fn scale_weight_closed_forms() {
        assert_eq!(scale_weights([0.3, 0.3]), [0.5, 0.5]);
        let w = scale_weights([3f64.ln(), 0.0]);
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
    }

    fn attn_store(c: usize, l: usize, r: usize) -> ParamStore {
        let mut s = ParamStore::new();
        register_dual_attention(&mut s, &mut rng(), "a", c, l, r);
        s
    }

    fn force_gates(store: &mut ParamStore, value: f64) {
        for (name, t) in store.iter_mut() {
            if name.ends_with("fc2.bias") {
                t.data_mut().iter_mut().for_each(|v| *v = value);
            } else if name.ends_with("fc2.weight") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    #[test]
    fn saturated_gates() {
        let x: Vec<f64> = (0..2 * 3 * 4).map(|k| (k as f64 * 0.37).sin()).collect();
        for (bias, expect_identity) in [(60.0, true), (-800.0, false)] {
            let mut s = attn_store(3, 4, 2);
            force_gates(&mut s, bias);
            let mut tape = Tape::new();
            let h = tape.constant(Tensor::from_vec(&[2, 3, 4], x.clone()));
            let y = dual_attention(&mut tape, &s, "a", h);
            for (a, b) in tape.value(y).data().iter().zip(&x) {
                let want = if expect_identity { *b } else { 0.0 };
                assert!((a - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dual_attention_matches_scalar_loops() {
        let (n, c, l, r) = (2, 4, 6, 2);
        let s = attn_store(c, l, r);
        let b = c / r;
        let x: Vec<f64> = (0..n * c * l).map(|k| ((k * 7 % 13) as f64 - 6.0) / 4.0).collect();
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::from_vec(&[n, c, l], x.clone()));
        let y = dual_attention(&mut tape, &s, "a", h);
        let got = tape.value(y).data().to_vec();

        let p = |k: &str| s.get(&format!("a.{k}")).unwrap().data().to_vec();
        let (w1, b1, w2, b2) = (p("channel.fc1.weight"), p("channel.fc1.bias"), p("channel.fc2.weight"), p("channel.fc2.bias"));
        let (u1, c1, u2, c2) = (p("temporal.fc1.weight"), p("temporal.fc1.bias"), p("temporal.fc2.weight"), p("temporal.fc2.bias"));
        let fc = |v: &[f64]| -> Vec<f64> {
            let mut hid = vec![0.0; b];
            for i in 0..b {
                let mut acc = b1[i];
                for j in 0..c {
                    acc += w1[i * c + j] * v[j];
                }
                hid[i] = acc.max(0.0);
            }
            (0..c)
                .map(|i| {
                    let mut acc = b2[i];
                    for j in 0..b {
                        acc += w2[i * b + j] * hid[j];
                    }
                    acc
                })
                .collect()
        };
        for s_ in 0..n {
            let at = |ch: usize, t: usize| x[(s_ * c + ch) * l + t];
            let avg: Vec<f64> = (0..c).map(|ch| (0..l).map(|t| at(ch, t)).sum::<f64>() / l as f64).collect();
            let mx: Vec<f64> = (0..c).map(|ch| (0..l).map(|t| at(ch, t)).fold(f64::MIN, f64::max)).collect();
            let (fa, fm) = (fc(&avg), fc(&mx));
            let gate_c: Vec<f64> = (0..c).map(|i| sigmoid(fa[i] + fm[i])).collect();
            let mean_c: Vec<f64> = (0..l).map(|t| (0..c).map(|ch| at(ch, t)).sum::<f64>() / c as f64).collect();
            let hid: Vec<f64> = (0..b)
                .map(|i| gelu(c1[i] + (0..l).map(|t| u1[i * l + t] * mean_c[t]).sum::<f64>()))
                .collect();
            let gate_t: Vec<f64> = (0..l)
                .map(|t| sigmoid(c2[t] + (0..b).map(|i| u2[t * b + i] * hid[i]).sum::<f64>()))
                .collect();
            for ch in 0..c {
                for t in 0..l {
                    let want = at(ch, t) * gate_c[ch] * gate_t[t];
                    assert!((got[(s_ * c + ch) * l + t] - want).abs() < 1e-12);
                }
            }
        }
    }

    fn full_store(cfg: &EncoderConfig) -> ParamStore {
        let mut s = ParamStore::new();
        register_encoders(&mut s, &mut rng(), cfg).unwrap();
        s
    }

    #[test]
    fn encode_decode_shapes() {
        for t in [89, 60] {
            let cfg = EncoderConfig::new(7, t, 8, 16);
            let s = full_store(&cfg);
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::full(&[3, 7, t], 0.1));
            let zs = short_term_encode(&mut tape, &s, &cfg, x).unwrap();
            let zl = long_term_encode(&mut tape, &s, &cfg, x).unwrap();
            let (ts, tl) = cfg.latent_lengths().unwrap();
            assert_eq!(tape.shape(zs), &[3, 4, ts]);
            assert_eq!(tape.shape(zl), &[3, 4, tl]);
            let (xs, xl) = decode_scales(&mut tape, &s, &cfg, zs, zl).unwrap();
            assert_eq!(tape.shape(xs), &[3, 7, t]);
            assert_eq!(tape.shape(xl), &[3, 7, t]);
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let cfg = EncoderConfig::new(7, 89, 8, 16);
        let s = full_store(&cfg);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 7, 89]));
        let zs = short_term_encode(&mut tape, &s, &cfg, x).unwrap();
        let zl = long_term_encode(&mut tape, &s, &cfg, x).unwrap();
        assert!(tape.value(zs).data().iter().all(|&v| v == 0.0));
        let zero_s = tape.constant(Tensor::zeros(tape.shape(zs)));
        let zero_l = tape.constant(Tensor::zeros(tape.shape(zl)));
        let (xs, xl) = decode_scales(&mut tape, &s, &cfg, zero_s, zero_l).unwrap();
        assert!(tape.value(xs).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(xl).data().iter().all(|&v| v == 0.0));
    }
}
