use crate::neuralcore::layers::{dense, layer_norm, register_dense, register_layer_norm};
use crate::neuralcore::{ParamStore, Tape, Var};
use rand::Rng;

/// `[B, m, h]` → `[B·nh, m, h/nh]`, batch index `b·nh + head`.
pub(crate) fn split_heads(tape: &mut Tape, x: Var, nh: usize) -> Var {
    let s = tape.shape(x).to_vec();
    let (b, m, h) = (s[0], s[1], s[2]);
    let dh = h / nh;
    let y = tape.reshape(x, &[b, m, nh, dh]);
    let y = tape.permute(y, &[0, 2, 1, 3]);
    tape.reshape(y, &[b * nh, m, dh])
}

/// Inverse of [`split_heads`].
pub(crate) fn merge_heads(tape: &mut Tape, x: Var, nh: usize) -> Var {
    let s = tape.shape(x).to_vec();
    let (bn, m, dh) = (s[0], s[1], s[2]);
    let b = bn / nh;
    let y = tape.reshape(x, &[b, nh, m, dh]);
    let y = tape.permute(y, &[0, 2, 1, 3]);
    tape.reshape(y, &[b, m, nh * dh])
}

/// Per-head copy of a `[h]` vector laid out like [`split_heads`] output.
pub(crate) fn head_vector(tape: &mut Tape, v: Var, b: usize, m: usize, nh: usize) -> Var {
    let h = tape.shape(v)[0];
    let dh = h / nh;
    let y = tape.reshape(v, &[1, nh, 1, dh]);
    let y = tape.broadcast_to(y, &[b, nh, m, dh]);
    tape.reshape(y, &[b * nh, m, dh])
}

pub(crate) fn register_mha<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, h: usize) {
    for p in ["w_q", "w_k", "w_v", "w_o"] {
        register_dense(store, rng, &format!("{name}.{p}"), h, h, false);
    }
}

/// Multi-head attention of `xq: [B, m, h]` over `xkv: [B, n, h]`.
pub(crate) fn mha(tape: &mut Tape, store: &ParamStore, name: &str, xq: Var, xkv: Var, nh: usize) -> Var {
    let h = tape.shape(xq)[2];
    let q = dense(tape, store, &format!("{name}.w_q"), xq);
    let k = dense(tape, store, &format!("{name}.w_k"), xkv);
    let v = dense(tape, store, &format!("{name}.w_v"), xkv);
    let (q, k, v) = (split_heads(tape, q, nh), split_heads(tape, k, nh), split_heads(tape, v, nh));
    let logits = tape.bmm(q, k, true);
    let logits = tape.scale(logits, 1.0 / ((h / nh) as f64).sqrt());
    let a = tape.softmax(logits, None);
    let o = tape.bmm(a, v, false);
    let o = merge_heads(tape, o, nh);
    dense(tape, store, &format!("{name}.w_o"), o)
}

pub(crate) fn register_mab<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, h: usize) {
    register_mha(store, rng, name, h);
    register_layer_norm(store, &format!("{name}.ln"), h);
}

/// `LN(X + MHA(X, Y, Y))`.
pub(crate) fn mab(tape: &mut Tape, store: &ParamStore, name: &str, x: Var, y: Var, nh: usize) -> Var {
    let a = mha(tape, store, name, x, y, nh);
    let s = tape.add(x, a);
    layer_norm(tape, store, &format!("{name}.ln"), s)
}
