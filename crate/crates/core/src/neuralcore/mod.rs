//! Differentiable numeric primitives: tensors, a reverse-mode tape over a
//! fixed op set (dense maps, 1-D convolutions, LSTM, layer norm, masked
//! softmax), named parameter storage and finite-difference gradient checks.

mod gradcheck;
pub mod layers;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GRAD_FLOOR, GradCheckOptions, GradEntry, GradReport, ParamCheck};
pub use params::{
    orthogonal, orthogonal_recurrent, xavier_dense, xavier_uniform, ParamStore, CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
};
pub use tape::{conv1d_forward, conv1d_transpose_forward, gelu, gelu_grad, log_sigmoid, sigmoid, Gradients, Tape, Unary, Var};
pub use tensor::Tensor;


use std::rc::Rc;

use rand::Rng;

/// Output length of an unpadded strided convolution, `None` when `len < k`.
pub fn conv_out_len(len: usize, k: usize, stride: usize) -> Option<usize> {
    (len >= k).then(|| (len - k) / stride + 1)
}

/// Output length of a transposed convolution without output padding.
pub fn conv_transpose_out_len(len: usize, k: usize, stride: usize) -> usize {
    (len - 1) * stride + k
}

/// Inverted dropout mask with keep-scaling `1/(1-p)`.
pub fn dropout_mask<R: Rng>(rng: &mut R, n: usize, p: f64) -> Rc<Vec<f64>> {
    let keep = 1.0 - p;
    Rc::new(
        (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect(),
    )
}

/// Scaled dot-product attention for a single query set: `q: [m, d]`,
/// `k: [n, d]`, `v: [n, dv]`, `mask: [m, n]`. Errors on a row with no keys.
pub fn softmax_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&[bool]>,
) -> crate::Result<Var> {
    let (m, d) = (tape.shape(q)[0], tape.shape(q)[1]);
    let n = tape.shape(k)[0];
    if let Some(mask) = mask {
        if let Some(row) = (0..m).find(|&i| !mask[i * n..(i + 1) * n].iter().any(|&b| b)) {
            return Err(crate::Error::Graph(format!("query {row} has an empty neighborhood")));
        }
    }
    let q3 = tape.reshape(q, &[1, m, d]);
    let k3 = tape.reshape(k, &[1, n, d]);
    let dv = tape.shape(v)[1];
    let v3 = tape.reshape(v, &[1, n, dv]);
    let logits = tape.bmm(q3, k3, true);
    let logits = tape.scale(logits, 1.0 / (d as f64).sqrt());
    let alpha = tape.softmax(logits, mask);
    let out = tape.bmm(alpha, v3, false);
    Ok(tape.reshape(out, &[m, dv]))
}
