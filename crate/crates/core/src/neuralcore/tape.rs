//! Tensor-level reverse-mode tape.
//!
//! Every forward op appends a node holding its value and enough saved state
//! to run its adjoint. [`Tape::backward`] walks the nodes in reverse order
//! and accumulates gradients. The op set is closed: it covers exactly what
//! the encoders, graph encoder, fusion head and losses need.

use std::collections::BTreeMap;
use std::rc::Rc;

use super::tensor::{gemm_nn, gemm_nt, gemm_tn, strides, Tensor};
use super::ParamStore;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    Gelu,
    LogSigmoid,
    Square,
}

struct LstmCache {
    // per processed step: gate activations [n, 4h] in i, f, g, o order
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    tanh_cells: Vec<Vec<f64>>,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Rc<Vec<f64>>),
    Unary(Var, Unary),
    SumAll(Var),
    MeanAll(Var),
    SumAxis { x: Var, pre: usize, d: usize, post: usize, mean: bool },
    MaxAxis { x: Var, argmax: Vec<usize> },
    Reshape(Var),
    Gather { x: Var, map: Rc<Vec<usize>> },
    Concat { xs: Vec<Var>, pre: usize, widths: Vec<usize>, post: usize },
    Slice { x: Var, pre: usize, d: usize, start: usize, len: usize, post: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    Bmm { a: Var, b: Var, trans_b: bool },
    Softmax { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Conv1d { x: Var, w: Var, b: Var, stride: usize },
    ConvT1d { x: Var, w: Var, b: Var, stride: usize },
    Lstm { x: Var, w_ih: Var, w_hh: Var, b: Var, reverse: bool, cache: LstmCache },
    PairDot { z: Var, pairs: Rc<Vec<(usize, usize)>> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => Tensor::from_vec(&self.shapes[v.0], g.clone()),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Registers a parameter from the store as a leaf. Repeated lookups of
    /// the same name return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        if let Some((_, v)) = self.params.iter().find(|(n, _)| n == name) {
            return *v;
        }
        let t = store
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .clone();
        let v = self.push(t, Op::Leaf);
        self.params.push((name.to_string(), v));
        v
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn param_grads(&self, g: &Gradients) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(n, v)| (n.clone(), g.wrt(*v)))
            .collect()
    }

    // ---- elementwise ----

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_vec(va.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    /// Elementwise product with a constant tensor (dropout masks, fixed weights).
    pub fn mul_const(&mut self, a: Var, c: Rc<Vec<f64>>) -> Var {
        let va = self.value(a);
        assert_eq!(va.numel(), c.len());
        let data = va.data().iter().zip(c.iter()).map(|(x, y)| x * y).collect();
        let v = Tensor::from_vec(va.shape(), data);
        self.push(v, Op::MulConst(a, c))
    }

    pub fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => f64::tanh,
            Unary::Relu => |x| x.max(0.0),
            Unary::Gelu => gelu,
            Unary::LogSigmoid => log_sigmoid,
            Unary::Square => |x| x * x,
        };
        let v = self.value(a).map(f);
        self.push(v, Op::Unary(a, kind))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Gelu)
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let s = va.data().iter().sum::<f64>() / va.numel() as f64;
        self.push(Tensor::scalar(s), Op::MeanAll(a))
    }

    fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
        let pre = shape[..axis].iter().product();
        let post = shape[axis + 1..].iter().product();
        (pre, shape[axis], post)
    }

    fn reduce_axis(&mut self, a: Var, axis: usize, mean: bool) -> Var {
        let va = self.value(a);
        let (pre, d, post) = Self::axis_split(va.shape(), axis);
        let mut out = vec![0.0; pre * post];
        let x = va.data();
        for p in 0..pre {
            for k in 0..d {
                let base = (p * d + k) * post;
                for q in 0..post {
                    out[p * post + q] += x[base + q];
                }
            }
        }
        if mean {
            out.iter_mut().for_each(|v| *v /= d as f64);
        }
        let mut shape = va.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        self.push(
            Tensor::from_vec(&shape, out),
            Op::SumAxis { x: a, pre, d, post, mean },
        )
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Var {
        self.reduce_axis(a, axis, false)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Var {
        self.reduce_axis(a, axis, true)
    }

    /// Max over `axis`; the gradient routes to the first maximal entry.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Var {
        let va = self.value(a);
        let (pre, d, post) = Self::axis_split(va.shape(), axis);
        let x = va.data();
        let mut out = vec![f64::NEG_INFINITY; pre * post];
        let mut argmax = vec![0usize; pre * post];
        for p in 0..pre {
            for k in 0..d {
                let base = (p * d + k) * post;
                for q in 0..post {
                    let o = p * post + q;
                    if x[base + q] > out[o] {
                        out[o] = x[base + q];
                        argmax[o] = base + q;
                    }
                }
            }
        }
        let mut shape = va.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        self.push(Tensor::from_vec(&shape, out), Op::MaxAxis { x: a, argmax })
    }

    // ---- layout ----

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.value(a).clone().reshaped(shape);
        self.push(v, Op::Reshape(a))
    }

    fn gather(&mut self, a: Var, shape: Vec<usize>, map: Vec<usize>) -> Var {
        let x = self.value(a).data();
        let data = map.iter().map(|&i| x[i]).collect();
        self.push(
            Tensor::from_vec(&shape, data),
            Op::Gather { x: a, map: Rc::new(map) },
        )
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Var {
        let in_shape = self.shape(a).to_vec();
        assert_eq!(perm.len(), in_shape.len());
        let in_strides = strides(&in_shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let map = index_map(&out_shape, &src_strides);
        self.gather(a, out_shape, map)
    }

    /// Numpy-style broadcast between equal-rank shapes where input dims are 1 or equal.
    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Var {
        let in_shape = self.shape(a).to_vec();
        assert_eq!(in_shape.len(), shape.len(), "broadcast rank mismatch");
        let in_strides = strides(&in_shape);
        let src_strides: Vec<usize> = in_shape
            .iter()
            .zip(shape)
            .zip(&in_strides)
            .map(|((&i, &o), &s)| {
                assert!(i == o || i == 1, "cannot broadcast {in_shape:?} to {shape:?}");
                if i == 1 && o != 1 {
                    0
                } else {
                    s
                }
            })
            .collect();
        let map = index_map(shape, &src_strides);
        self.gather(a, shape.to_vec(), map)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Var {
        assert!(!xs.is_empty());
        let first = self.shape(xs[0]).to_vec();
        let (pre, _, post) = Self::axis_split(&first, axis);
        let widths: Vec<usize> = xs.iter().map(|&x| self.shape(x)[axis]).collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; pre * total * post];
        let mut off = 0;
        for (&x, &w) in xs.iter().zip(&widths) {
            let s = self.shape(x);
            assert_eq!(s.len(), first.len());
            let xd = self.value(x).data();
            for p in 0..pre {
                let src = &xd[p * w * post..(p + 1) * w * post];
                let dst = (p * total + off) * post;
                out[dst..dst + w * post].copy_from_slice(src);
            }
            off += w;
        }
        let mut shape = first;
        shape[axis] = total;
        self.push(
            Tensor::from_vec(&shape, out),
            Op::Concat { xs: xs.to_vec(), pre, widths, post },
        )
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let va = self.value(a);
        let (pre, d, post) = Self::axis_split(va.shape(), axis);
        assert!(start + len <= d, "slice out of range");
        let x = va.data();
        let mut out = Vec::with_capacity(pre * len * post);
        for p in 0..pre {
            let base = (p * d + start) * post;
            out.extend_from_slice(&x[base..base + len * post]);
        }
        let mut shape = va.shape().to_vec();
        shape[axis] = len;
        self.push(
            Tensor::from_vec(&shape, out),
            Op::Slice { x: a, pre, d, start, len, post },
        )
    }

    // ---- dense maps ----

    /// `x[..., in] · wᵀ + b` with `w: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (vx, vw) = (self.value(x), self.value(w));
        let inp = *vx.shape().last().unwrap();
        assert_eq!(vw.rank(), 2);
        let (out_dim, w_in) = (vw.dim(0), vw.dim(1));
        assert_eq!(inp, w_in, "linear: input width {inp} vs weight {w_in}");
        let m = vx.numel() / inp;
        let mut y = vec![0.0; m * out_dim];
        gemm_nt(vx.data(), vw.data(), &mut y, m, inp, out_dim);
        if let Some(b) = b {
            let bd = self.value(b).data();
            assert_eq!(bd.len(), out_dim);
            for row in y.chunks_mut(out_dim) {
                for (v, bb) in row.iter_mut().zip(bd) {
                    *v += bb;
                }
            }
        }
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().unwrap() = out_dim;
        self.push(Tensor::from_vec(&shape, y), Op::Linear { x, w, b })
    }

    /// Batched matmul `[B, m, k] · [B, k, n]`, or `[B, m, k] · [B, n, k]ᵀ`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.rank(), 3);
        assert_eq!(vb.rank(), 3);
        let (bs, m, k) = (va.dim(0), va.dim(1), va.dim(2));
        assert_eq!(vb.dim(0), bs);
        let n = if trans_b {
            assert_eq!(vb.dim(2), k);
            vb.dim(1)
        } else {
            assert_eq!(vb.dim(1), k);
            vb.dim(2)
        };
        let mut y = vec![0.0; bs * m * n];
        for p in 0..bs {
            let ad = &va.data()[p * m * k..(p + 1) * m * k];
            let bd = &vb.data()[p * k * n..(p + 1) * k * n];
            let yd = &mut y[p * m * n..(p + 1) * m * n];
            if trans_b {
                gemm_nt(ad, bd, yd, m, k, n);
            } else {
                gemm_nn(ad, bd, yd, m, k, n);
            }
        }
        self.push(Tensor::from_vec(&[bs, m, n], y), Op::Bmm { a, b, trans_b })
    }

    /// Softmax over the last axis. `mask` (shape of the last two axes, true =
    /// allowed) is broadcast over leading axes; masked entries get weight 0.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Var {
        let vx = self.value(x);
        let n = *vx.shape().last().unwrap();
        let rows = vx.numel() / n;
        let mask_rows = mask.map(|m| m.len() / n);
        let mut y = vec![0.0; vx.numel()];
        for r in 0..rows {
            let xr = &vx.data()[r * n..(r + 1) * n];
            let allowed = |j: usize| match (mask, mask_rows) {
                (Some(m), Some(mr)) => m[(r % mr) * n + j],
                _ => true,
            };
            let mut mx = f64::NEG_INFINITY;
            for (j, &v) in xr.iter().enumerate() {
                if allowed(j) && v > mx {
                    mx = v;
                }
            }
            if mx == f64::NEG_INFINITY {
                continue;
            }
            let yr = &mut y[r * n..(r + 1) * n];
            let mut s = 0.0;
            for j in 0..n {
                if allowed(j) {
                    yr[j] = (xr[j] - mx).exp();
                    s += yr[j];
                }
            }
            yr.iter_mut().for_each(|v| *v /= s);
        }
        let shape = vx.shape().to_vec();
        self.push(Tensor::from_vec(&shape, y), Op::Softmax { x })
    }

    /// Layer normalization over the last axis with learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let vx = self.value(x);
        let d = *vx.shape().last().unwrap();
        let rows = vx.numel() / d;
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        assert_eq!(g.len(), d);
        let mut y = vec![0.0; vx.numel()];
        let mut xhat = vec![0.0; vx.numel()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let xr = &vx.data()[r * d..(r + 1) * d];
            let mu = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (xr[j] - mu) * is;
                xhat[r * d + j] = h;
                y[r * d + j] = g[j] * h + b[j];
            }
        }
        let shape = vx.shape().to_vec();
        self.push(
            Tensor::from_vec(&shape, y),
            Op::LayerNorm { x, gamma, beta, xhat, inv_std },
        )
    }

    // ---- convolutions ----

    /// Unpadded strided cross-correlation. `x: [B, C_in, L]`, `w: [C_out, C_in, k]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Var {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let y = conv1d_forward(vx, vw, vb, stride);
        self.push(y, Op::Conv1d { x, w, b, stride })
    }

    /// Transposed convolution. `x: [B, C_in, L]`, `w: [C_in, C_out, k]`; output
    /// length `(L-1)*stride + k + out_pad`, padding positions receive bias only.
    pub fn conv1d_transpose(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        out_pad: usize,
    ) -> Var {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let y = conv1d_transpose_forward(vx, vw, vb, stride, out_pad);
        self.push(y, Op::ConvT1d { x, w, b, stride })
    }

    // ---- recurrence ----

    /// One LSTM direction over `x: [T, N, in]` with zero initial state.
    /// Gate order i, f, g, o; `w_ih: [4h, in]`, `w_hh: [4h, h]`, `b: [4h]`.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, b: Var, reverse: bool) -> Var {
        let (y, cache) = lstm_forward(
            self.value(x),
            self.value(w_ih),
            self.value(w_hh),
            self.value(b),
            reverse,
        );
        self.push(y, Op::Lstm { x, w_ih, w_hh, b, reverse, cache })
    }

    /// Row dot products `z_i · z_j` for each listed pair of `z: [N, d]`.
    pub fn pair_dot(&mut self, z: Var, pairs: Rc<Vec<(usize, usize)>>) -> Var {
        let vz = self.value(z);
        let d = vz.dim(1);
        let zd = vz.data();
        let out: Vec<f64> = pairs
            .iter()
            .map(|&(i, j)| {
                zd[i * d..(i + 1) * d]
                    .iter()
                    .zip(&zd[j * d..(j + 1) * d])
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let n = out.len();
        self.push(Tensor::from_vec(&[n], out), Op::PairDot { z, pairs })
    }

    // ---- backward ----

    pub fn backward(&self, root: Var) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[root.0] = Some(vec![1.0; self.nodes[root.0].value.numel()]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        }
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(grads, *a, self.numel(*a), |d| add_into(d, g));
                acc(grads, *b, self.numel(*b), |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(grads, *a, self.numel(*a), |d| add_into(d, g));
                acc(grads, *b, self.numel(*b), |d| {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x -= y)
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                acc(grads, *a, va.len(), |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * vb[i];
                    }
                });
                acc(grads, *b, vb.len(), |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * va[i];
                    }
                });
            }
            Op::Scale(a, c) => {
                acc(grads, *a, g.len(), |d| {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)
                });
            }
            Op::MulConst(a, c) => {
                acc(grads, *a, g.len(), |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * c[i];
                    }
                });
            }
            Op::Unary(a, kind) => {
                let x = val(*a).data();
                let y = node.value.data();
                acc(grads, *a, x.len(), |d| {
                    for i in 0..d.len() {
                        let dd = match kind {
                            Unary::Sigmoid => y[i] * (1.0 - y[i]),
                            Unary::Tanh => 1.0 - y[i] * y[i],
                            Unary::Relu => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Gelu => gelu_grad(x[i]),
                            Unary::LogSigmoid => sigmoid(-x[i]),
                            Unary::Square => 2.0 * x[i],
                        };
                        d[i] += g[i] * dd;
                    }
                });
            }
            Op::SumAll(a) => {
                let n = self.numel(*a);
                acc(grads, *a, n, |d| d.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::MeanAll(a) => {
                let n = self.numel(*a);
                let s = g[0] / n as f64;
                acc(grads, *a, n, |d| d.iter_mut().for_each(|x| *x += s));
            }
            Op::SumAxis { x, pre, d, post, mean } => {
                let f = if *mean { 1.0 / *d as f64 } else { 1.0 };
                acc(grads, *x, pre * d * post, |dx| {
                    for p in 0..*pre {
                        for k in 0..*d {
                            let base = (p * d + k) * post;
                            for q in 0..*post {
                                dx[base + q] += f * g[p * post + q];
                            }
                        }
                    }
                });
            }
            Op::MaxAxis { x, argmax } => {
                acc(grads, *x, self.numel(*x), |dx| {
                    for (o, &src) in argmax.iter().enumerate() {
                        dx[src] += g[o];
                    }
                });
            }
            Op::Reshape(a) => {
                acc(grads, *a, g.len(), |d| add_into(d, g));
            }
            Op::Gather { x, map } => {
                acc(grads, *x, self.numel(*x), |dx| {
                    for (o, &src) in map.iter().enumerate() {
                        dx[src] += g[o];
                    }
                });
            }
            Op::Concat { xs, pre, widths, post } => {
                let total: usize = widths.iter().sum();
                let mut off = 0;
                for (&x, &w) in xs.iter().zip(widths) {
                    acc(grads, x, pre * w * post, |dx| {
                        for p in 0..*pre {
                            let src = (p * total + off) * post;
                            add_into(&mut dx[p * w * post..(p + 1) * w * post], &g[src..src + w * post]);
                        }
                    });
                    off += w;
                }
            }
            Op::Slice { x, pre, d, start, len, post } => {
                acc(grads, *x, pre * d * post, |dx| {
                    for p in 0..*pre {
                        let base = (p * d + start) * post;
                        add_into(
                            &mut dx[base..base + len * post],
                            &g[p * len * post..(p + 1) * len * post],
                        );
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let (vx, vw) = (val(*x), val(*w));
                let (out_dim, inp) = (vw.dim(0), vw.dim(1));
                let m = vx.numel() / inp;
                acc(grads, *x, vx.numel(), |dx| gemm_nn(g, vw.data(), dx, m, out_dim, inp));
                acc(grads, *w, vw.numel(), |dw| gemm_tn(g, vx.data(), dw, m, out_dim, inp));
                if let Some(b) = b {
                    acc(grads, *b, out_dim, |db| {
                        for row in g.chunks(out_dim) {
                            add_into(db, row);
                        }
                    });
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let (va, vb) = (val(*a), val(*b));
                let (bs, m, k) = (va.dim(0), va.dim(1), va.dim(2));
                let n = node.value.dim(2);
                acc(grads, *a, va.numel(), |da| {
                    for p in 0..bs {
                        let gp = &g[p * m * n..(p + 1) * m * n];
                        let bp = &vb.data()[p * k * n..(p + 1) * k * n];
                        let dap = &mut da[p * m * k..(p + 1) * m * k];
                        if *trans_b {
                            gemm_nn(gp, bp, dap, m, n, k);
                        } else {
                            gemm_nt(gp, bp, dap, m, n, k);
                        }
                    }
                });
                acc(grads, *b, vb.numel(), |db| {
                    for p in 0..bs {
                        let gp = &g[p * m * n..(p + 1) * m * n];
                        let ap = &va.data()[p * m * k..(p + 1) * m * k];
                        let dbp = &mut db[p * k * n..(p + 1) * k * n];
                        if *trans_b {
                            gemm_tn(gp, ap, dbp, m, n, k);
                        } else {
                            gemm_tn(ap, gp, dbp, m, k, n);
                        }
                    }
                });
            }
            Op::Softmax { x } => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap();
                acc(grads, *x, y.len(), |dx| {
                    for r in 0..y.len() / n {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dx[r * n + j] += yr[j] * (gr[j] - s);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let gam = val(*gamma).data();
                let d = gam.len();
                let rows = xhat.len() / d;
                acc(grads, *gamma, d, |dg| {
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                });
                acc(grads, *beta, d, |db| {
                    for r in 0..rows {
                        add_into(db, &g[r * d..(r + 1) * d]);
                    }
                });
                acc(grads, *x, xhat.len(), |dx| {
                    for r in 0..rows {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..d {
                            let dh = g[r * d + j] * gam[j];
                            m1 += dh;
                            m2 += dh * xhat[r * d + j];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        for j in 0..d {
                            let dh = g[r * d + j] * gam[j];
                            dx[r * d + j] += inv_std[r] * (dh - m1 - xhat[r * d + j] * m2);
                        }
                    }
                });
            }
            Op::Conv1d { x, w, b, stride } => {
                let (vx, vw) = (val(*x), val(*w));
                let (bs, cin, l) = (vx.dim(0), vx.dim(1), vx.dim(2));
                let (cout, k) = (vw.dim(0), vw.dim(2));
                let lo = node.value.dim(2);
                let s = *stride;
                acc(grads, *b, cout, |db| {
                    for bi in 0..bs {
                        for o in 0..cout {
                            db[o] += g[(bi * cout + o) * lo..(bi * cout + o + 1) * lo].iter().sum::<f64>();
                        }
                    }
                });
                acc(grads, *w, vw.numel(), |dw| {
                    for bi in 0..bs {
                        for o in 0..cout {
                            let gr = &g[(bi * cout + o) * lo..(bi * cout + o + 1) * lo];
                            for c in 0..cin {
                                let xr = &vx.data()[(bi * cin + c) * l..(bi * cin + c + 1) * l];
                                let wr = &mut dw[(o * cin + c) * k..(o * cin + c + 1) * k];
                                for (p, &gv) in gr.iter().enumerate() {
                                    let xs = &xr[p * s..p * s + k];
                                    for j in 0..k {
                                        wr[j] += gv * xs[j];
                                    }
                                }
                            }
                        }
                    }
                });
                acc(grads, *x, vx.numel(), |dx| {
                    for bi in 0..bs {
                        for o in 0..cout {
                            let gr = &g[(bi * cout + o) * lo..(bi * cout + o + 1) * lo];
                            for c in 0..cin {
                                let wr = &vw.data()[(o * cin + c) * k..(o * cin + c + 1) * k];
                                let xr = &mut dx[(bi * cin + c) * l..(bi * cin + c + 1) * l];
                                for (p, &gv) in gr.iter().enumerate() {
                                    let xs = &mut xr[p * s..p * s + k];
                                    for j in 0..k {
                                        xs[j] += gv * wr[j];
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::ConvT1d { x, w, b, stride } => {
                let (vx, vw) = (val(*x), val(*w));
                let (bs, cin, l) = (vx.dim(0), vx.dim(1), vx.dim(2));
                let (cout, k) = (vw.dim(1), vw.dim(2));
                let lo = node.value.dim(2);
                let s = *stride;
                acc(grads, *b, cout, |db| {
                    for bi in 0..bs {
                        for o in 0..cout {
                            db[o] += g[(bi * cout + o) * lo..(bi * cout + o + 1) * lo].iter().sum::<f64>();
                        }
                    }
                });
                acc(grads, *w, vw.numel(), |dw| {
                    for bi in 0..bs {
                        for c in 0..cin {
                            let xr = &vx.data()[(bi * cin + c) * l..(bi * cin + c + 1) * l];
                            for o in 0..cout {
                                let gr = &g[(bi * cout + o) * lo..(bi * cout + o + 1) * lo];
                                let wr = &mut dw[(c * cout + o) * k..(c * cout + o + 1) * k];
                                for (p, &xv) in xr.iter().enumerate() {
                                    let gs = &gr[p * s..p * s + k];
                                    for j in 0..k {
                                        wr[j] += xv * gs[j];
                                    }
                                }
                            }
                        }
                    }
                });
                acc(grads, *x, vx.numel(), |dx| {
                    for bi in 0..bs {
                        for c in 0..cin {
                            for o in 0..cout {
                                let gr = &g[(bi * cout + o) * lo..(bi * cout + o + 1) * lo];
                                let wr = &vw.data()[(c * cout + o) * k..(c * cout + o + 1) * k];
                                for p in 0..l {
                                    let gs = &gr[p * s..p * s + k];
                                    let mut sum = 0.0;
                                    for j in 0..k {
                                        sum += gs[j] * wr[j];
                                    }
                                    dx[(bi * cin + c) * l + p] += sum;
                                }
                            }
                        }
                    }
                });
            }
            Op::Lstm { x, w_ih, w_hh, b, reverse, cache } => {
                let (dx, dwih, dwhh, db) = lstm_backward(
                    val(*x),
                    val(*w_ih),
                    val(*w_hh),
                    &node.value,
                    cache,
                    *reverse,
                    g,
                );
                acc(grads, *x, dx.len(), |d| add_into(d, &dx));
                acc(grads, *w_ih, dwih.len(), |d| add_into(d, &dwih));
                acc(grads, *w_hh, dwhh.len(), |d| add_into(d, &dwhh));
                acc(grads, *b, db.len(), |d| add_into(d, &db));
            }
            Op::PairDot { z, pairs } => {
                let vz = val(*z);
                let d = vz.dim(1);
                let zd = vz.data();
                acc(grads, *z, zd.len(), |dz| {
                    for (p, &(i, j)) in pairs.iter().enumerate() {
                        for q in 0..d {
                            dz[i * d + q] += g[p] * zd[j * d + q];
                            dz[j * d + q] += g[p] * zd[i * d + q];
                        }
                    }
                });
            }
        }
    }

    fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].value.numel()
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, n: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
    f(slot);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// For each output element (row-major over `out_shape`), the source offset
/// given per-axis source strides.
/// Row-major `rows × cols` → `cols × rows`.
fn transposed(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = x[r * cols + c];
        }
    }
    t
}

fn index_map(out_shape: &[usize], src_strides: &[usize]) -> Vec<usize> {
    let n: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        map.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Exact GELU, `x Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * INV_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

pub fn conv1d_forward(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Tensor {
    let (bs, cin, l) = (x.dim(0), x.dim(1), x.dim(2));
    let (cout, wcin, k) = (w.dim(0), w.dim(1), w.dim(2));
    assert_eq!(cin, wcin, "conv1d channel mismatch");
    assert!(l >= k, "conv1d: length {l} shorter than kernel {k}");
    let lo = (l - k) / stride + 1;
    let mut y = vec![0.0; bs * cout * lo];
    for bi in 0..bs {
        for o in 0..cout {
            let yr = &mut y[(bi * cout + o) * lo..(bi * cout + o + 1) * lo];
            yr.iter_mut().for_each(|v| *v = b.data()[o]);
            for c in 0..cin {
                let xr = &x.data()[(bi * cin + c) * l..(bi * cin + c + 1) * l];
                let wr = &w.data()[(o * cin + c) * k..(o * cin + c + 1) * k];
                for (p, yv) in yr.iter_mut().enumerate() {
                    let xs = &xr[p * stride..p * stride + k];
                    let mut s = 0.0;
                    for j in 0..k {
                        s += xs[j] * wr[j];
                    }
                    *yv += s;
                }
            }
        }
    }
    Tensor::from_vec(&[bs, cout, lo], y)
}

pub fn conv1d_transpose_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    out_pad: usize,
) -> Tensor {
    let (bs, cin, l) = (x.dim(0), x.dim(1), x.dim(2));
    let (wcin, cout, k) = (w.dim(0), w.dim(1), w.dim(2));
    assert_eq!(cin, wcin, "conv1d_transpose channel mismatch");
    let lo = (l - 1) * stride + k + out_pad;
    let mut y = vec![0.0; bs * cout * lo];
    for bi in 0..bs {
        for o in 0..cout {
            let yr = &mut y[(bi * cout + o) * lo..(bi * cout + o + 1) * lo];
            yr.iter_mut().for_each(|v| *v = b.data()[o]);
            for c in 0..cin {
                let xr = &x.data()[(bi * cin + c) * l..(bi * cin + c + 1) * l];
                let wr = &w.data()[(c * cout + o) * k..(c * cout + o + 1) * k];
                for (p, &xv) in xr.iter().enumerate() {
                    let ys = &mut yr[p * stride..p * stride + k];
                    for j in 0..k {
                        ys[j] += xv * wr[j];
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[bs, cout, lo], y)
}

fn lstm_forward(
    x: &Tensor,
    w_ih: &Tensor,
    w_hh: &Tensor,
    b: &Tensor,
    reverse: bool,
) -> (Tensor, LstmCache) {
    let (t_len, n, inp) = (x.dim(0), x.dim(1), x.dim(2));
    let h = w_hh.dim(1);
    assert_eq!(w_ih.dim(0), 4 * h);
    assert_eq!(w_ih.dim(1), inp, "lstm input width mismatch");
    let mut y = vec![0.0; t_len * n * h];
    let mut h_prev = vec![0.0; n * h];
    let mut c_prev = vec![0.0; n * h];
    let mut cache = LstmCache {
        gates: Vec::with_capacity(t_len),
        cells: Vec::with_capacity(t_len),
        tanh_cells: Vec::with_capacity(t_len),
    };
    let wih_t = transposed(w_ih.data(), 4 * h, inp);
    let whh_t = transposed(w_hh.data(), 4 * h, h);
    for step in 0..t_len {
        let t = if reverse { t_len - 1 - step } else { step };
        let xt = &x.data()[t * n * inp..(t + 1) * n * inp];
        let mut gates = vec![0.0; n * 4 * h];
        for row in gates.chunks_mut(4 * h) {
            row.copy_from_slice(b.data());
        }
        gemm_nn(xt, &wih_t, &mut gates, n, inp, 4 * h);
        gemm_nn(&h_prev, &whh_t, &mut gates, n, h, 4 * h);
        let mut c = vec![0.0; n * h];
        let mut tc = vec![0.0; n * h];
        let yt = &mut y[t * n * h..(t + 1) * n * h];
        for r in 0..n {
            let gr = &mut gates[r * 4 * h..(r + 1) * 4 * h];
            for j in 0..h {
                let i_g = sigmoid(gr[j]);
                let f_g = sigmoid(gr[h + j]);
                let g_g = gr[2 * h + j].tanh();
                let o_g = sigmoid(gr[3 * h + j]);
                gr[j] = i_g;
                gr[h + j] = f_g;
                gr[2 * h + j] = g_g;
                gr[3 * h + j] = o_g;
                let cv = f_g * c_prev[r * h + j] + i_g * g_g;
                c[r * h + j] = cv;
                tc[r * h + j] = cv.tanh();
                yt[r * h + j] = o_g * tc[r * h + j];
            }
        }
        h_prev.copy_from_slice(yt);
        c_prev.copy_from_slice(&c);
        cache.gates.push(gates);
        cache.cells.push(c);
        cache.tanh_cells.push(tc);
    }
    (Tensor::from_vec(&[t_len, n, h], y), cache)
}

#[allow(clippy::type_complexity)]
fn lstm_backward(
    x: &Tensor,
    w_ih: &Tensor,
    w_hh: &Tensor,
    y: &Tensor,
    cache: &LstmCache,
    reverse: bool,
    gy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (t_len, n, inp) = (x.dim(0), x.dim(1), x.dim(2));
    let h = w_hh.dim(1);
    let mut dx = vec![0.0; x.numel()];
    let mut dwih = vec![0.0; w_ih.numel()];
    let mut dwhh = vec![0.0; w_hh.numel()];
    let mut db = vec![0.0; 4 * h];
    let mut dh_next = vec![0.0; n * h];
    let mut dc_next = vec![0.0; n * h];
    let zeros = vec![0.0; n * h];
    for step in (0..t_len).rev() {
        let t = if reverse { t_len - 1 - step } else { step };
        let gates = &cache.gates[step];
        let tc = &cache.tanh_cells[step];
        let (c_prev, h_prev): (&[f64], &[f64]) = if step == 0 {
            (&zeros, &zeros)
        } else {
            let tp = if reverse { t + 1 } else { t - 1 };
            (&cache.cells[step - 1], &y.data()[tp * n * h..(tp + 1) * n * h])
        };
        let mut dgates = vec![0.0; n * 4 * h];
        for r in 0..n {
            for j in 0..h {
                let k = r * h + j;
                let gr = &gates[r * 4 * h..(r + 1) * 4 * h];
                let (i_g, f_g, g_g, o_g) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                let dh = gy[t * n * h + k] + dh_next[k];
                let dc = dh * o_g * (1.0 - tc[k] * tc[k]) + dc_next[k];
                let dgr = &mut dgates[r * 4 * h..(r + 1) * 4 * h];
                dgr[j] = dc * g_g * i_g * (1.0 - i_g);
                dgr[h + j] = dc * c_prev[k] * f_g * (1.0 - f_g);
                dgr[2 * h + j] = dc * i_g * (1.0 - g_g * g_g);
                dgr[3 * h + j] = dh * tc[k] * o_g * (1.0 - o_g);
                dc_next[k] = dc * f_g;
            }
        }
        let xt = &x.data()[t * n * inp..(t + 1) * n * inp];
        gemm_tn(&dgates, xt, &mut dwih, n, 4 * h, inp);
        gemm_tn(&dgates, h_prev, &mut dwhh, n, 4 * h, h);
        for row in dgates.chunks(4 * h) {
            add_into(&mut db, row);
        }
        gemm_nn(&dgates, w_ih.data(), &mut dx[t * n * inp..(t + 1) * n * inp], n, 4 * h, inp);
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        gemm_nn(&dgates, w_hh.data(), &mut dh_next, n, 4 * h, h);
    }
    (dx, dwih, dwhh, db)
}
