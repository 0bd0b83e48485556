//! Shared fixtures for the integration and acceptance targets.
#![allow(dead_code)]

use std::rc::Rc;

use ftscomm::error::Result;
use ftscomm::marketdata::PriceMatrix;
use ftscomm::neuralcore::{grad_check, GradCheckOptions, GradReport, ParamStore, Tape, Tensor, Unary, Var};
use ftscomm::pipeline::{PipelineConfig, SyntheticSpec};
use ftscomm::training::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect())
}

/// Weighted sum of `v` against a fixed random tensor of the same shape.
fn readout(tape: &mut Tape, v: Var, seed: u64) -> Var {
    let shape = tape.shape(v).to_vec();
    let r = randn(&mut ChaCha8Rng::seed_from_u64(seed), &shape);
    let r = tape.constant(r);
    let p = tape.mul(v, r);
    tape.sum_all(p)
}

type Build = Box<dyn Fn(&mut Tape, &ParamStore) -> Var>;

fn case(name: &str, inputs: &[(&str, &[usize])], seed: u64, build: Build) -> (String, ParamStore, Build) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (n, s) in inputs {
        store.insert(*n, randn(&mut rng, s));
    }
    (name.to_string(), store, build)
}

fn p(tape: &mut Tape, s: &ParamStore, name: &str) -> Var {
    tape.param(s, name)
}

/// One finite-difference report per tape primitive, inputs treated as parameters.
pub fn primitive_reports(opts: &GradCheckOptions) -> Result<Vec<GradReport>> {
    let mask: Rc<Vec<f64>> = Rc::new((0..12).map(|i| if i % 3 == 0 { 0.0 } else { 1.5 }).collect());
    let softmax_mask: Vec<bool> = (0..16).map(|i| i % 5 != 1).collect();
    let mut cases = vec![
        case("add", &[("a", &[3, 4]), ("b", &[3, 4])], 1, Box::new(|t, s| {
            let (a, b) = (p(t, s, "a"), p(t, s, "b"));
            t.add(a, b)
        })),
        case("sub", &[("a", &[3, 4]), ("b", &[3, 4])], 2, Box::new(|t, s| {
            let (a, b) = (p(t, s, "a"), p(t, s, "b"));
            t.sub(a, b)
        })),
        case("mul", &[("a", &[3, 4]), ("b", &[3, 4])], 3, Box::new(|t, s| {
            let (a, b) = (p(t, s, "a"), p(t, s, "b"));
            t.mul(a, b)
        })),
        case("scale", &[("a", &[3, 4])], 4, Box::new(|t, s| {
            let a = p(t, s, "a");
            t.scale(a, -2.5)
        })),
        case("mul_const", &[("a", &[3, 4])], 5, Box::new(move |t, s| {
            let a = p(t, s, "a");
            t.mul_const(a, mask.clone())
        })),
        case("sum_axis", &[("a", &[2, 3, 4])], 6, Box::new(|t, s| {
            let a = p(t, s, "a");
            t.sum_axis(a, 1)
        })),
        case("mean_axis", &[("a", &[2, 3, 4])], 7, Box::new(|t, s| {
            let a = p(t, s, "a");
            t.mean_axis(a, 2)
        })),
        case("max_axis", &[("a", &[2, 3, 4])], 8, Box::new(|t, s| {
            let a = p(t, s, "a");
            t.max_axis(a, 1)
        })),
        case("mean_all", &[("a", &[2, 3])], 9, Box::new(|t, s| {
            let a = p(t, s, "a");
            let m = t.mean_all(a);
            let m2 = t.mul(m, m);
            t.reshape(m2, &[1])
        })),
        case("reshape_permute", &[("a", &[2, 3, 4])], 10, Box::new(|t, s| {
            let a = p(t, s, "a");
            let r = t.reshape(a, &[4, 6]);
            let r = t.reshape(r, &[2, 3, 4]);
            t.permute(r, &[2, 0, 1])
        })),
        case("broadcast_to", &[("a", &[1, 3, 1])], 11, Box::new(|t, s| {
            let a = p(t, s, "a");
            t.broadcast_to(a, &[2, 3, 4])
        })),
        case("concat_slice", &[("a", &[2, 3]), ("b", &[2, 2])], 12, Box::new(|t, s| {
            let (a, b) = (p(t, s, "a"), p(t, s, "b"));
            let c = t.concat(&[a, b], 1);
            t.slice(c, 1, 1, 3)
        })),
        case("linear", &[("x", &[2, 3, 5]), ("w", &[4, 5]), ("b", &[4])], 13, Box::new(|t, s| {
            let (x, w, b) = (p(t, s, "x"), p(t, s, "w"), p(t, s, "b"));
            let y = t.linear(x, w, Some(b));
            let z = t.linear(x, w, None);
            t.add(y, z)
        })),
        case("bmm", &[("a", &[2, 3, 4]), ("b", &[2, 4, 5]), ("c", &[2, 5, 4])], 14, Box::new(|t, s| {
            let (a, b, c) = (p(t, s, "a"), p(t, s, "b"), p(t, s, "c"));
            let y = t.bmm(a, b, false);
            let z = t.bmm(a, c, true);
            t.add(y, z)
        })),
        case("softmax", &[("x", &[2, 4, 4])], 15, Box::new(move |t, s| {
            let x = p(t, s, "x");
            let a = t.softmax(x, None);
            let b = t.softmax(x, Some(&softmax_mask));
            t.add(a, b)
        })),
        case("layer_norm", &[("x", &[3, 6]), ("g", &[6]), ("b", &[6])], 16, Box::new(|t, s| {
            let (x, g, b) = (p(t, s, "x"), p(t, s, "g"), p(t, s, "b"));
            t.layer_norm(x, g, b)
        })),
        case("conv1d", &[("x", &[2, 3, 11]), ("w", &[4, 3, 3]), ("b", &[4])], 17, Box::new(|t, s| {
            let (x, w, b) = (p(t, s, "x"), p(t, s, "w"), p(t, s, "b"));
            let y1 = t.conv1d(x, w, b, 1);
            let y3 = t.conv1d(x, w, b, 3);
            let a = t.sum_all(y1);
            let c = readout(t, y3, 99);
            let a = t.scale(a, 0.1);
            t.add(a, c)
        })),
        case("conv1d_transpose", &[("x", &[2, 3, 4]), ("w", &[3, 2, 3]), ("b", &[2])], 18, Box::new(|t, s| {
            let (x, w, b) = (p(t, s, "x"), p(t, s, "w"), p(t, s, "b"));
            t.conv1d_transpose(x, w, b, 3, 2)
        })),
        case("lstm", &[("x", &[5, 2, 3]), ("w_ih", &[8, 3]), ("w_hh", &[8, 2]), ("b", &[8])], 19, Box::new(|t, s| {
            let (x, wi, wh, b) = (p(t, s, "x"), p(t, s, "w_ih"), p(t, s, "w_hh"), p(t, s, "b"));
            let f = t.lstm(x, wi, wh, b, false);
            let r = t.lstm(x, wi, wh, b, true);
            t.concat(&[f, r], 2)
        })),
        case("pair_dot", &[("z", &[4, 3])], 20, Box::new(|t, s| {
            let z = p(t, s, "z");
            t.pair_dot(z, Rc::new(vec![(0, 1), (2, 3), (1, 1), (3, 0)]))
        })),
    ];
    for (k, u) in [Unary::Sigmoid, Unary::Tanh, Unary::Relu, Unary::Gelu, Unary::LogSigmoid, Unary::Square]
        .into_iter()
        .enumerate()
    {
        cases.push(case(&format!("unary/{u:?}"), &[("a", &[3, 5])], 30 + k as u64, Box::new(move |t, s| {
            let a = p(t, s, "a");
            t.unary(a, u)
        })));
    }
    cases
        .into_iter()
        .enumerate()
        .map(|(k, (name, store, build))| {
            grad_check(
                &name,
                &store,
                |s, tape| {
                    let v = build(tape, s);
                    Ok(readout(tape, v, 1000 + k as u64))
                },
                opts,
            )
        })
        .collect()
}

/// Small model and schedule that keeps a full run on planted data near a
/// few seconds per seed on one core.
pub fn desk_config() -> PipelineConfig {
    PipelineConfig {
        d_latent: 16,
        h: 16,
        heads: 2,
        stride: 10,
        train: TrainConfig {
            lr: 5e-3,
            max_epochs: 8,
            ..TrainConfig::default()
        },
        ..PipelineConfig::default()
    }
}

pub fn planted(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        seed,
        ..SyntheticSpec::default()
    }
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

pub fn random_prices(rng: &mut ChaCha8Rng, n: usize, t: usize) -> PriceMatrix {
    let common: Vec<f64> = (0..t).map(|_| rng.random_range(-0.02..0.02)).collect();
    let load: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.5)).collect();
    let base: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..500.0)).collect();
    let mut level = vec![0.0f64; n];
    let mut v = Vec::with_capacity(n * t);
    for c in &common {
        for (i, l) in level.iter_mut().enumerate() {
            *l += load[i] * c + rng.random_range(-0.02..0.02);
            v.push(base[i] * l.exp());
        }
    }
    PriceMatrix::with_default_dates(v, (0..n).map(|i| format!("a{i}")).collect()).unwrap()
}

/// Two-pass Pearson, B = A − d dᵀ / 2m with every sum written out.
pub fn naive_modularity(p: &PriceMatrix) -> Vec<f64> {
    let (n, t) = (p.n_assets(), p.n_times());
    let nav: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..t).map(|k| p.get(k, i) / p.get(0, i)).collect())
        .collect();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mi = nav[i].iter().sum::<f64>() / t as f64;
            let mj = nav[j].iter().sum::<f64>() / t as f64;
            let mut sij = 0.0;
            let mut sii = 0.0;
            let mut sjj = 0.0;
            for k in 0..t {
                sij += (nav[i][k] - mi) * (nav[j][k] - mj);
                sii += (nav[i][k] - mi) * (nav[i][k] - mi);
                sjj += (nav[j][k] - mj) * (nav[j][k] - mj);
            }
            a[i][j] = sij / (sii.sqrt() * sjj.sqrt());
        }
    }
    let mut d = vec![0.0; n];
    let mut two_m = 0.0;
    for i in 0..n {
        for j in 0..n {
            d[i] += a[i][j];
            two_m += a[i][j];
        }
    }
    let mut b = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            b[i * n + j] = a[i][j] - d[i] * d[j] / two_m;
        }
    }
    b
}
