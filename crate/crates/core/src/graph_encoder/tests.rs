use super::*;
use crate::graphbuild::{build_adjacency, edge_features, modularity_from_weights, static_weights, CorrelationMatrix};
use crate::neuralcore::sigmoid;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg(mode: AttentionMode, n: usize, t: usize) -> GraphEncoderConfig {
    GraphEncoderConfig {
        n_assets: n,
        n_features: 3,
        window: t,
        h: 4,
        heads: 2,
        inducing: 3,
        mode,
        merge: DirectionMerge::Sum,
        time_embedding: None,
    }
}

fn store(c: &GraphEncoderConfig, seed: u64) -> ParamStore {
    let mut s = ParamStore::new();
    register_graph_encoder(&mut s, &mut ChaCha8Rng::seed_from_u64(seed), c).unwrap();
    s
}

fn set(s: &mut ParamStore, name: &str, f: impl Fn(usize) -> f64) {
    let t = s.get_mut(name).unwrap();
    for (k, v) in t.data_mut().iter_mut().enumerate() {
        *v = f(k);
    }
}

fn wave(len: usize, phase: f64) -> Vec<f64> {
    (0..len).map(|k| (k as f64 * 0.61 + phase).sin()).collect()
}

/// Ring of `n` nodes with correlated neighbors and nonzero modularity.
fn ring_inputs(n: usize) -> GraphInputs {
    let mut c = vec![0.0; n * n];
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        c[i * n + i] = 1.0;
        for j in [(i + 1) % n, (i + n - 1) % n] {
            c[i * n + j] = 0.8 + 0.01 * (i + j) as f64;
            a[i * n + j] = 0.3 + 0.05 * i as f64 + 0.05 * j as f64;
        }
        let far = (i + n / 2) % n;
        a[i * n + far] = 0.1;
    }
    let cm = CorrelationMatrix::from_values(c, n).unwrap();
    let g = build_adjacency(&cm, 0.75, None, 0.1);
    let g = edge_features(g, &modularity_from_weights(&a, n));
    GraphInputs::new(&g, static_weights(&cm, 0.75)).unwrap()
}

#[test]
fn zero_input_zero_state() {
    let c = cfg(AttentionMode::Full, 3, 5);
    let s = store(&c, 1);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[3, 3, 5]));
    let h1 = bilstm_stage1(&mut tape, &s, c.merge, x);
    assert_eq!(tape.shape(h1), &[5, 3, 4]);
    assert!(tape.value(h1).data().iter().all(|&v| v == 0.0));
    let h2 = bilstm_stage2(&mut tape, &s, c.merge, h1);
    assert!(tape.value(h2).data().iter().all(|&v| v == 0.0));
}

#[test]
fn single_step_window() {
    let c = cfg(AttentionMode::Full, 3, 1);
    let s = store(&c, 2);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_vec(&[3, 3, 1], wave(9, 0.0)));
    let h1 = bilstm_stage1(&mut tape, &s, c.merge, x);
    assert_eq!(tape.shape(h1), &[1, 3, 4]);
    assert!(tape.value(h1).is_finite());
    let z = graph_encode(&mut tape, &s, &c, x, &ring_inputs(3)).unwrap();
    assert_eq!(tape.shape(z), &[3, 4]);
}

#[test]
fn concat_merge_keeps_width() {
    let mut c = cfg(AttentionMode::Basic, 3, 4);
    c.merge = DirectionMerge::Concat;
    let s = store(&c, 3);
    assert_eq!(s.get("lstm1.fwd.w_hh").unwrap().shape(), &[8, 2]);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_vec(&[3, 3, 4], wave(36, 0.2)));
    let z = graph_encode(&mut tape, &s, &c, x, &ring_inputs(3)).unwrap();
    assert_eq!(tape.shape(z), &[3, 4]);
}

#[test]
fn zero_node_embedding_is_identity_path() {
    let c = cfg(AttentionMode::Full, 3, 4);
    let mut s = store(&c, 4);
    set(&mut s, "dyn.e_node", |_| 0.0);
    let mut tape = Tape::new();
    let h1 = tape.constant(Tensor::from_vec(&[4, 3, 4], wave(48, 1.0)));
    let (out, d) = dynamic_dependency(&mut tape, &s, h1);
    assert_eq!(tape.value(out), tape.value(h1));
    assert!(tape.value(d).data().iter().all(|&v| v == 0.0));
}

#[test]
fn two_node_dependency_hand_case() {
    let mut c = cfg(AttentionMode::Full, 2, 1);
    c.h = 2;
    c.heads = 1;
    let mut s = store(&c, 5);
    set(&mut s, "dyn.fc2.weight", |k| if k == 0 || k == 3 { 1.0 } else { 0.0 });
    set(&mut s, "dyn.fc2.bias", |_| 0.0);
    set(&mut s, "dyn.e_node", |_| 1.0);
    let rows = [[0.5, 0.2], [-0.4, -0.1]];
    let mut tape = Tape::new();
    let h1 = tape.constant(Tensor::from_vec(&[1, 2, 2], rows.concat()));
    let (out, d) = dynamic_dependency(&mut tape, &s, h1);
    let v: Vec<[f64; 2]> = rows.iter().map(|r| [r[0].tanh(), r[1].tanh()]).collect();
    assert!(v[0][0] * v[1][0] + v[0][1] * v[1][1] < 0.0);
    let dv = tape.value(d).data();
    assert_eq!(dv[1], 0.0);
    assert_eq!(dv[2], 0.0);
    for i in 0..2 {
        let norm2 = v[i][0] * v[i][0] + v[i][1] * v[i][1];
        assert!((dv[i * 3] - norm2).abs() < 1e-15);
        for k in 0..2 {
            let want = (1.0 + norm2) * rows[i][k];
            assert!((tape.value(out).data()[i * 2 + k] - want).abs() < 1e-15);
        }
    }
}

#[test]
fn dependency_matrix_is_symmetric_and_nonnegative() {
    let c = cfg(AttentionMode::Full, 5, 3);
    let s = store(&c, 6);
    let mut tape = Tape::new();
    let h1 = tape.constant(Tensor::from_vec(&[3, 5, 4], wave(60, 0.3)));
    let (_, d) = dynamic_dependency(&mut tape, &s, h1);
    let dv = tape.value(d);
    for t in 0..3 {
        for i in 0..5 {
            for j in 0..5 {
                assert!(dv.at(&[t, i, j]) >= 0.0);
                assert!((dv.at(&[t, i, j]) - dv.at(&[t, j, i])).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn temporal_modulation_cases() {
    let c = cfg(AttentionMode::Full, 3, 2);
    let mut s = store(&c, 7);
    let h2v = wave(24, 0.5);
    let ev = wave(8, 2.0);
    let run = |s: &ParamStore| {
        let mut tape = Tape::new();
        let h2 = tape.constant(Tensor::from_vec(&[2, 3, 4], h2v.clone()));
        let e = tape.constant(Tensor::from_vec(&[2, 4], ev.clone()));
        let y = temporal_modulation(&mut tape, s, h2, e);
        tape.value(y).data().to_vec()
    };
    // scalar-loop oracle on random weights
    let got = run(&s);
    let wg = s.get("tmod.w_g.weight").unwrap().data().to_vec();
    let bg = s.get("tmod.w_g.bias").unwrap().data().to_vec();
    let wb = s.get("tmod.w_b.weight").unwrap().data().to_vec();
    for t in 0..2 {
        for i in 0..3 {
            for k in 0..4 {
                let mut gate = bg[k];
                let mut bias = 0.0;
                for j in 0..4 {
                    gate += wg[k * 4 + j] * ev[t * 4 + j];
                    bias += wb[k * 4 + j] * ev[t * 4 + j];
                }
                let want = h2v[(t * 3 + i) * 4 + k] * sigmoid(gate) + bias;
                assert!((got[(t * 3 + i) * 4 + k] - want).abs() < 1e-12);
            }
        }
    }
    set(&mut s, "tmod.w_b.weight", |_| 0.0);
    set(&mut s, "tmod.w_g.weight", |_| 0.0);
    set(&mut s, "tmod.w_g.bias", |_| 40.0);
    for (a, b) in run(&s).iter().zip(&h2v) {
        assert!((a - b).abs() < 1e-15);
    }
    set(&mut s, "tmod.w_g.bias", |_| -800.0);
    assert!(run(&s).iter().all(|&v| v == 0.0));
}

#[test]
fn static_single_neighbor_passes_value_through() {
    let c = cfg(AttentionMode::Static, 2, 1);
    let s = store(&c, 8);
    let cm = CorrelationMatrix::from_values(vec![1.0, 0.9, 0.9, 1.0], 2).unwrap();
    let g = GraphInputs::new(&build_adjacency(&cm, 0.75, None, 0.1), static_weights(&cm, 0.75)).unwrap();
    let h2v = wave(8, 0.1);
    let mut tape = Tape::new();
    let h2 = tape.constant(Tensor::from_vec(&[1, 2, 4], h2v.clone()));
    let o = edge_attention(&mut tape, &s, &c, h2, None, &g).unwrap();
    let wv = s.get("attn.w_v.weight").unwrap().data();
    for i in 0..2 {
        let j = 1 - i;
        for k in 0..4 {
            let want: f64 = (0..4).map(|m| wv[k * 4 + m] * h2v[j * 4 + m]).sum();
            assert!((tape.value(o).data()[i * 4 + k] - want).abs() < 1e-14);
        }
    }
}

#[test]
fn full_reduces_to_unbiased_basic() {
    let (n, t) = (5, 4);
    let full = cfg(AttentionMode::Full, n, t);
    let basic = cfg(AttentionMode::Basic, n, t);
    let mut sf = store(&full, 9);
    let sb = store(&basic, 9);
    for name in ["attn.w_q.weight", "attn.w_k.weight", "attn.w_v.weight", "attn.w_o.weight"] {
        let v = sb.get(name).unwrap().clone();
        *sf.get_mut(name).unwrap() = v;
    }
    for name in ["time.table", "tmod.w_b.weight", "attn.w_k_time.weight", "attn.w_v_time.weight", "dyn.e_node"] {
        set(&mut sf, name, |_| 0.0);
    }
    set(&mut sf, "tmod.w_g.bias", |_| 40.0);
    let mut g = ring_inputs(n);
    g.edge_features = Rc::new(vec![0.0; n * n]);
    let mut g_basic = g.clone();
    g_basic.static_weights = Rc::new(vec![0.0; n * n]);

    let h2v = wave(t * n * 4, 0.7);
    let mut tf = Tape::new();
    let h2 = tf.constant(Tensor::from_vec(&[t, n, 4], h2v.clone()));
    let e = time_embedding(&mut tf, &sf, &full);
    let of = edge_attention(&mut tf, &sf, &full, h2, e, &g).unwrap();
    let mut tb = Tape::new();
    let h2 = tb.constant(Tensor::from_vec(&[t, n, 4], h2v));
    let ob = edge_attention(&mut tb, &sb, &basic, h2, None, &g_basic).unwrap();
    assert!(tf.value(of).max_abs_diff(tb.value(ob)) < 1e-10);
}

#[test]
fn attention_rows_sum_to_one() {
    // identity value/output maps and identical node states: output equals
    // the shared state exactly when every attention row sums to one
    for mode in [AttentionMode::Basic, AttentionMode::Enhanced, AttentionMode::Full] {
        let c = cfg(mode, 4, 3);
        let mut s = store(&c, 10);
        set(&mut s, "attn.w_v.weight", |k| if k % 5 == 0 { 1.0 } else { 0.0 });
        set(&mut s, "attn.w_o.weight", |k| if k % 5 == 0 { 1.0 } else { 0.0 });
        if s.contains("attn.w_edge_v") {
            set(&mut s, "attn.w_edge_v", |_| 0.0);
        }
        if s.contains("attn.w_v_time.weight") {
            set(&mut s, "attn.w_v_time.weight", |_| 0.0);
        }
        let row = [0.3, -1.2, 0.5, 2.0];
        let h2v: Vec<f64> = (0..3 * 4).flat_map(|_| row).collect();
        let mut tape = Tape::new();
        let h2 = tape.constant(Tensor::from_vec(&[3, 4, 4], h2v.clone()));
        let e = time_embedding(&mut tape, &s, &c);
        let o = edge_attention(&mut tape, &s, &c, h2, e, &ring_inputs(4)).unwrap();
        for (a, b) in tape.value(o).data().iter().zip(&h2v) {
            assert!((a - b).abs() < 1e-12, "{mode}");
        }
    }
}

#[test]
fn mode_lattice_time_dependence() {
    let (n, t) = (4, 3);
    let g = ring_inputs(n);
    let h2v = wave(t * n * 4, 0.9);
    for mode in AttentionMode::ALL {
        let mut c = cfg(mode, n, t);
        if mode == AttentionMode::Enhanced {
            c.time_embedding = Some(TimeEmbeddingKind::Learned);
        }
        let mut s = store(&c, 11);
        let run = |s: &ParamStore| {
            let mut tape = Tape::new();
            let h2 = tape.constant(Tensor::from_vec(&[t, n, 4], h2v.clone()));
            let e = time_embedding(&mut tape, s, &c);
            let o = edge_attention(&mut tape, s, &c, h2, e, &g).unwrap();
            tape.value(o).clone()
        };
        let before = run(&s);
        if s.contains("time.table") {
            set(&mut s, "time.table", |k| (k as f64 * 1.3).cos());
        }
        let after = run(&s);
        match mode {
            AttentionMode::Static | AttentionMode::Basic => assert_eq!(before, after),
            _ => assert!(before.max_abs_diff(&after) > 1e-6, "{mode}"),
        }
    }
}

#[test]
fn set_transformer_single_step_and_node_permutation() {
    let c = cfg(AttentionMode::Full, 5, 6);
    let s = store(&c, 12);
    let ov = wave(5 * 6 * 4, 0.4);
    let run = |v: Vec<f64>, t: usize| {
        let mut tape = Tape::new();
        let o = tape.constant(Tensor::from_vec(&[5, t, 4], v));
        let z = set_transformer_aggregate(&mut tape, &s, 2, o);
        tape.value(z).clone()
    };
    let z = run(ov.clone(), 6);
    assert_eq!(z.shape(), &[5, 4]);
    let perm = [3, 0, 4, 1, 2];
    let pv: Vec<f64> = perm.iter().flat_map(|&p| ov[p * 24..(p + 1) * 24].to_vec()).collect();
    let zp = run(pv, 6);
    for (k, &p) in perm.iter().enumerate() {
        for d in 0..4 {
            assert!((zp.at(&[k, d]) - z.at(&[p, d])).abs() < 1e-12);
        }
    }
    let one = run(wave(20, 0.2), 1);
    assert_eq!(one, run(wave(20, 0.2), 1));
    assert!(one.is_finite());
}

#[test]
fn empty_neighborhood_is_rejected() {
    let cm = CorrelationMatrix::from_values(vec![1.0, 0.0, 0.0, 1.0], 2).unwrap();
    let g = build_adjacency(&cm, 0.75, None, 0.0);
    assert!(matches!(
        GraphInputs::new(&g, static_weights(&cm, 0.75)),
        Err(Error::Graph(_))
    ));
}

#[test]
fn mode_names_round_trip() {
    for m in AttentionMode::ALL {
        assert_eq!(m.to_string().parse::<AttentionMode>().unwrap(), m);
    }
    assert!("dynamic".parse::<AttentionMode>().is_err());
}
