mod common;

use ftscomm::neuralcore::{conv1d_forward, conv1d_transpose_forward, conv_out_len, GradCheckOptions, Tensor};
use ftscomm::pipeline::run_gradcheck;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_primitive_matches_central_differences() {
    let reports = common::primitive_reports(&GradCheckOptions::default()).unwrap();
    assert!(reports.len() >= 25);
    for r in &reports {
        assert!(r.pass, "{}: {:?}", r.fragment, r.failing());
    }
}

#[test]
fn composed_model_matches_central_differences() {
    let s = run_gradcheck(&GradCheckOptions {
        coords_per_param: 4,
        ..Default::default()
    })
    .unwrap();
    assert!(s.pass, "{:?}", s.failing);
    assert!(s.max_rel_error <= 1e-4);
}

#[test]
fn transposed_conv_is_the_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (l, k, stride) in [(89, 3, 3), (89, 45, 9), (29, 3, 3), (20, 4, 2)] {
        let lo = conv_out_len(l, k, stride).unwrap();
        let pad = l - ((lo - 1) * stride + k);
        let x = common::randn(&mut rng, &[2, 3, l]);
        let y = common::randn(&mut rng, &[2, 5, lo]);
        let w = common::randn(&mut rng, &[5, 3, k]);
        let conv = conv1d_forward(&x, &w, &Tensor::zeros(&[5]), stride);
        let back = conv1d_transpose_forward(&y, &w, &Tensor::zeros(&[3]), stride, pad);
        let (lhs, rhs) = (conv.dot(&y), x.dot(&back));
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}
