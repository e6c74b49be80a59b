//! Forward-op semantics and error paths for the tensor engine.

use dmt_core::{DmtError, Graph, Tensor};

#[test]
fn matmul_identity_case() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let i = g.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let m = g.matmul(a, i, false, false).unwrap();
    assert_eq!(g.value(m).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn relu_definition() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn l2_normalize_three_four_five() {
    // hand oracle: norm of [3,4] is 5
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
    let n = g.l2_normalize(x, 0).unwrap();
    let got = g.value(n).data();
    assert!((got[0] - 0.6).abs() < 1e-15);
    assert!((got[1] - 0.8).abs() < 1e-15);
}

#[test]
fn backward_of_sum_is_all_ones() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![2, 3], vec![5.0, -1.0, 2.0, 0.0, 3.0, 9.0]).unwrap());
    let s = g.sum(x, None).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0; 6]);
}

#[test]
fn backward_of_mean_square_is_x_over_half_n() {
    // loss = mean(x^2), x = [1,2]  =>  grad = 2x/n = x
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let sq = g.mul(x, x).unwrap();
    let loss = g.mean(sq, None).unwrap();
    g.backward(loss).unwrap();
    let got = g.grad(x).unwrap().data();
    assert!((got[0] - 1.0).abs() < 1e-15);
    assert!((got[1] - 2.0).abs() < 1e-15);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::zeros(&[2, 2]));
    let r = g.relu(x).unwrap();
    let err = g.backward(r).unwrap_err();
    assert!(matches!(err, DmtError::Domain { op: "backward", .. }));
}

#[test]
fn repeated_backward_without_reset_is_an_error() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(2.0));
    let s = g.sum(x, None).unwrap();
    g.backward(s).unwrap();
    assert!(g.backward(s).is_err());
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[4, 5]));
    let err = g.matmul(a, b, false, false).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("matmul"), "{msg}");
    assert!(msg.contains("[2, 3]"), "{msg}");
    assert!(msg.contains("[4, 5]"), "{msg}");
}

#[test]
fn log_rejects_non_finite_and_non_positive() {
    let mut g = Graph::new();
    let bad = g.constant(Tensor::new(vec![2], vec![1.0, f64::NAN]).unwrap());
    assert!(matches!(g.log(bad), Err(DmtError::NonFinite { op: "log" })));
    let neg = g.constant(Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
    assert!(g.log(neg).is_err());
}

#[test]
fn softmax_rejects_non_finite_input() {
    let mut g = Graph::new();
    let bad = g.constant(Tensor::new(vec![2], vec![f64::INFINITY, 0.0]).unwrap());
    assert!(matches!(
        g.softmax(bad, 0),
        Err(DmtError::NonFinite { op: "softmax" })
    ));
}

#[test]
fn softmax_rows_sum_to_one_with_large_logits() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![2, 3], vec![500.0, 0.0, -500.0, 3.0, 3.0, 3.0]).unwrap());
    let s = g.softmax(x, 1).unwrap();
    let d = g.value(s).data();
    for row in d.chunks(3) {
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn forward_ops_keep_finite_inputs_finite() {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..24).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let x = g.constant(Tensor::new(vec![2, 3, 4], data).unwrap());
        let e = g.exp(x).unwrap();
        let sm = g.softmax(x, 2).unwrap();
        let lsm = g.log_softmax(x, 1).unwrap();
        let n = g.l2_normalize(x, 0).unwrap();
        for id in [e, sm, lsm, n] {
            assert!(g.value(id).is_finite());
        }
    }
}

#[test]
fn determinism_same_inputs_bit_identical() {
    let run = || {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![2, 2], vec![0.3, -1.7, 2.2, 0.9]).unwrap());
        let w = g.leaf(Tensor::new(vec![2, 2], vec![1.1, 0.2, -0.4, 0.8]).unwrap());
        let m = g.matmul(x, w, false, false).unwrap();
        let s = g.softmax(m, 1).unwrap();
        let l = g.sum(s, None).unwrap();
        g.backward(l).unwrap();
        (
            g.value(l).data().to_vec(),
            g.grad(x).unwrap().data().to_vec(),
        )
    };
    let (v1, g1) = run();
    let (v2, g2) = run();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&v1), bits(&v2));
    assert_eq!(bits(&g1), bits(&g2));
}
