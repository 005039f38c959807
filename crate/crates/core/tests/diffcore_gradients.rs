//! Finite-difference checks for every primitive of the tape, plus the
//! forward/backward examples that have closed-form answers.

mod common;

use common::{rand_tensor, set, STEP};
use heart4d::diffcore::{grad_check, Bound, DiffError, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_primitive_matches_finite_differences() {
    let suite = common::all_primitives(100);
    for (label, worst) in &suite.results {
        println!("{label}: worst relative error over {} seeds = {worst:.2e}", suite.seeds);
    }
    assert!(suite.failures().is_empty(), "{:?}", suite.failures());
    assert!(suite.results.len() >= 30);
}

#[test]
fn linear_model_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = set(vec![("w", rand_tensor(&mut rng, &[4, 1], -1.0, 1.0))]);
    let report = grad_check(
        &params,
        |g, b| {
            let x = g.input(Tensor::matrix(2, 4, vec![1.0, 2.0, 3.0, 4.0, -1.5, 0.5, 0.25, 2.0])?)?;
            let y = g.matmul(x, b.get("w")?)?;
            g.sum(y)
        },
        STEP,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-9, "{}", report.max_rel_error);
}

#[test]
fn dead_branch_has_exact_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = set(vec![("live", rand_tensor(&mut rng, &[3], -1.0, 1.0)), ("dead", rand_tensor(&mut rng, &[3], -1.0, 1.0))]);
    let build = |g: &mut Graph, b: &Bound| {
        let dead = b.get("dead")?;
        let zero = g.scale(dead, 0.0)?;
        let live = g.square(b.get("live")?)?;
        let s = g.add(live, zero)?;
        g.sum(s)
    };
    let report = grad_check(&params, build, STEP).unwrap();
    assert!(report.max_rel_error < 1e-6);
    let mut g = Graph::new();
    let b = g.bind(&params, true).unwrap();
    let l = build(&mut g, &b).unwrap();
    let grads = g.backward(l).unwrap();
    assert!(grads.get("dead").unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn sum_of_weighted_inputs_has_input_gradient() {
    let params = set(vec![("w", Tensor::row(&[0.5, -1.0, 2.0]))]);
    let x = Tensor::row(&[3.0, 4.0, -5.0]);
    let mut g = Graph::new();
    let b = g.bind(&params, true).unwrap();
    let xv = g.input(x.clone()).unwrap();
    let p = g.mul(b.get("w").unwrap(), xv).unwrap();
    let l = g.sum(p).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get("w").unwrap().data(), x.data());
}

#[test]
fn stationary_point_has_zero_gradient() {
    let c = Tensor::row(&[1.5, -2.0]);
    let params = set(vec![("w", c.clone())]);
    let mut g = Graph::new();
    let b = g.bind(&params, true).unwrap();
    let cv = g.constant(c).unwrap();
    let l = g.mse(b.get("w").unwrap(), cv).unwrap();
    let grads = g.backward(l).unwrap();
    assert!(grads.get("w").unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn unused_parameters_get_zero_gradients() {
    let params = set(vec![("used", Tensor::scalar(2.0)), ("unused", Tensor::row(&[1.0, 2.0]))]);
    let mut g = Graph::new();
    let b = g.bind(&params, true).unwrap();
    let l = g.square(b.get("used").unwrap()).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get("used").unwrap().data(), &[4.0]);
    assert_eq!(grads.get("unused").unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let params = set(vec![("w", Tensor::row(&[1.0, 2.0]))]);
    let mut g = Graph::new();
    let b = g.bind(&params, true).unwrap();
    let y = g.tanh(b.get("w").unwrap()).unwrap();
    assert!(matches!(g.backward(y), Err(DiffError::NotScalar(_))));
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params = set(vec![("w", rand_tensor(&mut rng, &[2, 3], -1.0, 1.0))]);
    let losses = |g: &mut Graph, b: &Bound| -> (Var, Var) {
        let w = b.get("w").unwrap();
        let t = g.tanh(w).unwrap();
        let l1 = g.sum(t).unwrap();
        let s = g.square(w).unwrap();
        let l2 = g.mean(s).unwrap();
        (l1, l2)
    };
    let mut g = Graph::new();
    let b = g.bind(&params, true).unwrap();
    let (l1, l2) = losses(&mut g, &b);
    let total = g.add(l1, l2).unwrap();
    let joint = g.backward(total).unwrap();
    let mut sep = g.backward(l1).unwrap();
    sep.accumulate(&g.backward(l2).unwrap());
    let a = joint.get("w").unwrap();
    let s = sep.get("w").unwrap();
    assert!(a.max_abs_diff(s) < 1e-14);
}

#[test]
fn one_by_one_convolution_scales() {
    let params = set(vec![("w", Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap()), ("b", Tensor::zeros(&[1]))]);
    let mut g = Graph::new();
    let b = g.bind(&params, true).unwrap();
    let x = g.input(Tensor::full(&[1, 1, 3, 3], 1.0)).unwrap();
    let y = g.conv2d(x, b.get("w").unwrap(), b.get("b").unwrap(), 1, 0).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 3, 3]);
    assert!(g.value(y).data().iter().all(|&v| v == 2.0));
}

#[test]
fn shape_mismatch_names_the_node() {
    let mut g = Graph::new();
    let a = g.input(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.input(Tensor::zeros(&[3, 3])).unwrap();
    let err = g.add(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("#2") && msg.contains("add"), "{msg}");
}

#[test]
fn non_finite_output_is_an_error() {
    let mut g = Graph::new();
    let a = g.input(Tensor::row(&[1.0, 0.0])).unwrap();
    let b = g.input(Tensor::row(&[0.0, 0.0])).unwrap();
    let err = g.div(a, b).unwrap_err();
    assert!(matches!(err, DiffError::NonFinite { ref node } if node.contains("div")));
}

#[test]
fn frozen_binding_gets_no_gradients() {
    let params = set(vec![("w", Tensor::row(&[1.0, 2.0]))]);
    let mut g = Graph::new();
    let b = g.bind(&params, false).unwrap();
    let s = g.square(b.get("w").unwrap()).unwrap();
    let l = g.sum(s).unwrap();
    assert!(g.backward(l).unwrap().is_empty());
}

#[test]
fn forward_and_gradients_are_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let params = set(vec![
            ("x", rand_tensor(&mut rng, &[1, 1, 6, 6], -1.0, 1.0)),
            ("w", rand_tensor(&mut rng, &[2, 1, 3, 3], -1.0, 1.0)),
            ("b", rand_tensor(&mut rng, &[2], -1.0, 1.0)),
        ]);
        let mut g = Graph::new();
        let b = g.bind(&params, true).unwrap();
        let y = g.conv2d(b.get("x").unwrap(), b.get("w").unwrap(), b.get("b").unwrap(), 2, 1).unwrap();
        let y = g.tanh(y).unwrap();
        let l = g.sum(y).unwrap();
        let out = g.value(l).item().to_bits();
        let grads: Vec<u64> = g.backward(l).unwrap().iter().flat_map(|(_, t)| t.data().to_vec()).map(f64::to_bits).collect();
        (out, grads)
    };
    assert_eq!(run(), run());
}
