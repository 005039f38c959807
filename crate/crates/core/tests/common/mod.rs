//! Finite-difference cases for every primitive of the tape, shared by the
//! gradient tests and the acceptance report.
#![allow(dead_code)]

use std::rc::Rc;

use heart4d::diffcore::{grad_check, nn, Bound, DiffError, Graph, ParamSet, SparseMatrix, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

pub fn set(entries: Vec<(&str, Tensor)>) -> ParamSet {
    let mut p = ParamSet::new();
    for (n, t) in entries {
        p.insert(n, t);
    }
    p
}

/// Weighted sum with fixed random weights so every output element matters.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var, DiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shape = g.value(y).shape().to_vec();
    let w = rand_tensor(&mut rng, &shape, -1.0, 1.0);
    let p = g.mul_const(y, &w)?;
    g.sum(p)
}

/// Worst relative error per labeled case over `seeds` random draws.
pub struct Suite {
    pub seeds: u64,
    pub results: Vec<(String, f64)>,
}

impl Suite {
    pub fn new(seeds: u64) -> Self {
        Suite { seeds, results: Vec::new() }
    }

    pub fn check(
        &mut self,
        label: &str,
        make: impl Fn(&mut ChaCha8Rng) -> ParamSet,
        f: impl Fn(&mut Graph, &Bound) -> Result<Var, DiffError>,
    ) {
        let mut worst: f64 = 0.0;
        for seed in 0..self.seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = make(&mut rng);
            let report = grad_check(
                &params,
                |g, b| {
                    let y = f(g, b)?;
                    if g.value(y).len() == 1 {
                        Ok(y)
                    } else {
                        project(g, y, seed)
                    }
                },
                STEP,
            )
            .unwrap_or_else(|e| panic!("{label} seed {seed}: {e}"));
            worst = worst.max(report.max_rel_error);
        }
        self.results.push((label.to_string(), worst));
    }

    pub fn failures(&self) -> Vec<&(String, f64)> {
        self.results.iter().filter(|r| !(r.1 < TOL)).collect()
    }
}

/// Every primitive case.
pub fn all_primitives(seeds: u64) -> Suite {
    let mut s = Suite::new(seeds);
    elementwise_binary(&mut s);
    unary_activations(&mut s);
    matmul_bias_and_broadcast(&mut s);
    convolutions_and_pooling(&mut s);
    sparse_graph_product(&mut s);
    structural_ops_and_reductions(&mut s);
    losses(&mut s);
    gated_recurrent_sequence(&mut s);
    random_mlp_matches_finite_differences(&mut s);
    s
}

pub fn elementwise_binary(s: &mut Suite) {
    let mk = |r: &mut ChaCha8Rng| set(vec![("a", rand_tensor(r, &[3, 4], -2.0, 2.0)), ("b", rand_tensor(r, &[3, 4], 0.5, 2.0))]);
    s.check("add", mk, |g, b| g.add(b.get("a")?, b.get("b")?));
    s.check("sub", mk, |g, b| g.sub(b.get("a")?, b.get("b")?));
    s.check("mul", mk, |g, b| g.mul(b.get("a")?, b.get("b")?));
    s.check("div", mk, |g, b| g.div(b.get("a")?, b.get("b")?));
    s.check("scale", mk, |g, b| g.scale(b.get("a")?, -1.7));
    s.check("add_scalar", mk, |g, b| g.add_scalar(b.get("a")?, 0.3));
    s.check("mul_const", mk, |g, b| g.mul_const(b.get("a")?, &Tensor::full(&[3, 4], 0.7)));
}

pub fn unary_activations(s: &mut Suite) {
    let mk = |r: &mut ChaCha8Rng| {
        // keep away from the kinks of relu/abs
        let t = Tensor::from_fn(&[2, 5], |_| {
            let v: f64 = r.gen_range(0.05..2.0);
            if r.gen_bool(0.5) { v } else { -v }
        });
        set(vec![("x", t)])
    };
    s.check("tanh", mk, |g, b| g.tanh(b.get("x")?));
    s.check("sigmoid", mk, |g, b| g.sigmoid(b.get("x")?));
    s.check("relu", mk, |g, b| g.relu(b.get("x")?));
    s.check("softplus", mk, |g, b| g.softplus(b.get("x")?));
    s.check("square", mk, |g, b| g.square(b.get("x")?));
    s.check("abs", mk, |g, b| g.unary(b.get("x")?, heart4d::diffcore::Unary::Abs));
    s.check("exp", mk, |g, b| g.unary(b.get("x")?, heart4d::diffcore::Unary::Exp));
    s.check("neg", mk, |g, b| g.neg(b.get("x")?));
    let positive = |r: &mut ChaCha8Rng| set(vec![("x", rand_tensor(r, &[2, 5], 0.2, 3.0))]);
    s.check("sqrt", positive, |g, b| g.sqrt(b.get("x")?));
}

pub fn matmul_bias_and_broadcast(s: &mut Suite) {
    let mk = |r: &mut ChaCha8Rng| {
        set(vec![
            ("a", rand_tensor(r, &[3, 4], -1.0, 1.0)),
            ("b", rand_tensor(r, &[4, 2], -1.0, 1.0)),
            ("bias", rand_tensor(r, &[2], -1.0, 1.0)),
            ("row", rand_tensor(r, &[1, 2], -1.0, 1.0)),
        ])
    };
    s.check("matmul", mk, |g, b| g.matmul(b.get("a")?, b.get("b")?));
    s.check("add_row_bias", mk, |g, b| {
        let m = g.matmul(b.get("a")?, b.get("b")?)?;
        g.add_row_bias(m, b.get("bias")?)
    });
    s.check("broadcast_rows", mk, |g, b| g.broadcast_rows(b.get("row")?, 3));
}

pub fn convolutions_and_pooling(s: &mut Suite) {
    for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
        let mk = |r: &mut ChaCha8Rng| {
            set(vec![
                ("x", rand_tensor(r, &[2, 2, 5, 6], -1.0, 1.0)),
                ("w", rand_tensor(r, &[3, 2, 3, 3], -1.0, 1.0)),
                ("b", rand_tensor(r, &[3], -1.0, 1.0)),
            ])
        };
        s.check(&format!("conv2d s{stride} p{pad}"), mk, move |g, b| {
            g.conv2d(b.get("x")?, b.get("w")?, b.get("b")?, stride, pad)
        });
    }
    for (stride, pad, opad) in [(1, 0, 0), (2, 1, 1), (2, 0, 0)] {
        let mk = |r: &mut ChaCha8Rng| {
            set(vec![
                ("x", rand_tensor(r, &[2, 3, 3, 4], -1.0, 1.0)),
                ("w", rand_tensor(r, &[3, 2, 3, 3], -1.0, 1.0)),
                ("b", rand_tensor(r, &[2], -1.0, 1.0)),
            ])
        };
        s.check(&format!("conv_transpose2d s{stride} p{pad}"), mk, move |g, b| {
            g.conv_transpose2d(b.get("x")?, b.get("w")?, b.get("b")?, stride, pad, opad)
        });
    }
    let mk = |r: &mut ChaCha8Rng| set(vec![("x", rand_tensor(r, &[1, 2, 4, 6], -1.0, 1.0))]);
    s.check("max_pool2d", mk, |g, b| g.max_pool2d(b.get("x")?, 2));
}

pub fn sparse_graph_product(s: &mut Suite) {
    let adj = Rc::new(SparseMatrix::from_triplets(
        4,
        &[(0, 0, 0.5), (0, 1, 0.3), (1, 0, 0.3), (1, 2, 0.2), (2, 3, 0.9), (3, 1, -0.4), (3, 3, 0.25)],
    ));
    let mk = |r: &mut ChaCha8Rng| set(vec![("x", rand_tensor(r, &[8, 3], -1.0, 1.0))]);
    s.check("spmm", mk, |g, b| g.spmm(&adj, b.get("x")?));
}

pub fn structural_ops_and_reductions(s: &mut Suite) {
    let mk = |r: &mut ChaCha8Rng| {
        set(vec![("a", rand_tensor(r, &[4, 3], -1.0, 1.0)), ("b", rand_tensor(r, &[4, 2], -1.0, 1.0))])
    };
    s.check("concat", mk, |g, b| g.concat(&[b.get("a")?, b.get("b")?, b.get("a")?]));
    s.check("reshape", mk, |g, b| g.reshape(b.get("a")?, &[2, 6]));
    s.check("rows", mk, |g, b| g.rows(b.get("a")?, 1, 2));
    s.check("cols", mk, |g, b| g.cols(b.get("a")?, 1, 2));
    s.check("sum", mk, |g, b| g.sum(b.get("a")?));
    s.check("mean", mk, |g, b| {
        let m = g.mean(b.get("a")?)?;
        g.scale(m, 3.0)
    });
    s.check("block_mean_rows", mk, |g, b| g.block_mean_rows(b.get("a")?, 2));
    let groups = Rc::new(vec![vec![0, 2], vec![1], vec![3, 1, 0]]);
    s.check("group_mean_rows", mk, |g, b| g.group_mean_rows(b.get("a")?, &groups));
}

pub fn losses(s: &mut Suite) {
    let mk = |r: &mut ChaCha8Rng| {
        let a = rand_tensor(r, &[3, 3], -1.0, 1.0);
        // offsets bounded away from zero keep |a - b| differentiable
        let b = Tensor::from_fn(&[3, 3], |i| {
            let off: f64 = r.gen_range(0.05..1.0);
            a.data()[i] + if r.gen_bool(0.5) { off } else { -off }
        });
        set(vec![("a", a), ("b", b), ("logit", rand_tensor(r, &[6], -3.0, 3.0))])
    };
    s.check("mse", mk, |g, b| g.mse(b.get("a")?, b.get("b")?));
    s.check("l1", mk, |g, b| g.l1(b.get("a")?, b.get("b")?));
    s.check("bce", mk, |g, b| {
        let p = g.sigmoid(b.get("logit")?)?;
        g.bce(p, &[1.0, 0.0, 1.0, 0.0, 0.3, 0.9])
    });
}

pub fn gated_recurrent_sequence(s: &mut Suite) {
    let mk = |r: &mut ChaCha8Rng| {
        let mut p = ParamSet::new();
        nn::init_gru(&mut p, "cell", 3, 4, r);
        // nonzero biases so every bias gradient is exercised
        for (name, t) in p.iter_mut() {
            if name.ends_with(".b") {
                t.data_mut().iter_mut().for_each(|v| *v = r.gen_range(-0.5..0.5));
            }
        }
        p.insert("xs", rand_tensor(r, &[5, 3], -1.0, 1.0));
        p
    };
    s.check("gru", mk, |g, b| nn::gru_sequence(g, b, "cell", b.get("xs")?, 4));
}

pub fn random_mlp_matches_finite_differences(s: &mut Suite) {
    // 1 -> 3 -> 1 perceptron: 6 + 4 = 10 parameters
    let mk = |r: &mut ChaCha8Rng| {
        let mut p = ParamSet::new();
        p.init_dense("l1", 1, 3, r);
        p.init_dense("l2", 3, 1, r);
        for (_, t) in p.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.3..0.3));
        }
        p
    };
    s.check("mlp", mk, |g, b| {
        let x = g.input(Tensor::matrix(3, 1, vec![0.3, -1.2, 0.8])?)?;
        let h = nn::dense(g, b, "l1", x)?;
        let h = g.tanh(h)?;
        let y = nn::dense(g, b, "l2", h)?;
        let t = g.input(Tensor::matrix(3, 1, vec![0.2, -0.4, 0.7])?)?;
        g.mse(y, t)
    });
}
