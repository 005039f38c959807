use super::nets::Networks;
use crate::diffcore::{DiffError, Graph, Tensor, Var};

/// Generator and discriminator terms for both domains.
#[derive(Debug, Clone, Copy)]
pub struct AdversarialLosses {
    /// Non-saturating generator loss against `D_M`: BCE of `D_M(G_M(x_i))` towards 1.
    pub gen_m: Var,
    /// Same for `D_I(G_I(x_m))`.
    pub gen_i: Var,
    /// Mean of the real (label 1) and generated (label 0) BCE terms of `D_M`.
    pub disc_m: Var,
    pub disc_i: Var,
}

fn rows(g: &Graph, x: Var) -> usize {
    g.value(x).shape()[0]
}

/// `x_i`, `x_m`: `[B, d + 1]` standardized image and mesh code batches.
pub fn adversarial_losses(g: &mut Graph, nets: &dyn Networks, x_i: Var, x_m: Var) -> Result<AdversarialLosses, DiffError> {
    let (bi, bm) = (rows(g, x_i), rows(g, x_m));
    let fake_m = nets.g_m(g, x_i)?;
    let fake_i = nets.g_i(g, x_m)?;

    let p_real_m = nets.d_m(g, x_m)?;
    let p_fake_m = nets.d_m(g, fake_m)?;
    let p_real_i = nets.d_i(g, x_i)?;
    let p_fake_i = nets.d_i(g, fake_i)?;

    let disc = |g: &mut Graph, real: Var, fake: Var, nr: usize, nf: usize| -> Result<Var, DiffError> {
        let a = g.bce(real, &vec![1.0; nr])?;
        let b = g.bce(fake, &vec![0.0; nf])?;
        let s = g.add(a, b)?;
        g.scale(s, 0.5)
    };
    let disc_m = disc(g, p_real_m, p_fake_m, bm, bi)?;
    let disc_i = disc(g, p_real_i, p_fake_i, bi, bm)?;
    let gen_m = g.bce(p_fake_m, &vec![1.0; bi])?;
    let gen_i = g.bce(p_fake_i, &vec![1.0; bm])?;
    Ok(AdversarialLosses { gen_m, gen_i, disc_m, disc_i })
}

/// `mean|G_I(G_M(x_i)) − x_i| + mean|G_M(G_I(x_m)) − x_m|`.
pub fn cycle_loss(g: &mut Graph, nets: &dyn Networks, x_i: Var, x_m: Var) -> Result<Var, DiffError> {
    let m = nets.g_m(g, x_i)?;
    let back_i = nets.g_i(g, m)?;
    let i = nets.g_i(g, x_m)?;
    let back_m = nets.g_m(g, i)?;
    let a = g.l1(back_i, x_i)?;
    let b = g.l1(back_m, x_m)?;
    g.add(a, b)
}

/// `mean|N_EF(G_M(x_i)) − ef_i| + mean|N_EF(G_M(G_I(x_m))) − ef_m|`; labels
/// are `[B, k]` for `k` predicted structures.
pub fn ef_loss(
    g: &mut Graph,
    nets: &dyn Networks,
    x_i: Var,
    ef_i: &Tensor,
    x_m: Var,
    ef_m: &Tensor,
) -> Result<Var, DiffError> {
    let m = nets.g_m(g, x_i)?;
    let pred_i = nets.n_ef(g, m)?;
    let i = nets.g_i(g, x_m)?;
    let mm = nets.g_m(g, i)?;
    let pred_m = nets.n_ef(g, mm)?;
    let li = g.constant(ef_i.clone())?;
    let lm = g.constant(ef_m.clone())?;
    let a = g.l1(pred_i, li)?;
    let b = g.l1(pred_m, lm)?;
    g.add(a, b)
}

/// Terms of the joint generator objective and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorTerms {
    pub adv_m: Var,
    pub adv_i: Var,
    pub cycle: Var,
    pub ef: Var,
    pub total: Var,
}

/// `β1 L_M_adv + β2 L_I_adv + β3 L_cycle + β4 L_EF`.
#[allow(clippy::too_many_arguments)]
pub fn generator_objective(
    g: &mut Graph,
    nets: &dyn Networks,
    beta: [f64; 4],
    x_i: Var,
    ef_i: &Tensor,
    x_m: Var,
    ef_m: &Tensor,
) -> Result<GeneratorTerms, DiffError> {
    let adv = adversarial_losses(g, nets, x_i, x_m)?;
    let cycle = cycle_loss(g, nets, x_i, x_m)?;
    let ef = ef_loss(g, nets, x_i, ef_i, x_m, ef_m)?;
    let mut total = g.scale(adv.gen_m, beta[0])?;
    for (term, w) in [(adv.gen_i, beta[1]), (cycle, beta[2]), (ef, beta[3])] {
        let t = g.scale(term, w)?;
        total = g.add(total, t)?;
    }
    Ok(GeneratorTerms { adv_m: adv.gen_m, adv_i: adv.gen_i, cycle, ef, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check_with_floor, Bound, ParamSet, NETWORK_FLOOR};
    use crate::mapping::nets::{init_mlp, BoundNetworks};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Closed-form stand-ins: generators shift by constants, discriminators
    /// and the EF predictor return constants.
    struct Stub {
        shift_m: f64,
        shift_i: f64,
        d_real: f64,
        d_value: Option<f64>,
        ef: f64,
    }

    impl Stub {
        fn constant(g: &mut Graph, x: Var, cols: usize, v: f64) -> Result<Var, DiffError> {
            let rows = g.value(x).shape()[0];
            g.constant(Tensor::full(&[rows, cols], v))
        }

        /// Perfect discriminator: `d_real` on real rows (first coordinate
        /// below 100), its complement on shifted ones.
        fn disc(&self, g: &mut Graph, x: Var) -> Result<Var, DiffError> {
            if let Some(v) = self.d_value {
                return Self::constant(g, x, 1, v);
            }
            let data: Vec<f64> = g
                .value(x)
                .data()
                .chunks(g.value(x).shape()[1])
                .map(|r| if r[0] < 100.0 { self.d_real } else { 1.0 - self.d_real })
                .collect();
            g.constant(Tensor::new(vec![data.len(), 1], data)?)
        }
    }

    impl Networks for Stub {
        fn g_m(&self, g: &mut Graph, x: Var) -> Result<Var, DiffError> {
            g.add_scalar(x, self.shift_m)
        }
        fn g_i(&self, g: &mut Graph, x: Var) -> Result<Var, DiffError> {
            g.add_scalar(x, self.shift_i)
        }
        fn d_m(&self, g: &mut Graph, x: Var) -> Result<Var, DiffError> {
            self.disc(g, x)
        }
        fn d_i(&self, g: &mut Graph, x: Var) -> Result<Var, DiffError> {
            self.disc(g, x)
        }
        fn n_ef(&self, g: &mut Graph, x: Var) -> Result<Var, DiffError> {
            Self::constant(g, x, 1, self.ef)
        }
    }

    fn stub() -> Stub {
        Stub { shift_m: 0.0, shift_i: 0.0, d_real: 0.5, d_value: Some(0.5), ef: 0.6 }
    }

    fn batch(g: &mut Graph, seed: u64, rows: usize) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::from_fn(&[rows, 5], |_| rng.gen_range(-1.0..1.0));
        g.input(t).unwrap()
    }

    #[test]
    fn undecided_discriminator_costs_ln2() {
        let mut g = Graph::new();
        let (xi, xm) = (batch(&mut g, 1, 4), batch(&mut g, 2, 3));
        let adv = adversarial_losses(&mut g, &stub(), xi, xm).unwrap();
        for v in [adv.disc_m, adv.disc_i, adv.gen_m, adv.gen_i] {
            assert!((g.value(v).item() - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_discriminator() {
        let mut g = Graph::new();
        let (xi, xm) = (batch(&mut g, 1, 4), batch(&mut g, 2, 3));
        let nets = Stub { shift_m: 1000.0, shift_i: 1000.0, d_real: 1.0, d_value: None, ef: 0.5 };
        let adv = adversarial_losses(&mut g, &nets, xi, xm).unwrap();
        assert!(g.value(adv.disc_m).item() < 1e-6 && g.value(adv.disc_i).item() < 1e-6);
        assert!(g.value(adv.gen_m).item() > 10.0 && g.value(adv.gen_i).item() > 10.0);
    }

    #[test]
    fn cycle_of_inverse_pairs_vanishes() {
        let mut g = Graph::new();
        let (xi, xm) = (batch(&mut g, 3, 4), batch(&mut g, 4, 4));
        let l = cycle_loss(&mut g, &stub(), xi, xm).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let shifted = Stub { shift_m: 0.75, shift_i: -0.75, ..stub() };
        let l = cycle_loss(&mut g, &shifted, xi, xm).unwrap();
        assert!(g.value(l).item() < 1e-15);
    }

    #[test]
    fn cycle_of_constant_shift() {
        // G_I∘G_M = G_M∘G_I = +0.3 in every coordinate
        let mut g = Graph::new();
        let (xi, xm) = (batch(&mut g, 5, 4), batch(&mut g, 6, 2));
        let nets = Stub { shift_m: 0.1, shift_i: 0.2, ..stub() };
        let l = cycle_loss(&mut g, &nets, xi, xm).unwrap();
        assert!((g.value(l).item() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn ef_loss_arithmetic() {
        let mut g = Graph::new();
        let (xi, xm) = (batch(&mut g, 7, 3), batch(&mut g, 8, 3));
        let labels = Tensor::full(&[3, 1], 0.6);
        let l = ef_loss(&mut g, &stub(), xi, &labels, xm, &labels).unwrap();
        assert!(g.value(l).item().abs() < 1e-15);
        let l = ef_loss(&mut g, &Stub { ef: 0.5, ..stub() }, xi, &labels, xm, &labels).unwrap();
        assert!((g.value(l).item() - 0.2).abs() < 1e-12);
    }

    fn nets_params(seed: u64) -> (ParamSet, ParamSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = ParamSet::new();
        for net in ["gen.m", "gen.i"] {
            init_mlp(&mut m, net, 5, 6, 5, &mut rng);
        }
        for net in ["disc.m", "disc.i"] {
            init_mlp(&mut m, net, 5, 6, 1, &mut rng);
        }
        let mut e = ParamSet::new();
        init_mlp(&mut e, "ef", 5, 6, 1, &mut rng);
        (m, e)
    }

    fn labels(seed: u64, rows: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[rows, 1], |_| rng.gen_range(0.2..0.8))
    }

    #[test]
    fn frozen_ef_predictor_gets_no_gradient() {
        let (m, e) = nets_params(0);
        let mut g = Graph::new();
        let mb = g.bind(&m, true).unwrap();
        let eb = g.bind(&e, false).unwrap();
        let nets = BoundNetworks { mapping: &mb, ef: &eb };
        let (xi, xm) = (batch(&mut g, 1, 4), batch(&mut g, 2, 4));
        let l = ef_loss(&mut g, &nets, xi, &labels(1, 4), xm, &labels(2, 4)).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.iter().all(|(n, _)| !n.starts_with("ef.")));
        assert!(grads.get("gen.m.l0.w").unwrap().data().iter().any(|v| *v != 0.0));
    }

    fn objective_grads(m: &ParamSet, e: &ParamSet, beta: [f64; 4]) -> crate::diffcore::Gradients {
        let mut g = Graph::new();
        let mb = g.bind(m, true).unwrap();
        let eb = g.bind(e, false).unwrap();
        let nets = BoundNetworks { mapping: &mb, ef: &eb };
        let (xi, xm) = (batch(&mut g, 11, 4), batch(&mut g, 12, 4));
        let t = generator_objective(&mut g, &nets, beta, xi, &labels(3, 4), xm, &labels(4, 4)).unwrap();
        g.backward(t.total).unwrap()
    }

    #[test]
    fn doubling_cycle_weight_doubles_its_gradient() {
        let (m, e) = nets_params(1);
        let base = objective_grads(&m, &e, [1.0, 1.0, 10.0, 10.0]);
        let doubled = objective_grads(&m, &e, [1.0, 1.0, 20.0, 10.0]);
        let zero = objective_grads(&m, &e, [1.0, 1.0, 0.0, 10.0]);
        for (name, b) in base.iter() {
            let d = doubled.get(name).unwrap();
            let z = zero.get(name).unwrap();
            for ((b, d), z) in b.data().iter().zip(d.data()).zip(z.data()) {
                // cycle share at β3 = 10 is b − z; at 20 it must be twice that
                assert!(((d - z) - 2.0 * (b - z)).abs() < 1e-9 * (1.0 + b.abs()), "{name}");
            }
        }
    }

    #[test]
    fn zero_weights_leave_adversarial_terms_only() {
        let (m, e) = nets_params(2);
        let got = objective_grads(&m, &e, [1.0, 1.0, 0.0, 0.0]);
        let mut g = Graph::new();
        let mb = g.bind(&m, true).unwrap();
        let eb = g.bind(&e, false).unwrap();
        let nets = BoundNetworks { mapping: &mb, ef: &eb };
        let (xi, xm) = (batch(&mut g, 11, 4), batch(&mut g, 12, 4));
        let adv = adversarial_losses(&mut g, &nets, xi, xm).unwrap();
        let sum = g.add(adv.gen_m, adv.gen_i).unwrap();
        let want = g.backward(sum).unwrap();
        for (name, w) in want.iter() {
            assert!(got.get(name).unwrap().max_abs_diff(w) < 1e-12, "{name}");
        }
    }

    fn check(seed: u64, f: impl Fn(&mut Graph, &BoundNetworks, Var, Var) -> Result<Var, DiffError>) {
        let (m, e) = nets_params(seed);
        let loss = |g: &mut Graph, p: &Bound| {
            let eb = g.bind(&e, false)?;
            let nets = BoundNetworks { mapping: p, ef: &eb };
            let (xi, xm) = (batch(g, seed + 100, 3), batch(g, seed + 200, 3));
            f(g, &nets, xi, xm)
        };
        let rep = grad_check_with_floor(&m, loss, 1e-5, NETWORK_FLOOR).unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        for seed in 0..3 {
            check(seed, |g, n, xi, xm| {
                let a = adversarial_losses(g, n, xi, xm)?;
                let d = g.add(a.disc_m, a.disc_i)?;
                let s = g.add(a.gen_m, a.gen_i)?;
                g.add(d, s)
            });
            check(seed, |g, n, xi, xm| cycle_loss(g, n, xi, xm));
            check(seed, |g, n, xi, xm| ef_loss(g, n, xi, &labels(seed, 3), xm, &labels(seed + 1, 3)));
        }
    }
}
