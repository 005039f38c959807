//! Layer helpers built from graph primitives.

use rand::Rng;

use super::{Bound, DiffError, Graph, ParamSet, Tensor, Var};

/// Name of the recurrent cell, recorded in checkpoint headers.
pub const RECURRENT_CELL: &str = "gru";

/// `x · W + b` for `x: [m, in]`.
pub fn dense(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<Var, DiffError> {
    let w = p.get(&format!("{name}.w"))?;
    let b = p.get(&format!("{name}.b"))?;
    let xw = g.matmul(x, w)?;
    g.add_row_bias(xw, b)
}

pub fn init_gru(params: &mut ParamSet, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) {
    for gate in ["z", "r", "n"] {
        params.init_dense(&format!("{name}.w{gate}"), input, hidden, rng);
        params.insert(
            format!("{name}.u{gate}"),
            super::params::glorot(&[hidden, hidden], hidden, hidden, rng),
        );
    }
}

/// One gated recurrent step, with the input projections `x·W_* + b_*`
/// already applied (`[1, hidden]` each).
///
/// z = σ(xz + h·Uz), r = σ(xr + h·Ur), n = tanh(xn + r ⊙ (h·Un)),
/// h' = (1 − z) ⊙ n + z ⊙ h
pub fn gru_step(
    g: &mut Graph,
    p: &Bound,
    name: &str,
    proj: [Var; 3],
    h: Var,
) -> Result<Var, DiffError> {
    let [xz, xr, xn] = proj;
    let hz = g.matmul(h, p.get(&format!("{name}.uz"))?)?;
    let hr = g.matmul(h, p.get(&format!("{name}.ur"))?)?;
    let hn = g.matmul(h, p.get(&format!("{name}.un"))?)?;
    let z = g.add(xz, hz)?;
    let z = g.sigmoid(z)?;
    let r = g.add(xr, hr)?;
    let r = g.sigmoid(r)?;
    let rh = g.mul(r, hn)?;
    let n = g.add(xn, rh)?;
    let n = g.tanh(n)?;
    // (1 - z) ⊙ n + z ⊙ h = n + z ⊙ (h - n)
    let diff = g.sub(h, n)?;
    let zd = g.mul(z, diff)?;
    g.add(n, zd)
}

/// Runs the cell over the rows of `xs: [T, input]` from a zero state and
/// returns the final hidden state `[1, hidden]`.
pub fn gru_sequence(g: &mut Graph, p: &Bound, name: &str, xs: Var, hidden: usize) -> Result<Var, DiffError> {
    let steps = g.value(xs).shape()[0];
    let pz = dense(g, p, &format!("{name}.wz"), xs)?;
    let pr = dense(g, p, &format!("{name}.wr"), xs)?;
    let pn = dense(g, p, &format!("{name}.wn"), xs)?;
    let mut h = g.constant(Tensor::zeros(&[1, hidden]))?;
    for t in 0..steps {
        let proj = [g.rows(pz, t, 1)?, g.rows(pr, t, 1)?, g.rows(pn, t, 1)?];
        h = gru_step(g, p, name, proj, h)?;
    }
    Ok(h)
}
