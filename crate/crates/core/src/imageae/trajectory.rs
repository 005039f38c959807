use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::diffcore::nn::dense;
use crate::diffcore::{Bound, DiffError, Graph, Tensor, Var};

/// Circle radius, starting phase and static code of a latent trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCode {
    pub r: f64,
    pub theta0: f64,
    pub s: Vec<f64>,
}

impl TrajectoryCode {
    pub fn latent_dim(&self) -> usize {
        self.s.len() + 2
    }

    /// `(r, cos θ0, sin θ0, s)`, the continuous form used by the mapping.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = vec![self.r, self.theta0.cos(), self.theta0.sin()];
        v.extend_from_slice(&self.s);
        v
    }

    /// Inverse of [`to_vector`](Self::to_vector) for any vector of length
    /// `d + 1`: the phase pair is normalized and a negative radius is folded
    /// into a half-turn of phase.
    pub fn from_vector(v: &[f64]) -> TrajectoryCode {
        assert!(v.len() >= 3, "trajectory vector needs at least 3 entries");
        let sign = if v[0] < 0.0 { -1.0 } else { 1.0 };
        let mut theta0 = (sign * v[2]).atan2(sign * v[1]);
        if theta0 >= PI {
            theta0 -= 2.0 * PI;
        }
        TrajectoryCode { r: v[0].abs().max(1e-12), theta0, s: v[3..].to_vec() }
    }
}

/// Base angle `2π (t mod N) / N` of frame `t`.
pub fn frame_angle(t: usize, n: usize) -> f64 {
    2.0 * PI * (t % n) as f64 / n as f64
}

/// `z_t = (r cos ψ_t, r sin ψ_t, s)` with `ψ_t = 2πt/N + θ0`.
pub fn latent_point(code: &TrajectoryCode, t: usize, n: usize) -> Vec<f64> {
    let psi = frame_angle(t, n) + code.theta0;
    let mut z = vec![code.r * psi.cos(), code.r * psi.sin()];
    z.extend_from_slice(&code.s);
    z
}

/// A trajectory code inside a graph; every part is `[1, k]`.
#[derive(Debug, Clone, Copy)]
pub struct CodeVars {
    pub r: Var,
    pub cos: Var,
    pub sin: Var,
    pub s: Var,
}

fn unit_pair(g: &mut Graph, a: Var, b: Var) -> Result<(Var, Var), DiffError> {
    let a2 = g.square(a)?;
    let b2 = g.square(b)?;
    let n2 = g.add(a2, b2)?;
    let n2 = g.add_scalar(n2, 1e-12)?;
    let n = g.sqrt(n2)?;
    Ok((g.div(a, n)?, g.div(b, n)?))
}

/// Dense head emitting `d + 1` values: softplus radius, a phase pair
/// normalized onto the unit circle (the phase is its atan2), static code.
pub fn trajectory_head(g: &mut Graph, p: &Bound, name: &str, features: Var, latent: usize) -> Result<CodeVars, DiffError> {
    let h = dense(g, p, name, features)?;
    let raw = g.cols(h, 0, 1)?;
    let r = g.softplus(raw)?;
    let a = g.cols(h, 1, 1)?;
    let b = g.cols(h, 2, 1)?;
    let (cos, sin) = unit_pair(g, a, b)?;
    let s = g.cols(h, 3, latent - 2)?;
    Ok(CodeVars { r, cos, sin, s })
}

/// Splits a `[1, d + 1]` vector `(r, c, s_, s)`, renormalizing the phase pair.
pub fn code_from_vector(g: &mut Graph, v: Var) -> Result<CodeVars, DiffError> {
    let width = g.value(v).shape()[1];
    let r = g.cols(v, 0, 1)?;
    let a = g.cols(v, 1, 1)?;
    let b = g.cols(v, 2, 1)?;
    let (cos, sin) = unit_pair(g, a, b)?;
    let s = g.cols(v, 3, width - 3)?;
    Ok(CodeVars { r, cos, sin, s })
}

pub fn code_vector(g: &mut Graph, c: &CodeVars) -> Result<Var, DiffError> {
    g.concat(&[c.r, c.cos, c.sin, c.s])
}

/// Latent points `[T, d]` at the given base angles.
pub fn latent_trajectory(g: &mut Graph, c: &CodeVars, angles: &[f64]) -> Result<Var, DiffError> {
    let t = angles.len();
    let uc = g.mul(c.r, c.cos)?;
    let us = g.mul(c.r, c.sin)?;
    let u = g.concat(&[uc, us])?;
    let mut rot = vec![0.0; 4 * t];
    for (k, a) in angles.iter().enumerate() {
        let (sa, ca) = a.sin_cos();
        rot[2 * k] = ca;
        rot[2 * k + 1] = sa;
        rot[2 * t + 2 * k] = -sa;
        rot[2 * t + 2 * k + 1] = ca;
    }
    let rot = g.constant(Tensor::new(vec![2, 2 * t], rot)?)?;
    let circle = g.matmul(u, rot)?;
    let circle = g.reshape(circle, &[t, 2])?;
    let s = g.broadcast_rows(c.s, t)?;
    g.concat(&[circle, s])
}

/// `κ (‖s‖² + (r − 1)²)`.
pub fn regularizer(g: &mut Graph, c: &CodeVars, kappa: f64) -> Result<Var, DiffError> {
    let s2 = g.square(c.s)?;
    let s2 = g.sum(s2)?;
    let r1 = g.add_scalar(c.r, -1.0)?;
    let r1 = g.square(r1)?;
    let r1 = g.sum(r1)?;
    let total = g.add(s2, r1)?;
    g.scale(total, kappa)
}

pub fn read_code(g: &Graph, c: &CodeVars) -> TrajectoryCode {
    let r = g.value(c.r).item();
    let theta0 = g.value(c.sin).item().atan2(g.value(c.cos).item());
    TrajectoryCode { r, theta0, s: g.value(c.s).data().to_vec() }
}

/// Constant `[1, d+1]` input holding `code` in vector form.
pub fn code_input(g: &mut Graph, code: &TrajectoryCode) -> Result<CodeVars, DiffError> {
    let v = code.to_vector();
    let v = g.input(Tensor::row(&v))?;
    code_from_vector(g, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code() -> TrajectoryCode {
        TrajectoryCode { r: 1.7, theta0: 0.4, s: vec![0.1, -0.2, 0.3] }
    }

    #[test]
    fn first_point_of_unit_code() {
        let c = TrajectoryCode { r: 1.0, theta0: 0.0, s: vec![0.0] };
        let z = latent_point(&c, 0, 8);
        assert_eq!((z[0], z[1]), (1.0, 0.0));
    }

    #[test]
    fn periodic_and_on_circle() {
        let c = code();
        for t in 0..16 {
            assert_eq!(latent_point(&c, t, 16), latent_point(&c, t + 16, 16));
            let z = latent_point(&c, t, 16);
            assert!((z[0].hypot(z[1]) - c.r).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_trajectory_matches_closed_form() {
        let c = code();
        let mut g = Graph::new();
        let vars = code_input(&mut g, &c).unwrap();
        let angles: Vec<f64> = (0..5).map(|t| frame_angle(t, 5)).collect();
        let z = latent_trajectory(&mut g, &vars, &angles).unwrap();
        assert_eq!(g.value(z).shape(), &[5, 5]);
        for t in 0..5 {
            let want = latent_point(&c, t, 5);
            let got = &g.value(z).data()[t * 5..t * 5 + 5];
            for (a, b) in want.iter().zip(got) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vector_round_trip() {
        let c = code();
        let back = TrajectoryCode::from_vector(&c.to_vector());
        assert!((back.r - c.r).abs() < 1e-15 && (back.theta0 - c.theta0).abs() < 1e-15);
        let flipped = TrajectoryCode::from_vector(&[-2.0, 1.0, 0.0]);
        assert_eq!(flipped.r, 2.0);
        assert!((flipped.theta0.abs() - PI).abs() < 1e-15);
    }

    #[test]
    fn regularizer_vanishes_at_unit_radius() {
        let mut g = Graph::new();
        let vars = code_input(&mut g, &TrajectoryCode { r: 1.0, theta0: 0.3, s: vec![0.0; 4] }).unwrap();
        let reg = regularizer(&mut g, &vars, 1.0).unwrap();
        assert!(g.value(reg).item().abs() < 1e-15);
    }
}
