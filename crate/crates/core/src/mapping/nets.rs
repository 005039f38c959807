use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::nn::dense;
use crate::diffcore::{Bound, DiffError, Graph, ParamSet, Var};

/// Per-coordinate affine standardization of code vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-6;

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Standardizer {
        assert!(!rows.is_empty(), "cannot standardize an empty set");
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|k| (rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt().max(STD_FLOOR))
            .collect();
        Standardizer { mean, std }
    }

    pub fn identity(dim: usize) -> Standardizer {
        Standardizer { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn invert(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| x * s + m).collect()
    }

    /// Standardized rows stacked into `[rows, dim]` data.
    pub fn apply_rows(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().flat_map(|r| self.apply(r)).collect()
    }
}

/// Output nonlinearity of an [`mlp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Linear,
    Sigmoid,
}

pub fn init_mlp(p: &mut ParamSet, prefix: &str, input: usize, width: usize, output: usize, rng: &mut impl Rng) {
    p.init_dense(&format!("{prefix}.l0"), input, width, rng);
    p.init_dense(&format!("{prefix}.l1"), width, width, rng);
    p.init_dense(&format!("{prefix}.l2"), width, output, rng);
}

/// Three dense layers, tanh between them.
pub fn mlp(g: &mut Graph, p: &Bound, prefix: &str, x: Var, head: Head) -> Result<Var, DiffError> {
    let h = dense(g, p, &format!("{prefix}.l0"), x)?;
    let h = g.tanh(h)?;
    let h = dense(g, p, &format!("{prefix}.l1"), h)?;
    let h = g.tanh(h)?;
    let out = dense(g, p, &format!("{prefix}.l2"), h)?;
    match head {
        Head::Linear => Ok(out),
        Head::Sigmoid => g.sigmoid(out),
    }
}

/// The five networks the translation losses are written against. Inputs
/// and outputs are `[B, d + 1]` standardized code vectors; discriminators
/// return `[B, 1]` probabilities and the EF predictor `[B, k]` fractions.
pub trait Networks {
    /// Image code to mesh code.
    fn g_m(&self, g: &mut Graph, x: Var) -> Result<Var, DiffError>;
    /// Mesh code to image code.
    fn g_i(&self, g: &mut Graph, x: Var) -> Result<Var, DiffError>;
    fn d_m(&self, g: &mut Graph, x: Var) -> Result<Var, DiffError>;
    fn d_i(&self, g: &mut Graph, x: Var) -> Result<Var, DiffError>;
    fn n_ef(&self, g: &mut Graph, x: Var) -> Result<Var, DiffError>;
}

/// Trained networks bound into one graph.
pub struct BoundNetworks<'a> {
    pub mapping: &'a Bound,
    pub ef: &'a Bound,
}

impl Networks for BoundNetworks<'_> {
    fn g_m(&self, g: &mut Graph, x: Var) -> Result<Var, DiffError> {
        mlp(g, self.mapping, "gen.m", x, Head::Linear)
    }

    fn g_i(&self, g: &mut Graph, x: Var) -> Result<Var, DiffError> {
        mlp(g, self.mapping, "gen.i", x, Head::Linear)
    }

    fn d_m(&self, g: &mut Graph, x: Var) -> Result<Var, DiffError> {
        mlp(g, self.mapping, "disc.m", x, Head::Sigmoid)
    }

    fn d_i(&self, g: &mut Graph, x: Var) -> Result<Var, DiffError> {
        mlp(g, self.mapping, "disc.i", x, Head::Sigmoid)
    }

    fn n_ef(&self, g: &mut Graph, x: Var) -> Result<Var, DiffError> {
        mlp(g, self.ef, "ef", x, Head::Sigmoid)
    }
}
