use std::collections::BTreeMap;

use super::{DiffError, Gradients, ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

/// First/second moment accumulators, one pair per parameter tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.first.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.second.get(name)
    }
}

/// One bias-corrected Adam update of every tensor in `params`. Parameters
/// without an entry in `grads` are treated as having zero gradient.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut OptimizerState,
    cfg: &AdamConfig,
) -> Result<(), DiffError> {
    if cfg.lr <= 0.0 || !cfg.lr.is_finite() {
        return Err(DiffError::BadShape(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    for (name, g) in grads.iter() {
        let p = params.get(name)?;
        if p.shape() != g.shape() {
            return Err(DiffError::Shape {
                node: format!("adam[{name}]"),
                detail: format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let m = state.first.entry(name.to_string()).or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state.second.entry(name.to_string()).or_insert_with(|| Tensor::zeros(p.shape()));
        if m.shape() != p.shape() || v.shape() != p.shape() {
            return Err(DiffError::Shape {
                node: format!("adam[{name}]"),
                detail: format!("accumulator {:?} vs param {:?}", m.shape(), p.shape()),
            });
        }
        let g = grads.get(name);
        for i in 0..p.len() {
            let gi = g.map_or(0.0, |g| g.data()[i]);
            let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let update = cfg.lr * (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
            p.data_mut()[i] -= update;
        }
    }
    Ok(())
}
