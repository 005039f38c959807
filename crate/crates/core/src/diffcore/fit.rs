use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, AdamConfig, Bound, DiffError, Gradients, Graph, OptimizerState, ParamSet, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
#[error("epoch {epoch}: {source}")]
pub struct FitError {
    pub epoch: usize,
    #[source]
    pub source: DiffError,
}

/// Minibatch Adam over `n` samples in seeded shuffled order. The batch
/// gradient is the mean of per-sample gradients, each from its own graph.
/// Returns the mean per-sample loss of every epoch.
pub fn fit<F>(params: &mut ParamSet, n: usize, cfg: &FitConfig, sample_loss: F) -> Result<Vec<f64>, FitError>
where
    F: Fn(&mut Graph, &Bound, usize) -> Result<Var, DiffError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = OptimizerState::new();
    let adam = AdamConfig::with_lr(cfg.lr);
    let batch = cfg.batch_size.max(1);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let wrap = |source| FitError { epoch, source };
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let mut grads = Gradients::default();
            for &i in chunk {
                let mut g = Graph::new();
                let bound = g.bind(params, true).map_err(wrap)?;
                let loss = sample_loss(&mut g, &bound, i).map_err(wrap)?;
                total += g.value(loss).item();
                grads.accumulate(&g.backward(loss).map_err(wrap)?);
            }
            grads.scale(1.0 / chunk.len() as f64);
            adam_step(params, &grads, &mut state, &adam).map_err(wrap)?;
        }
        let mean = total / n.max(1) as f64;
        if !mean.is_finite() {
            return Err(wrap(DiffError::NonFinite { node: "epoch loss".into() }));
        }
        history.push(mean);
    }
    Ok(history)
}

/// Mean loss over samples without updating anything.
pub fn mean_loss<F>(params: &ParamSet, n: usize, sample_loss: F) -> Result<f64, DiffError>
where
    F: Fn(&mut Graph, &Bound, usize) -> Result<Var, DiffError>,
{
    let mut total = 0.0;
    for i in 0..n {
        let mut g = Graph::new();
        let bound = g.bind(params, false)?;
        let l = sample_loss(&mut g, &bound, i)?;
        total += g.value(l).item();
    }
    Ok(total / n.max(1) as f64)
}
