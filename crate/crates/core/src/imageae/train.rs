use serde::{Deserialize, Serialize};

use super::{ImageAe, ImageAeConfig, ImageAeError, ImageInput};
use crate::dataset::CineSequence;
use crate::diffcore::{fit, mean_loss, FitConfig};

/// Loss before the first update and after each epoch's updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    /// Mean per-sample loss seen during each epoch.
    pub history: Vec<f64>,
    pub final_loss: f64,
}

/// Adam on the image reconstruction loss over `pool`.
pub fn train_image_ae(
    pool: &[CineSequence],
    config: &ImageAeConfig,
    fit_cfg: &FitConfig,
) -> Result<(ImageAe, TrainReport), ImageAeError> {
    if pool.is_empty() {
        return Err(ImageAeError::EmptyPool);
    }
    let mut ae = ImageAe::new(config.clone(), fit_cfg.seed)?;
    // validates every sample up front; normalized pixels are rebuilt per use
    for c in pool {
        ImageInput::from_cine(c, config)?;
    }
    let input = |i: usize| ImageInput::from_cine(&pool[i], config).expect("validated above");
    let model = ae.clone();
    let initial_loss = mean_loss(&ae.params, pool.len(), |g, p, i| model.loss_graph(g, p, &input(i)))?;
    let history = fit(&mut ae.params, pool.len(), fit_cfg, |g, p, i| model.loss_graph(g, p, &input(i)))?;
    let final_loss = if history.is_empty() {
        initial_loss
    } else {
        let trained = ae.clone();
        mean_loss(&ae.params, pool.len(), |g, p, i| trained.loss_graph(g, p, &input(i)))?
    };
    Ok((ae, TrainReport { initial_loss, history, final_loss }))
}
