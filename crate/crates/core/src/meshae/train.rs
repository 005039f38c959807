use super::{MeshAe, MeshAeConfig, MeshAeError};
use crate::diffcore::{fit, mean_loss, FitConfig, Tensor};
use crate::geometry::{MeshVideo, SurfaceMesh};
use crate::imageae::TrainReport;

/// Adam on the mesh reconstruction loss over `pool`, deforming `template`.
pub fn train_mesh_ae(
    pool: &[MeshVideo],
    template: &SurfaceMesh,
    config: &MeshAeConfig,
    fit_cfg: &FitConfig,
) -> Result<(MeshAe, TrainReport), MeshAeError> {
    if pool.is_empty() {
        return Err(MeshAeError::EmptyPool);
    }
    if pool.iter().any(|v| !v.frame(0).same_topology(template)) {
        return Err(MeshAeError::TopologyMismatch);
    }
    let mut ae = MeshAe::new(config.clone(), template.clone(), fit_cfg.seed)?;
    let coords: Vec<Tensor> = pool.iter().map(MeshAe::video_tensor).collect();
    let model = ae.clone();
    let initial_loss = mean_loss(&ae.params, pool.len(), |g, p, i| model.loss_graph(g, p, &coords[i]))?;
    let history = fit(&mut ae.params, pool.len(), fit_cfg, |g, p, i| model.loss_graph(g, p, &coords[i]))?;
    let final_loss = if history.is_empty() {
        initial_loss
    } else {
        mean_loss(&ae.params, pool.len(), |g, p, i| model.loss_graph(g, p, &coords[i]))?
    };
    Ok((ae, TrainReport { initial_loss, history, final_loss }))
}
