use super::{Mapping, MappingError};
use crate::dataset::CineSequence;
use crate::geometry::MeshVideo;
use crate::imageae::ImageAe;
use crate::meshae::MeshAe;

/// Mesh decoder applied to `G_M` of the image encoding, sampled at `n_out`
/// evenly spaced trajectory phases.
pub fn infer_mesh_video(
    cine: &CineSequence,
    image_ae: &ImageAe,
    mapping: &Mapping,
    mesh_ae: &MeshAe,
    n_out: usize,
) -> Result<MeshVideo, MappingError> {
    if n_out < 2 {
        return Err(MappingError::Input(format!("need at least 2 output frames, got {n_out}")));
    }
    let image_code = image_ae.encode(cine)?;
    let mesh_code = mapping.to_mesh(&image_code)?;
    Ok(mesh_ae.decode_video(&mesh_code, n_out)?)
}
