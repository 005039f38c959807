use serde::{Deserialize, Serialize};

use super::{GeometryError, MeshVideo, Structure, SurfaceMesh};

pub const MM3_PER_ML: f64 = 1000.0;

/// Volume enclosed by the closed sub-surface `structure`, in mL.
pub fn enclosed_volume(mesh: &SurfaceMesh, structure: Structure) -> Result<f64, GeometryError> {
    mesh.check_closed(structure)?;
    // Signed tetrahedra against the sub-surface centroid rather than the
    // origin keeps the sum well conditioned far from the origin.
    let c = mesh.centroid_of(structure).expect("closed structure has vertices");
    let six_v: f64 = mesh
        .faces_of(structure)
        .map(|f| {
            let [a, b, d] = mesh.triangle(f);
            (a - c).cross(&(b - c)).dot(&(d - c))
        })
        .sum();
    Ok(six_v.abs() / 6.0 / MM3_PER_ML)
}

pub fn volume_curve(video: &MeshVideo, structure: Structure) -> Result<Vec<f64>, GeometryError> {
    video.frames().iter().map(|m| enclosed_volume(m, structure)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EjectionFraction {
    pub ef: f64,
    pub ed_frame: usize,
    pub es_frame: usize,
    pub edv: f64,
    pub esv: f64,
}

/// ED = largest volume, ES = smallest, EF = (EDV − ESV) / EDV; ties go to
/// the earliest frame.
pub fn ejection_fraction(curve: &[f64]) -> Result<EjectionFraction, GeometryError> {
    if curve.is_empty() {
        return Err(GeometryError::InvalidCurve("empty volume curve".into()));
    }
    if let Some(i) = curve.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(GeometryError::InvalidCurve(format!("volume {} at frame {i} is not positive", curve[i])));
    }
    let (mut ed, mut es) = (0, 0);
    for (i, &v) in curve.iter().enumerate() {
        if v > curve[ed] {
            ed = i;
        }
        if v < curve[es] {
            es = i;
        }
    }
    let (edv, esv) = (curve[ed], curve[es]);
    Ok(EjectionFraction { ef: (edv - esv) / edv, ed_frame: ed, es_frame: es, edv, esv })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ef_formula() {
        let e = ejection_fraction(&[100.0, 70.0, 40.0, 90.0]).unwrap();
        assert!((e.ef - 0.6).abs() < 1e-15);
        assert_eq!((e.ed_frame, e.es_frame), (0, 2));
    }

    #[test]
    fn ef_constant_curve() {
        let e = ejection_fraction(&[5.0; 4]).unwrap();
        assert_eq!(e.ef, 0.0);
        assert_eq!((e.ed_frame, e.es_frame), (0, 0));
    }

    #[test]
    fn ef_earliest_tie() {
        let e = ejection_fraction(&[50.0, 80.0, 30.0, 80.0]).unwrap();
        assert_eq!(e.ed_frame, 1);
        assert_eq!(e.es_frame, 2);
        assert!((e.ef - 0.625).abs() < 1e-15);
    }

    #[test]
    fn ef_rejects_non_positive() {
        assert!(ejection_fraction(&[1.0, 0.0]).is_err());
        assert!(ejection_fraction(&[]).is_err());
    }
}
