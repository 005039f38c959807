//! Text formats: meshes as `v`/`f` lines with a JSON sidecar of labeled face
//! ranges, contour sets as JSON.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ContourSet, GeometryError, Structure, SurfaceMesh, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshHeader {
    pub vertex_count: usize,
    pub face_count: usize,
    /// Half-open face index ranges per structure name.
    pub structures: BTreeMap<String, Vec<(usize, usize)>>,
}

pub fn sidecar_path(mesh_path: &Path) -> PathBuf {
    let mut s = mesh_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn mesh_to_text(mesh: &SurfaceMesh) -> (String, MeshHeader) {
    let mut out = String::new();
    for v in mesh.vertices() {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z).unwrap();
    }
    for f in mesh.faces() {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    let header = MeshHeader {
        vertex_count: mesh.vertex_count(),
        face_count: mesh.faces().len(),
        structures: mesh.label_ranges().into_iter().map(|(s, r)| (s.name().to_string(), r)).collect(),
    };
    (out, header)
}

pub fn mesh_from_text(text: &str, header: &MeshHeader, origin: &str) -> Result<SurfaceMesh, GeometryError> {
    let bad = |line: usize, detail: &str| GeometryError::Format { path: origin.to_string(), detail: format!("line {line}: {detail}") };
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let ln = ln + 1;
        let mut parts = line.split_whitespace();
        match parts.next() {
            None => continue,
            Some(c) if c.starts_with('#') => continue,
            Some("v") => {
                let xs: Vec<f64> = parts.map(str::parse).collect::<Result<_, _>>().map_err(|_| bad(ln, "bad coordinate"))?;
                if xs.len() != 3 {
                    return Err(bad(ln, "expected 3 coordinates"));
                }
                vertices.push(Vec3::new(xs[0], xs[1], xs[2]));
            }
            Some("f") => {
                let ix: Vec<usize> = parts.map(str::parse).collect::<Result<_, _>>().map_err(|_| bad(ln, "bad index"))?;
                if ix.len() != 3 || ix.contains(&0) {
                    return Err(bad(ln, "expected 3 one-based indices"));
                }
                faces.push([ix[0] - 1, ix[1] - 1, ix[2] - 1]);
            }
            Some(other) => return Err(bad(ln, &format!("unknown record '{other}'"))),
        }
    }
    if vertices.len() != header.vertex_count || faces.len() != header.face_count {
        return Err(GeometryError::Format {
            path: origin.to_string(),
            detail: format!(
                "header says {} vertices / {} faces, file has {} / {}",
                header.vertex_count,
                header.face_count,
                vertices.len(),
                faces.len()
            ),
        });
    }
    let mut labels: Vec<Option<Structure>> = vec![None; faces.len()];
    for (name, ranges) in &header.structures {
        let s: Structure = name.parse()?;
        for &(a, b) in ranges {
            if a > b || b > faces.len() {
                return Err(GeometryError::Format { path: origin.to_string(), detail: format!("{name} range {a}..{b} out of bounds") });
            }
            for l in &mut labels[a..b] {
                *l = Some(s);
            }
        }
    }
    let labels = labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| GeometryError::Format { path: origin.to_string(), detail: format!("face {i} has no structure") }))
        .collect::<Result<Vec<_>, _>>()?;
    SurfaceMesh::new(vertices, faces, labels)
}

/// Writes `path` and its `.json` sidecar.
pub fn save_mesh(mesh: &SurfaceMesh, path: &Path) -> Result<(), GeometryError> {
    let (text, header) = mesh_to_text(mesh);
    fs::write(path, text)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&header).expect("header serializes"))?;
    Ok(())
}

pub fn load_mesh(path: &Path) -> Result<SurfaceMesh, GeometryError> {
    let origin = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let side = sidecar_path(path);
    let header: MeshHeader = serde_json::from_str(&fs::read_to_string(&side)?)
        .map_err(|e| GeometryError::Format { path: side.display().to_string(), detail: e.to_string() })?;
    mesh_from_text(&text, &header, &origin)
}

pub fn save_contours(sets: &[ContourSet], path: &Path) -> Result<(), GeometryError> {
    fs::write(path, serde_json::to_string_pretty(sets).expect("contours serialize"))?;
    Ok(())
}

pub fn load_contours(path: &Path) -> Result<Vec<ContourSet>, GeometryError> {
    serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| GeometryError::Format { path: path.display().to_string(), detail: e.to_string() })
}
