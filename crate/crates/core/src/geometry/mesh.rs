use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GeometryError;

pub type Vec3 = Vector3<f64>;

/// Labeled cardiac structures. The four chambers are closed blood-pool
/// surfaces; `Myo` is the epicardial shell around the left ventricle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Structure {
    LV,
    RV,
    LA,
    RA,
    Myo,
}

impl Structure {
    pub const ALL: [Structure; 5] = [Structure::LV, Structure::RV, Structure::LA, Structure::RA, Structure::Myo];
    pub const CHAMBERS: [Structure; 4] = [Structure::LV, Structure::RV, Structure::LA, Structure::RA];
    /// Column order of the evaluation tables.
    pub const REPORT_ORDER: [Structure; 5] =
        [Structure::Myo, Structure::LV, Structure::RV, Structure::LA, Structure::RA];

    pub fn name(self) -> &'static str {
        match self {
            Structure::LV => "LV",
            Structure::RV => "RV",
            Structure::LA => "LA",
            Structure::RA => "RA",
            Structure::Myo => "Myo",
        }
    }

    /// Pixel label used by the rasterizer; 0 is background.
    pub fn label(self) -> u8 {
        match self {
            Structure::LV => 1,
            Structure::RV => 2,
            Structure::LA => 3,
            Structure::RA => 4,
            Structure::Myo => 5,
        }
    }

    pub fn from_label(label: u8) -> Option<Structure> {
        Structure::ALL.into_iter().find(|s| s.label() == label)
    }

    pub fn is_chamber(self) -> bool {
        self != Structure::Myo
    }

    pub fn index(self) -> usize {
        self.label() as usize - 1
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Structure {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Structure::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| GeometryError::UnknownStructure(s.to_string()))
    }
}

/// Triangle surface with one structure label per face.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    face_labels: Vec<Structure>,
}

impl SurfaceMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, face_labels: Vec<Structure>) -> Result<Self, GeometryError> {
        if faces.len() != face_labels.len() {
            return Err(GeometryError::InvalidMesh(format!(
                "{} faces but {} labels",
                faces.len(),
                face_labels.len()
            )));
        }
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= vertices.len()) {
                return Err(GeometryError::InvalidMesh(format!("face {fi} {f:?} indexes past {} vertices", vertices.len())));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(GeometryError::InvalidMesh(format!("face {fi} {f:?} is degenerate")));
            }
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::InvalidMesh(format!("vertex {i} is not finite")));
        }
        Ok(SurfaceMesh { vertices, faces, face_labels })
    }

    /// Mesh with every face carrying the same label.
    pub fn single(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, label: Structure) -> Result<Self, GeometryError> {
        let n = faces.len();
        Self::new(vertices, faces, vec![label; n])
    }

    /// Concatenates meshes, offsetting face indices.
    pub fn merge(parts: &[SurfaceMesh]) -> SurfaceMesh {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            let off = vertices.len();
            vertices.extend_from_slice(&p.vertices);
            faces.extend(p.faces.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
            labels.extend_from_slice(&p.face_labels);
        }
        SurfaceMesh { vertices, faces, face_labels: labels }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_labels(&self) -> &[Structure] {
        &self.face_labels
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Same topology, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self, GeometryError> {
        if vertices.len() != self.vertices.len() {
            return Err(GeometryError::TopologyMismatch(format!(
                "{} vertices for a {}-vertex topology",
                vertices.len(),
                self.vertices.len()
            )));
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::InvalidMesh(format!("vertex {i} is not finite")));
        }
        Ok(SurfaceMesh { vertices, faces: self.faces.clone(), face_labels: self.face_labels.clone() })
    }

    pub fn same_topology(&self, other: &SurfaceMesh) -> bool {
        self.vertices.len() == other.vertices.len() && self.faces == other.faces && self.face_labels == other.face_labels
    }

    pub fn structures(&self) -> Vec<Structure> {
        let mut s: Vec<Structure> = self.face_labels.clone();
        s.sort();
        s.dedup();
        s
    }

    pub fn faces_of(&self, s: Structure) -> impl Iterator<Item = &[usize; 3]> {
        self.faces.iter().zip(&self.face_labels).filter(move |(_, &l)| l == s).map(|(f, _)| f)
    }

    /// Sorted, deduplicated vertex indices used by faces of `s`.
    pub fn vertex_indices_of(&self, s: Structure) -> Vec<usize> {
        let mut v: Vec<usize> = self.faces_of(s).flatten().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn centroid_of(&self, s: Structure) -> Option<Vec3> {
        let idx = self.vertex_indices_of(s);
        if idx.is_empty() {
            return None;
        }
        let sum: Vec3 = idx.iter().map(|&i| self.vertices[i]).sum();
        Some(sum / idx.len() as f64)
    }

    pub fn translated(&self, offset: Vec3) -> SurfaceMesh {
        SurfaceMesh {
            vertices: self.vertices.iter().map(|v| v + offset).collect(),
            faces: self.faces.clone(),
            face_labels: self.face_labels.clone(),
        }
    }

    /// Number of edges of the sub-surface `s` that are not shared by
    /// exactly one oppositely oriented face pair.
    pub fn boundary_edge_count(&self, s: Structure) -> usize {
        let mut directed: HashMap<(usize, usize), i32> = HashMap::new();
        for f in self.faces_of(s) {
            for k in 0..3 {
                *directed.entry((f[k], f[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        let mut bad = 0;
        for (&(a, b), &count) in &directed {
            let back = directed.get(&(b, a)).copied().unwrap_or(0);
            if count != 1 || back != 1 {
                bad += 1;
            }
        }
        bad
    }

    pub fn check_closed(&self, s: Structure) -> Result<(), GeometryError> {
        if self.faces_of(s).next().is_none() {
            return Err(GeometryError::MissingStructure(s));
        }
        match self.boundary_edge_count(s) {
            0 => Ok(()),
            n => Err(GeometryError::OpenSurface { structure: s, boundary_edges: n }),
        }
    }

    pub fn triangle(&self, f: &[usize; 3]) -> [Vec3; 3] {
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    pub fn surface_area(&self, s: Structure) -> f64 {
        self.faces_of(s).map(|f| triangle_area(&self.triangle(f))).sum()
    }

    /// Uniform-area random samples on the faces of `s`.
    pub fn sample_surface(&self, s: Structure, count: usize, seed: u64) -> Result<Vec<Vec3>, GeometryError> {
        let tris: Vec<[Vec3; 3]> = self.faces_of(s).map(|f| self.triangle(f)).collect();
        if tris.is_empty() {
            return Err(GeometryError::MissingStructure(s));
        }
        let mut cumulative = Vec::with_capacity(tris.len());
        let mut total = 0.0;
        for t in &tris {
            total += triangle_area(t);
            cumulative.push(total);
        }
        if total <= 0.0 {
            return Err(GeometryError::InvalidMesh(format!("structure {s} has zero area")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let r = rng.gen::<f64>() * total;
            let ti = cumulative.partition_point(|&c| c < r).min(tris.len() - 1);
            let [a, b, c] = tris[ti];
            let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
            let s1 = r1.sqrt();
            out.push(a * (1.0 - s1) + b * (s1 * (1.0 - r2)) + c * (s1 * r2));
        }
        Ok(out)
    }

    /// Face index ranges per structure, merging consecutive runs.
    pub fn label_ranges(&self) -> BTreeMap<Structure, Vec<(usize, usize)>> {
        let mut out: BTreeMap<Structure, Vec<(usize, usize)>> = BTreeMap::new();
        let mut start = 0;
        for i in 1..=self.face_labels.len() {
            if i == self.face_labels.len() || self.face_labels[i] != self.face_labels[start] {
                out.entry(self.face_labels[start]).or_default().push((start, i));
                start = i;
            }
        }
        out
    }
}

pub fn triangle_area(t: &[Vec3; 3]) -> f64 {
    0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm()
}

/// A time series of meshes sharing one topology over one cardiac cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshVideo {
    frames: Vec<SurfaceMesh>,
}

impl MeshVideo {
    pub fn new(frames: Vec<SurfaceMesh>) -> Result<Self, GeometryError> {
        let Some(first) = frames.first() else {
            return Err(GeometryError::InvalidMesh("mesh video has no frames".into()));
        };
        if let Some(i) = frames.iter().position(|f| !f.same_topology(first)) {
            return Err(GeometryError::TopologyMismatch(format!("frame {i} differs from frame 0")));
        }
        Ok(MeshVideo { frames })
    }

    pub fn frames(&self) -> &[SurfaceMesh] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &SurfaceMesh {
        &self.frames[t]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Icosphere of the given radius centred at the origin, faces oriented
/// outward. Subdivision `k` yields `10·4^k + 2` vertices.
pub fn icosphere(radius: f64, subdivisions: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts.into_iter().map(|v| v * radius).collect(), faces)
}
