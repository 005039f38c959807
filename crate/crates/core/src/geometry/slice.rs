use std::collections::{BTreeMap, HashMap};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{GeometryError, Structure, SurfaceMesh, Vec3};

pub type Vec2 = Vector2<f64>;

/// Oriented plane with an orthonormal in-plane basis `(u, v)`, `u × v = normal`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub origin: Vec3,
    pub normal: Vec3,
    pub u: Vec3,
    pub v: Vec3,
}

impl Plane {
    /// Plane through `origin` with the given normal; `u` is the projection
    /// of `u_hint` (or of a fixed axis when the hint is parallel to the normal).
    pub fn new(origin: Vec3, normal: Vec3, u_hint: Option<Vec3>) -> Result<Self, GeometryError> {
        let len = normal.norm();
        if !(len > 1e-12) || !len.is_finite() {
            return Err(GeometryError::DegeneratePlane);
        }
        let n = normal / len;
        let project = |h: Vec3| {
            let p = h - n * h.dot(&n);
            (p.norm() > 1e-9 * h.norm().max(1e-300)).then(|| p.normalize())
        };
        let u = u_hint
            .and_then(project)
            .or_else(|| project(Vec3::x()))
            .or_else(|| project(Vec3::y()))
            .expect("one of two orthogonal axes is not parallel to the normal");
        let v = n.cross(&u);
        Ok(Plane { origin, normal: n, u, v })
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        (p - self.origin).dot(&self.normal)
    }

    pub fn to_plane(&self, p: &Vec3) -> Vec2 {
        let d = p - self.origin;
        Vec2::new(d.dot(&self.u), d.dot(&self.v))
    }

    pub fn lift(&self, q: &Vec2) -> Vec3 {
        self.origin + self.u * q.x + self.v * q.y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    /// In-plane coordinates (mm); a closed polyline does not repeat its first point.
    pub points: Vec<Vec2>,
    pub closed: bool,
}

impl Polyline {
    pub fn length(&self) -> f64 {
        let mut l: f64 = self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        if self.closed && self.points.len() > 1 {
            l += (self.points[0] - self.points[self.points.len() - 1]).norm();
        }
        l
    }

    /// Shoelace area (signed) of a closed loop.
    pub fn signed_area(&self) -> f64 {
        let n = self.points.len();
        (0..n)
            .map(|i| {
                let (a, b) = (self.points[i], self.points[(i + 1) % n]);
                a.x * b.y - b.x * a.y
            })
            .sum::<f64>()
            * 0.5
    }
}

/// Per-structure cross-section polylines of one plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourSet {
    pub plane: Plane,
    pub contours: BTreeMap<Structure, Vec<Polyline>>,
}

impl ContourSet {
    pub fn empty(plane: Plane) -> Self {
        ContourSet { plane, contours: BTreeMap::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.contours.values().all(Vec::is_empty)
    }

    /// Contour points of `s` lifted back to 3D.
    pub fn points_3d(&self, s: Structure) -> Vec<Vec3> {
        self.contours
            .get(&s)
            .into_iter()
            .flatten()
            .flat_map(|pl| pl.points.iter().map(|q| self.plane.lift(q)))
            .collect()
    }

    pub fn all_points_3d(&self) -> Vec<Vec3> {
        self.contours.keys().flat_map(|&s| self.points_3d(s)).collect()
    }

    pub fn structures(&self) -> impl Iterator<Item = Structure> + '_ {
        self.contours.iter().filter(|(_, v)| !v.is_empty()).map(|(&s, _)| s)
    }

    /// Keeps only the listed structures.
    pub fn restricted_to(&self, keep: &[Structure]) -> ContourSet {
        ContourSet {
            plane: self.plane,
            contours: self.contours.iter().filter(|(s, _)| keep.contains(s)).map(|(s, v)| (*s, v.clone())).collect(),
        }
    }
}

/// Cross-sections of every labeled structure with `plane`. Vertices lying
/// exactly on the plane are treated as being on its positive side.
pub fn slice_mesh(mesh: &SurfaceMesh, plane: &Plane) -> Result<ContourSet, GeometryError> {
    if !(plane.normal.norm() > 1e-12) {
        return Err(GeometryError::DegeneratePlane);
    }
    let dist: Vec<f64> = mesh.vertices().iter().map(|p| plane.signed_distance(p)).collect();
    let above = |i: usize| dist[i] >= 0.0;
    let mut out = ContourSet::empty(*plane);
    for s in mesh.structures() {
        // node = crossing mesh edge; each crossing face links two nodes
        let mut links: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
        let mut order: Vec<(usize, usize)> = Vec::new();
        for f in mesh.faces_of(s) {
            let mut crossing = Vec::with_capacity(2);
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if above(a) != above(b) {
                    crossing.push((a.min(b), a.max(b)));
                }
            }
            if crossing.len() != 2 {
                continue;
            }
            for (x, y) in [(crossing[0], crossing[1]), (crossing[1], crossing[0])] {
                let entry = links.entry(x).or_default();
                if entry.is_empty() {
                    order.push(x);
                }
                entry.push(y);
            }
        }
        if links.is_empty() {
            continue;
        }
        let point = |e: (usize, usize)| {
            let (a, b) = e;
            let t = dist[a] / (dist[a] - dist[b]);
            let p = mesh.vertices()[a] + (mesh.vertices()[b] - mesh.vertices()[a]) * t;
            plane.to_plane(&p)
        };
        let mut visited: HashMap<(usize, usize), bool> = HashMap::new();
        let mut polylines = Vec::new();
        // open chains start at nodes of degree one, then the remaining loops
        let starts: Vec<(usize, usize)> = order
            .iter()
            .copied()
            .filter(|e| links[e].len() == 1)
            .chain(order.iter().copied())
            .collect();
        for start in starts {
            if visited.contains_key(&start) {
                continue;
            }
            let mut chain = vec![start];
            visited.insert(start, true);
            let mut prev: Option<(usize, usize)> = None;
            let mut cur = start;
            let closed = loop {
                let next = links[&cur].iter().copied().find(|n| Some(*n) != prev && !visited.contains_key(n));
                match next {
                    Some(n) => {
                        visited.insert(n, true);
                        chain.push(n);
                        prev = Some(cur);
                        cur = n;
                    }
                    None => break chain.len() > 2 && links[&cur].contains(&start),
                }
            };
            polylines.push(Polyline { points: chain.into_iter().map(point).collect(), closed });
        }
        out.contours.insert(s, polylines);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::icosphere;

    fn sphere(r: f64, k: usize) -> SurfaceMesh {
        let (v, f) = icosphere(r, k);
        SurfaceMesh::single(v, f, Structure::LV).unwrap()
    }

    #[test]
    fn plane_basis_is_orthonormal() {
        let p = Plane::new(Vec3::zeros(), Vec3::new(1.0, 2.0, -0.5), Some(Vec3::z())).unwrap();
        assert!((p.u.norm() - 1.0).abs() < 1e-12);
        assert!(p.u.dot(&p.v).abs() < 1e-12);
        assert!(p.u.dot(&p.normal).abs() < 1e-12);
        assert!((p.u.cross(&p.v) - p.normal).norm() < 1e-12);
        assert!(Plane::new(Vec3::zeros(), Vec3::zeros(), None).is_err());
    }

    #[test]
    fn missing_plane_gives_empty_set() {
        let p = Plane::new(Vec3::new(0.0, 0.0, 50.0), Vec3::z(), None).unwrap();
        assert!(slice_mesh(&sphere(10.0, 2), &p).unwrap().is_empty());
    }

    #[test]
    fn sphere_cut_is_a_closed_circle() {
        let p = Plane::new(Vec3::new(0.0, 0.0, 6.0), Vec3::new(0.0, 0.0, 1.0), None).unwrap();
        let cs = slice_mesh(&sphere(10.0, 4), &p).unwrap();
        let loops = &cs.contours[&Structure::LV];
        assert_eq!(loops.len(), 1);
        assert!(loops[0].closed);
        let perim = loops[0].length();
        let expected = 2.0 * std::f64::consts::PI * 8.0;
        assert!((perim - expected).abs() / expected < 0.01, "{perim} vs {expected}");
        for q in cs.points_3d(Structure::LV) {
            assert!(p.signed_distance(&q).abs() < 1e-9);
        }
    }
}
