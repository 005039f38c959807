use std::collections::BTreeSet;

use crate::diffcore::SparseMatrix;

use super::SurfaceMesh;

/// Undirected vertex graph of a surface mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    neighbors: Vec<Vec<usize>>,
}

impl AdjacencyGraph {
    /// Builds from undirected edges; self-loops and duplicates are dropped.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut sets = vec![BTreeSet::new(); n];
        for (a, b) in edges {
            if a != b {
                sets[a].insert(b);
                sets[b].insert(a);
            }
        }
        AdjacencyGraph { neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect() }
    }

    pub fn vertex_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// `D^(-1/2) (A + I) D^(-1/2)` with `D` the degree matrix of `A + I`.
    pub fn normalized(&self) -> SparseMatrix {
        let n = self.vertex_count();
        let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / ((self.degree(i) + 1) as f64).sqrt()).collect();
        let mut trip = Vec::with_capacity(n + 2 * self.edge_count());
        for i in 0..n {
            trip.push((i, i, inv_sqrt[i] * inv_sqrt[i]));
            for &j in &self.neighbors[i] {
                trip.push((i, j, inv_sqrt[i] * inv_sqrt[j]));
            }
        }
        SparseMatrix::from_triplets(n, &trip)
    }
}

/// Unique undirected edges of all faces.
pub fn adjacency(mesh: &SurfaceMesh) -> AdjacencyGraph {
    let edges = mesh.faces().iter().flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]);
    AdjacencyGraph::from_edges(mesh.vertex_count(), edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Structure, Vec3};

    fn tetra() -> SurfaceMesh {
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        SurfaceMesh::single(v, vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]], Structure::LV).unwrap()
    }

    #[test]
    fn single_triangle() {
        let m = SurfaceMesh::single(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]], Structure::LV).unwrap();
        let g = adjacency(&m);
        assert_eq!(g.neighbors(0), &[1, 2]);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(g.neighbors(2), &[0, 1]);
    }

    #[test]
    fn tetrahedron_is_3_regular_and_symmetric() {
        let g = adjacency(&tetra());
        for i in 0..4 {
            assert_eq!(g.degree(i), 3);
            assert!(!g.neighbors(i).contains(&i));
            for &j in g.neighbors(i) {
                assert!(g.neighbors(j).contains(&i));
            }
        }
    }

    #[test]
    fn normalized_regular_graph_weights() {
        // degree d -> every entry of D^-1/2 (A+I) D^-1/2 is 1/(d+1)
        let a = adjacency(&tetra()).normalized();
        for i in 0..4 {
            for j in 0..4 {
                assert!((a.get(i, j) - 0.25).abs() < 1e-15);
            }
        }
    }
}
