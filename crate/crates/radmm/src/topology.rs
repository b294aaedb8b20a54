//! Connected undirected networks and their Laplacian matrices.
//!
//! The solver exchanges messages along the edges of a connected graph
//! `G(N, E)`. The convergence conditions are stated in terms of the
//! Laplacian `D - A` and the signless Laplacian `D + A`, both of which
//! are derived here.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

/// A connected undirected graph over nodes `0..n_nodes`.
///
/// Immutable after construction; safe to share across solver workers.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds a topology from an explicit edge list.
    ///
    /// Edges are unordered pairs of distinct in-range node indices.
    /// Fails if the resulting graph is disconnected or an edge is
    /// malformed (self-loop, out of range, duplicate).
    pub fn build(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::InvalidEdge(0, 0, "graph must have at least one node"));
        }
        let mut neighbors = vec![Vec::new(); n_nodes];
        let mut normalized = Vec::with_capacity(edges.len());
        let mut seen = std::collections::HashSet::new();
        for &(a, b) in edges {
            if a == b {
                return Err(Error::InvalidEdge(a, b, "self-loop"));
            }
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::InvalidEdge(a, b, "node index out of range"));
            }
            let (lo, hi) = (a.min(b), a.max(b));
            if !seen.insert((lo, hi)) {
                return Err(Error::InvalidEdge(a, b, "duplicate edge"));
            }
            normalized.push((lo, hi));
            neighbors[lo].push(hi);
            neighbors[hi].push(lo);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        normalized.sort_unstable();
        let topo = Topology {
            n_nodes,
            edges: normalized,
            neighbors,
        };
        topo.check_connected()?;
        Ok(topo)
    }

    /// Generates a random connected graph: first a uniformly random
    /// spanning tree (random permutation, each node attached to a random
    /// earlier node), then each remaining pair added with
    /// `edge_probability`. Deterministic for a fixed seed.
    pub fn random_connected(n_nodes: usize, edge_probability: f64, seed: u64) -> Result<Self> {
        if n_nodes < 2 {
            return Err(Error::InvalidEdge(0, 0, "random topology needs at least 2 nodes"));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n_nodes).collect();
        order.shuffle(&mut rng);
        let mut edge_set = std::collections::HashSet::new();
        for idx in 1..n_nodes {
            let parent = order[rng.random_range(0..idx)];
            let node = order[idx];
            edge_set.insert((node.min(parent), node.max(parent)));
        }
        for i in 0..n_nodes {
            for j in (i + 1)..n_nodes {
                if !edge_set.contains(&(i, j)) && rng.random_bool(edge_probability.clamp(0.0, 1.0)) {
                    edge_set.insert((i, j));
                }
            }
        }
        let edges: Vec<_> = edge_set.into_iter().collect();
        Self::build(n_nodes, &edges)
    }

    /// Parses an edge-list text file: one `i j` pair per line,
    /// whitespace-separated, `#` starts a comment.
    pub fn from_edge_list_str(n_nodes: usize, text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let a = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or(Error::InvalidEdge(0, 0, "malformed edge-list line"))?;
            let b = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or(Error::InvalidEdge(0, 0, "malformed edge-list line"))?;
            edges.push((a, b));
        }
        Self::build(n_nodes, &edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Edges as normalized `(lo, hi)` pairs in sorted order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Neighbors of `i` in ascending index order.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// `V_i`, the number of neighbors of node `i`.
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n_nodes).map(|i| self.degree(i)).collect()
    }

    /// The 0/1 adjacency matrix `A`.
    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n_nodes, self.n_nodes);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    /// The degree matrix `D = diag(V_1, ..., V_N)`.
    pub fn degree_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            self.n_nodes,
            (0..self.n_nodes).map(|i| self.degree(i) as f64),
        ))
    }

    /// Returns `(D - A, D + A)`: the Laplacian and the signless
    /// Laplacian. Both are symmetric positive semi-definite for a
    /// connected graph, and `(D - A) 1 = 0`.
    pub fn laplacian_matrices(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let a = self.adjacency();
        let d = self.degree_matrix();
        (&d - &a, &d + &a)
    }

    fn check_connected(&self) -> Result<()> {
        let mut visited = vec![false; self.n_nodes];
        let mut stack = vec![0usize];
        visited[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &self.neighbors[i] {
                if !visited[j] {
                    visited[j] = true;
                    stack.push(j);
                }
            }
        }
        match visited.iter().position(|v| !v) {
            Some(i) => Err(Error::DisconnectedGraph(i)),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Topology {
        Topology::build(3, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn path_degrees() {
        let t = path3();
        assert_eq!(t.degrees(), vec![1, 2, 1]);
    }

    #[test]
    fn single_edge() {
        let t = Topology::build(2, &[(0, 1)]).unwrap();
        assert_eq!(t.degrees(), vec![1, 1]);
    }

    #[test]
    fn disconnected_rejected() {
        assert!(matches!(
            Topology::build(3, &[(0, 1)]),
            Err(Error::DisconnectedGraph(2))
        ));
    }

    #[test]
    fn self_loop_rejected() {
        assert!(matches!(
            Topology::build(3, &[(0, 0), (0, 1), (1, 2)]),
            Err(Error::InvalidEdge(0, 0, _))
        ));
    }

    #[test]
    fn duplicate_edge_rejected() {
        assert!(Topology::build(3, &[(0, 1), (1, 0), (1, 2)]).is_err());
    }

    #[test]
    fn random_topology_deterministic() {
        let a = Topology::random_connected(5, 0.5, 7).unwrap();
        let b = Topology::random_connected(5, 0.5, 7).unwrap();
        assert_eq!(a.edges(), b.edges());
    }

    #[test]
    fn random_topology_two_nodes_zero_probability() {
        let t = Topology::random_connected(2, 0.0, 1).unwrap();
        assert_eq!(t.edges(), &[(0, 1)]);
    }

    #[test]
    fn handshake_identity() {
        let t = Topology::random_connected(20, 0.3, 3).unwrap();
        let degree_sum: usize = t.degrees().iter().sum();
        assert_eq!(degree_sum, 2 * t.edges().len());
    }

    #[test]
    fn path_laplacian_matches_textbook() {
        let (lap, _) = path3().laplacian_matrices();
        let expected = DMatrix::from_row_slice(3, 3, &[1., -1., 0., -1., 2., -1., 0., -1., 1.]);
        assert_eq!(lap, expected);
    }

    #[test]
    fn laplacian_annihilates_ones() {
        for seed in 0..5 {
            let t = Topology::random_connected(8, 0.4, seed).unwrap();
            let (lap, _) = t.laplacian_matrices();
            let ones = nalgebra::DVector::from_element(8, 1.0);
            assert!((lap * ones).norm() <= 1e-12 * 8.0);
        }
    }

    #[test]
    fn laplacians_positive_semidefinite() {
        for seed in 0..5 {
            let t = Topology::random_connected(7, 0.4, seed).unwrap();
            let (lap, signless) = t.laplacian_matrices();
            for m in [lap, signless] {
                let eig = nalgebra::SymmetricEigen::new(m);
                assert!(eig.eigenvalues.min() >= -1e-10);
            }
        }
    }

    #[test]
    fn adjacency_symmetric() {
        let t = Topology::random_connected(6, 0.5, 11).unwrap();
        let a = t.adjacency();
        assert_eq!(a, a.transpose());
        assert!((0..6).all(|i| a[(i, i)] == 0.0));
    }

    #[test]
    fn edge_list_parsing() {
        let t = Topology::from_edge_list_str(3, "# path\n0 1\n1 2\n").unwrap();
        assert_eq!(t.degrees(), vec![1, 2, 1]);
    }
}
