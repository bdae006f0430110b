//! Directed node graphs for message passing.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::tape::Sparse;

/// A directed graph over `n` nodes. An edge `(a, b)` sends messages from `a`
/// to `b`, so the neighbourhood of `b` is `{a : (a, b) is an edge}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphBatch {
    n: usize,
    in_nbrs: Vec<Vec<usize>>,
}

impl GraphBatch {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut in_nbrs = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(NeuralError::Shape(format!("edge ({a}, {b}) outside {n} nodes")));
            }
            in_nbrs[b].push(a);
        }
        for list in &mut in_nbrs {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { n, in_nbrs })
    }

    pub fn edgeless(n: usize) -> Self {
        Self {
            n,
            in_nbrs: vec![Vec::new(); n],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn in_neighbours(&self, b: usize) -> &[usize] {
        &self.in_nbrs[b]
    }

    pub fn n_edges(&self) -> usize {
        self.in_nbrs.iter().map(Vec::len).sum()
    }

    /// Disjoint union; node indices of later parts are offset.
    pub fn union(parts: &[GraphBatch]) -> Self {
        let mut in_nbrs = Vec::new();
        let mut offset = 0;
        for g in parts {
            in_nbrs.extend(g.in_nbrs.iter().map(|l| l.iter().map(|a| a + offset).collect()));
            offset += g.n;
        }
        Self { n: offset, in_nbrs }
    }

    /// Same graph with nodes relabelled: new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(NeuralError::Shape("permutation length".into()));
        }
        let mut inverse = vec![usize::MAX; self.n];
        for (i, &p) in perm.iter().enumerate() {
            if p >= self.n || inverse[p] != usize::MAX {
                return Err(NeuralError::Shape("not a permutation".into()));
            }
            inverse[p] = i;
        }
        let mut edges = Vec::with_capacity(self.n_edges());
        for (b, list) in self.in_nbrs.iter().enumerate() {
            edges.extend(list.iter().map(|&a| (inverse[a], inverse[b])));
        }
        Self::new(self.n, &edges)
    }

    /// Neighbour mean: row `b` averages the rows of `b`'s in-neighbours and
    /// is zero when `b` has none.
    pub fn mean_operator(&self) -> Arc<Sparse> {
        let rows = self
            .in_nbrs
            .iter()
            .map(|l| {
                let w = 1.0 / l.len().max(1) as f64;
                l.iter().map(|&a| (a, w)).collect()
            })
            .collect();
        Arc::new(Sparse { n_cols: self.n, rows })
    }

    /// Symmetrically normalized adjacency with self-loops,
    /// `D^-1/2 (A + I) D^-1/2`, where the degree counts in-neighbours plus
    /// the self-loop.
    pub fn gcn_operator(&self) -> Arc<Sparse> {
        let deg: Vec<f64> = self.in_nbrs.iter().map(|l| (l.len() + 1) as f64).collect();
        let rows = self
            .in_nbrs
            .iter()
            .enumerate()
            .map(|(b, l)| {
                let mut row: Vec<(usize, f64)> = l
                    .iter()
                    .filter(|&&a| a != b)
                    .map(|&a| (a, 1.0 / (deg[a] * deg[b]).sqrt()))
                    .collect();
                row.push((b, 1.0 / deg[b]));
                row
            })
            .collect();
        Arc::new(Sparse { n_cols: self.n, rows })
    }
}
