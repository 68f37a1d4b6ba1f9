//! Undirected attributed graphs and everything that produces them.

mod io;
mod partition;
mod sbm;
mod split;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use ndarray::Array2;

use crate::error::{Error, Result};

pub use io::{load_graph, read_graph, write_graph, write_graph_to};
pub use partition::{partition_graph, ClientGraph, Partition};
pub use sbm::{generate_sbm, SbmParams};
pub use split::{make_split, DataSplit};

/// Undirected, unweighted graph with a dense node feature matrix and one
/// class label per node.
///
/// Edges are stored once as `(u, v)` with `u < v`, sorted. Construction
/// validates every invariant, so a `Graph` value is always well formed.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    edges: Vec<(usize, usize)>,
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph, deduplicating undirected edges.
    ///
    /// Self-loops, out-of-range endpoints, non-finite features and labels
    /// outside `0..num_classes` are rejected.
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(Error::InvalidGraph(format!(
                "{} labels for {} feature rows",
                labels.len(),
                n
            )));
        }
        if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::InvalidGraph(format!(
                "node {i} has label {y}, outside 0..{num_classes}"
            )));
        }
        if let Some(((r, c), v)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidGraph(format!(
                "feature ({r}, {c}) of value {v} is not finite"
            )));
        }

        let mut normalized = Vec::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidNode {
                    id: u.max(v),
                    num_nodes: n,
                });
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop on node {u}")));
            }
            normalized.push((u.min(v), u.max(v)));
        }
        normalized.sort_unstable();
        normalized.dedup();

        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in &normalized {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }

        Ok(Self {
            edges: normalized,
            features,
            labels,
            num_classes,
            neighbors,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Sorted neighbor list of `u` (excluding `u`).
    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.neighbors[u].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u != v && self.neighbors[u].binary_search(&v).is_ok()
    }

    /// Same structure and labels with a replacement feature matrix.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        if features.dim() != self.features.dim() {
            return Err(Error::ShapeMismatch(format!(
                "replacement features {:?} vs graph {:?}",
                features.dim(),
                self.features.dim()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("replacement features".into()));
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    /// Hash of the edge set, used to assert that structure is untouched.
    pub fn edge_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.num_nodes().hash(&mut h);
        self.edges.hash(&mut h);
        h.finish()
    }

    /// Symmetric GCN propagation weights `D^-1/2 (A + I) D^-1/2` in row
    /// compressed form. Each row lists `(column, weight)` with the self
    /// entry included, columns ascending.
    pub fn gcn_propagation(&self) -> Vec<Vec<(usize, f64)>> {
        let inv_sqrt: Vec<f64> = (0..self.num_nodes())
            .map(|u| 1.0 / ((self.degree(u) + 1) as f64).sqrt())
            .collect();
        (0..self.num_nodes())
            .map(|u| {
                let mut row: Vec<(usize, f64)> = self.neighbors[u]
                    .iter()
                    .map(|&v| (v, inv_sqrt[u] * inv_sqrt[v]))
                    .collect();
                let pos = row.partition_point(|&(v, _)| v < u);
                row.insert(pos, (u, inv_sqrt[u] * inv_sqrt[u]));
                row
            })
            .collect()
    }
}

/// Dense `D^-1/2 (A + I) D^-1/2`.
pub fn normalized_adjacency(g: &Graph) -> Array2<f64> {
    let n = g.num_nodes();
    let mut out = Array2::zeros((n, n));
    for (u, row) in g.gcn_propagation().into_iter().enumerate() {
        for (v, w) in row {
            out[[u, v]] = w;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny(edges: &[(usize, usize)], n: usize) -> Result<Graph> {
        Graph::new(Array2::zeros((n, 2)), vec![0; n], 1, edges.iter().copied())
    }

    #[test]
    fn dedups_undirected_edges() {
        let g = tiny(&[(0, 1), (1, 0)], 3).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert!(g.has_edge(1, 0));
    }

    #[test]
    fn rejects_self_loop_and_bad_endpoint() {
        assert!(matches!(tiny(&[(0, 0)], 3), Err(Error::InvalidGraph(_))));
        assert!(matches!(tiny(&[(0, 3)], 3), Err(Error::InvalidNode { id: 3, .. })));
    }

    #[test]
    fn rejects_bad_label_and_nan() {
        let x = Array2::zeros((2, 1));
        assert!(Graph::new(x.clone(), vec![0, 2], 2, []).is_err());
        let mut y = x;
        y[[1, 0]] = f64::NAN;
        assert!(Graph::new(y, vec![0, 1], 2, []).is_err());
    }

    #[test]
    fn normalized_adjacency_small_cases() {
        let single = tiny(&[], 1).unwrap();
        assert_eq!(normalized_adjacency(&single), array![[1.0]]);

        let pair = tiny(&[(0, 1)], 2).unwrap();
        let a = normalized_adjacency(&pair);
        for v in a.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }

        let isolated = tiny(&[(0, 1)], 3).unwrap();
        let a = normalized_adjacency(&isolated);
        assert_eq!(a.row(2).to_vec(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn with_features_preserves_structure() {
        let g = tiny(&[(0, 1), (1, 2)], 3).unwrap();
        let h = g.with_features(Array2::ones((3, 2))).unwrap();
        assert_eq!(g.edge_fingerprint(), h.edge_fingerprint());
        assert!(g.with_features(Array2::ones((3, 3))).is_err());
    }
}

/// Samples up to `count` distinct unordered non-adjacent pairs `(u, v)`
/// with `u < v`, uniformly. Falls back to enumerating every non-edge when
/// the request covers most of them.
pub fn sample_non_edges(g: &Graph, count: usize, rng: &mut impl rand::Rng) -> Vec<(usize, usize)> {
    use rand::seq::SliceRandom;
    use std::collections::HashSet;

    let n = g.num_nodes();
    let total = n * n.saturating_sub(1) / 2 - g.num_edges();
    if count == 0 || total == 0 {
        return Vec::new();
    }
    if count * 2 >= total {
        let mut all: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| ((u + 1)..n).map(move |v| (u, v)))
            .filter(|&(u, v)| !g.has_edge(u, v))
            .collect();
        all.shuffle(rng);
        all.truncate(count);
        return all;
    }
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u == v || g.has_edge(u, v) {
            continue;
        }
        let pair = (u.min(v), u.max(v));
        if seen.insert(pair) {
            out.push(pair);
        }
    }
    out
}
