use std::collections::BTreeSet;

use ndarray::Axis;
use rand::seq::SliceRandom;

use super::Graph;
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

/// One client's induced subgraph. Local node `i` is global node
/// `local_to_global[i]`; the map is strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientGraph {
    pub graph: Graph,
    pub local_to_global: Vec<usize>,
}

impl ClientGraph {
    pub fn size(&self) -> usize {
        self.local_to_global.len()
    }

    pub fn global_id(&self, local: usize) -> usize {
        self.local_to_global[local]
    }

    pub fn local_id(&self, global: usize) -> Option<usize> {
        self.local_to_global.binary_search(&global).ok()
    }

    /// Induced subgraph on `nodes` (must be sorted and unique).
    pub fn induced(g: &Graph, nodes: Vec<usize>) -> Result<Self> {
        let features = g.features().select(Axis(0), &nodes);
        let labels = nodes.iter().map(|&u| g.labels()[u]).collect();
        let local = |u: usize| nodes.binary_search(&u).ok();
        let edges: Vec<(usize, usize)> = g
            .edges()
            .iter()
            .filter_map(|&(u, v)| Some((local(u)?, local(v)?)))
            .collect();
        let graph = Graph::new(features, labels, g.num_classes(), edges)?;
        Ok(Self {
            graph,
            local_to_global: nodes,
        })
    }
}

/// Horizontal split of one graph across `k` clients.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub clients: Vec<ClientGraph>,
    pub malicious_index: usize,
    /// Ground-truth edges that no client holds.
    pub lost_edges: Vec<(usize, usize)>,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn client_sizes(&self) -> Vec<usize> {
        self.clients.iter().map(ClientGraph::size).collect()
    }

    pub fn malicious(&self) -> &ClientGraph {
        &self.clients[self.malicious_index]
    }
}

/// Shuffles nodes by `seed`, deals them round-robin into `k` sets, then
/// tops each set up with `round(overlap * |set|)` nodes sampled from the
/// other clients' sets.
pub fn partition_graph(g: &Graph, k: usize, overlap: f64, malicious_index: usize, seed: u64) -> Result<Partition> {
    let n = g.num_nodes();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 clients, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("{k} clients for a graph of {n} nodes")));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidArgument(format!(
            "overlap fraction {overlap} outside [0, 1)"
        )));
    }
    if malicious_index >= k {
        return Err(Error::InvalidArgument(format!(
            "malicious index {malicious_index} outside 0..{k}"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, &[tag::PARTITION, 0]));
    let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); k];
    for (i, &u) in order.iter().enumerate() {
        sets[i % k].insert(u);
    }

    if overlap > 0.0 {
        let base = sets.clone();
        for (c, set) in sets.iter_mut().enumerate() {
            let extra = (overlap * base[c].len() as f64).round() as usize;
            let mut others: Vec<usize> = (0..n).filter(|u| !base[c].contains(u)).collect();
            others.shuffle(&mut stream(seed, &[tag::PARTITION, 1, c as u64]));
            set.extend(others.into_iter().take(extra));
        }
    }

    let clients = sets
        .into_iter()
        .map(|s| ClientGraph::induced(g, s.into_iter().collect()))
        .collect::<Result<Vec<_>>>()?;

    let lost_edges = g
        .edges()
        .iter()
        .copied()
        .filter(|&(u, v)| {
            !clients
                .iter()
                .any(|c| c.local_id(u).is_some() && c.local_id(v).is_some())
        })
        .collect();

    Ok(Partition {
        clients,
        malicious_index,
        lost_edges,
    })
}
