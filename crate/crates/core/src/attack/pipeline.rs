use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::features::{pair_features_with, FeatureOptions};
use super::model::AttackModel;
use crate::error::{Error, Result};
use crate::graph::{sample_non_edges, ClientGraph, Graph};
use crate::rng::{stream, tag};

/// The attacker's only view of the trained global model.
pub trait PosteriorQuery {
    fn num_classes(&self) -> usize;
    /// One posterior vector per requested node, in request order.
    fn query(&self, nodes: &[usize]) -> Result<Vec<Vec<f64>>>;
}

/// Posteriors fetched once per distinct node, in ascending id order.
#[derive(Debug, Clone, Default)]
pub struct PosteriorCache {
    rows: BTreeMap<usize, Vec<f64>>,
}

impl PosteriorCache {
    pub fn fetch(oracle: &dyn PosteriorQuery, nodes: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut ids: Vec<usize> = nodes.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        let rows = oracle.query(&ids)?;
        Ok(Self {
            rows: ids.into_iter().zip(rows).collect(),
        })
    }

    pub fn get(&self, node: usize) -> &[f64] {
        &self.rows[&node]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows.keys().copied()
    }

    fn features(&self, pairs: &[(usize, usize)], opts: FeatureOptions, classes: usize) -> Array2<f64> {
        let rows: Vec<Vec<f64>> = pairs
            .par_iter()
            .map(|&(u, v)| pair_features_with(self.get(u), self.get(v), opts).values)
            .collect();
        let mut out = Array2::zeros((pairs.len(), opts.dim(classes)));
        for (i, r) in rows.into_iter().enumerate() {
            out.row_mut(i).assign(&ndarray::ArrayView1::from(&r));
        }
        out
    }
}

/// Labelled training pairs drawn from the attacker's own subgraph.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowPairSet {
    /// global node ids
    pub pairs: Vec<(usize, usize)>,
    pub labels: Vec<bool>,
    pub features: Array2<f64>,
    pub options: FeatureOptions,
    pub classes: usize,
}

impl ShadowPairSet {
    pub fn num_positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn num_negatives(&self) -> usize {
        self.labels.len() - self.num_positives()
    }
}

/// Positives are every local edge, negatives `round(ratio * |E_m|)`
/// uniformly sampled local non-edges. Only nodes of `subgraph` are queried.
pub fn build_shadow_set(
    subgraph: &ClientGraph,
    oracle: &dyn PosteriorQuery,
    negative_ratio: f64,
    options: FeatureOptions,
    seed: u64,
) -> Result<ShadowPairSet> {
    let g = &subgraph.graph;
    if g.num_edges() == 0 {
        return Err(Error::InvalidArgument("attacker subgraph has no edges".into()));
    }
    if !(negative_ratio > 0.0 && negative_ratio.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "negative ratio {negative_ratio} must be > 0"
        )));
    }
    let want = (negative_ratio * g.num_edges() as f64).round() as usize;
    let negatives = sample_non_edges(g, want, &mut stream(seed, &[tag::SHADOW]));
    let to_global = |&(u, v): &(usize, usize)| (subgraph.global_id(u), subgraph.global_id(v));

    let mut pairs: Vec<(usize, usize)> = g.edges().iter().map(to_global).collect();
    let mut labels = vec![true; pairs.len()];
    pairs.extend(negatives.iter().map(to_global));
    labels.resize(pairs.len(), false);

    let cache = PosteriorCache::fetch(oracle, pairs.iter().flat_map(|&(u, v)| [u, v]))?;
    let classes = oracle.num_classes();
    let features = cache.features(&pairs, options, classes);
    Ok(ShadowPairSet {
        pairs,
        labels,
        features,
        options,
        classes,
    })
}

/// Scored candidate pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub pairs: Vec<(usize, usize)>,
    pub scores: Vec<f64>,
    pub threshold: f64,
    pub predicted: Vec<(usize, usize)>,
}

impl ReconstructionResult {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Scores every distinct candidate pair (order of first occurrence kept,
/// `(u, v)` and `(v, u)` are the same pair). Each node is queried once.
pub fn reconstruct(
    model: &AttackModel,
    oracle: &dyn PosteriorQuery,
    candidates: &[(usize, usize)],
) -> Result<ReconstructionResult> {
    let threshold = 0.5;
    let mut seen = std::collections::HashSet::with_capacity(candidates.len());
    let mut pairs = Vec::with_capacity(candidates.len());
    for &(u, v) in candidates {
        if u == v {
            return Err(Error::InvalidArgument(format!("self pair ({u}, {u})")));
        }
        let p = (u.min(v), u.max(v));
        if seen.insert(p) {
            pairs.push(p);
        }
    }
    if pairs.is_empty() {
        return Ok(ReconstructionResult {
            pairs,
            scores: Vec::new(),
            threshold,
            predicted: Vec::new(),
        });
    }
    let cache = PosteriorCache::fetch(oracle, pairs.iter().flat_map(|&(u, v)| [u, v]))?;
    if oracle.num_classes() != model.classes {
        return Err(Error::ShapeMismatch(format!(
            "attack model trained on {} classes, oracle returns {}",
            model.classes,
            oracle.num_classes()
        )));
    }
    let features = cache.features(&pairs, model.options, model.classes);
    let scores = model.score(&features);
    let predicted = pairs
        .iter()
        .zip(&scores)
        .filter(|(_, &s)| s >= threshold)
        .map(|(&p, _)| p)
        .collect();
    Ok(ReconstructionResult {
        pairs,
        scores,
        threshold,
        predicted,
    })
}

/// Ground-truth labels for evaluation pairs. Only the evaluator reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct SealedLabels(Vec<bool>);

impl SealedLabels {
    pub(crate) fn new(labels: Vec<bool>) -> Self {
        Self(labels)
    }

    pub fn reveal(&self) -> &[bool] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationPairs {
    pub pairs: Vec<(usize, usize)>,
    pub labels: SealedLabels,
}

/// Every ground-truth edge inside `target` plus as many uniform non-edges
/// inside `target`, shuffled together.
pub fn default_evaluation_pairs(ground_truth: &Graph, target: &[usize], seed: u64) -> Result<EvaluationPairs> {
    let mut nodes = target.to_vec();
    nodes.sort_unstable();
    nodes.dedup();
    if let Some(&bad) = nodes.iter().find(|&&u| u >= ground_truth.num_nodes()) {
        return Err(Error::InvalidNode {
            id: bad,
            num_nodes: ground_truth.num_nodes(),
        });
    }
    let sub = ClientGraph::induced(ground_truth, nodes)?;
    if sub.graph.num_edges() == 0 {
        return Err(Error::InvalidArgument("target node set has no internal edges".into()));
    }
    let mut rng = stream(seed, &[tag::EVAL_PAIRS]);
    let negatives = sample_non_edges(&sub.graph, sub.graph.num_edges(), &mut rng);
    let mut labelled: Vec<((usize, usize), bool)> = sub
        .graph
        .edges()
        .iter()
        .map(|&e| (e, true))
        .chain(negatives.into_iter().map(|e| (e, false)))
        .map(|((u, v), l)| ((sub.global_id(u), sub.global_id(v)), l))
        .collect();
    labelled.shuffle(&mut rng);
    let (pairs, labels) = labelled.into_iter().unzip();
    Ok(EvaluationPairs {
        pairs,
        labels: SealedLabels::new(labels),
    })
}

/// Largest target set [`all_pairs_evaluation`] accepts.
pub const MAX_ALL_PAIRS_NODES: usize = 2000;

/// Every unordered pair inside `target`, labelled by the ground truth, in
/// lexicographic order. Quadratic, so only for small graphs.
pub fn all_pairs_evaluation(ground_truth: &Graph, target: &[usize]) -> Result<EvaluationPairs> {
    let mut nodes = target.to_vec();
    nodes.sort_unstable();
    nodes.dedup();
    if let Some(&bad) = nodes.iter().find(|&&u| u >= ground_truth.num_nodes()) {
        return Err(Error::InvalidNode {
            id: bad,
            num_nodes: ground_truth.num_nodes(),
        });
    }
    if nodes.len() > MAX_ALL_PAIRS_NODES {
        return Err(Error::InvalidArgument(format!(
            "all-pairs evaluation over {} nodes exceeds the limit of {MAX_ALL_PAIRS_NODES}",
            nodes.len()
        )));
    }
    let mut pairs = Vec::with_capacity(nodes.len() * nodes.len().saturating_sub(1) / 2);
    let mut labels = Vec::with_capacity(pairs.capacity());
    for (i, &u) in nodes.iter().enumerate() {
        for &v in &nodes[i + 1..] {
            pairs.push((u, v));
            labels.push(ground_truth.has_edge(u, v));
        }
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::InvalidArgument(
            "all-pairs evaluation needs both edges and non-edges".into(),
        ));
    }
    Ok(EvaluationPairs {
        pairs,
        labels: SealedLabels::new(labels),
    })
}
