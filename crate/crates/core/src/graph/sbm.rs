use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

/// Planted-partition stochastic block model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmParams {
    pub num_blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_shift: f64,
}

/// Generates a planted-partition graph. Node `i` belongs to block
/// `i / nodes_per_block`, which is also its label. Features are standard
/// normal plus `feature_shift` along axis `block % feature_dim`.
pub fn generate_sbm(params: &SbmParams, seed: u64) -> Result<Graph> {
    let SbmParams {
        num_blocks,
        nodes_per_block,
        p_in,
        p_out,
        feature_dim,
        feature_shift,
    } = *params;
    if num_blocks == 0 || nodes_per_block == 0 || feature_dim == 0 {
        return Err(Error::InvalidArgument(
            "block count, block size and feature dimension must be at least 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=p_in).contains(&p_out) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}"
        )));
    }
    if !feature_shift.is_finite() {
        return Err(Error::InvalidArgument("feature_shift must be finite".into()));
    }

    let n = num_blocks * nodes_per_block;
    let block = |u: usize| u / nodes_per_block;

    let mut rng = stream(seed, &[tag::SBM, 0]);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if block(u) == block(v) { p_in } else { p_out };
            // Always draw so the stream position depends only on (u, v).
            let r: f64 = rng.random();
            if r < p {
                edges.push((u, v));
            }
        }
    }

    let mut rng = stream(seed, &[tag::SBM, 1]);
    let mut features = Array2::zeros((n, feature_dim));
    for u in 0..n {
        for j in 0..feature_dim {
            features[[u, j]] = rng.sample::<f64, _>(StandardNormal);
        }
        features[[u, block(u) % feature_dim]] += feature_shift;
    }

    let labels = (0..n).map(block).collect();
    Graph::new(features, labels, num_blocks, edges)
}
