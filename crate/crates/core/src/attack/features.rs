//! Pairwise features of two posterior vectors: eight scalar distances
//! followed by four element-wise blocks of width `C`.

use serde::{Deserialize, Serialize};

pub const NUM_DISTANCES: usize = 8;
pub const NUM_BLOCKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    Cosine,
    Euclidean,
    Correlation,
    Chebyshev,
    BrayCurtis,
    Manhattan,
    Canberra,
    SqEuclidean,
}

impl Distance {
    /// Storage order inside [`PairFeatures`].
    pub const ALL: [Distance; NUM_DISTANCES] = [
        Distance::Cosine,
        Distance::Euclidean,
        Distance::Correlation,
        Distance::Chebyshev,
        Distance::BrayCurtis,
        Distance::Manhattan,
        Distance::Canberra,
        Distance::SqEuclidean,
    ];

    pub fn compute(self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            Distance::Cosine => {
                if a == b && a.iter().any(|&v| v != 0.0) {
                    0.0
                } else {
                    1.0 - cosine_similarity(a, b)
                }
            }
            Distance::Euclidean => Distance::SqEuclidean.compute(a, b).sqrt(),
            Distance::Correlation => {
                if a == b && !is_constant(a) {
                    return 0.0;
                }
                let ca = centered(a);
                let cb = centered(b);
                1.0 - cosine_similarity(&ca, &cb)
            }
            Distance::Chebyshev => diffs.fold(0.0, f64::max),
            Distance::BrayCurtis => {
                let num: f64 = diffs.sum();
                let den: f64 = a.iter().zip(b).map(|(x, y)| (x + y).abs()).sum();
                if den == 0.0 {
                    0.0
                } else {
                    num / den
                }
            }
            Distance::Manhattan => diffs.sum(),
            Distance::Canberra => a
                .iter()
                .zip(b)
                .map(|(x, y)| {
                    let den = x.abs() + y.abs();
                    if den == 0.0 {
                        0.0
                    } else {
                        (x - y).abs() / den
                    }
                })
                .sum(),
            Distance::SqEuclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        }
    }
}

fn is_constant(a: &[f64]) -> bool {
    a.iter().all(|&v| v == a[0])
}

fn centered(a: &[f64]) -> Vec<f64> {
    let mean = a.iter().sum::<f64>() / a.len() as f64;
    a.iter().map(|v| v - mean).collect()
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Optional extras beyond the default layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureOptions {
    /// Appends the Shannon entropy of each element-wise block (normalised
    /// by its absolute sum) as four extra scalars after the distances.
    #[serde(default)]
    pub entropy_summary: bool,
}

impl FeatureOptions {
    pub fn num_scalars(&self) -> usize {
        NUM_DISTANCES + if self.entropy_summary { NUM_BLOCKS } else { 0 }
    }

    pub fn dim(&self, classes: usize) -> usize {
        self.num_scalars() + NUM_BLOCKS * classes
    }
}

/// Flat feature vector: scalars first, then the average, weighted-L1,
/// hadamard and weighted-L2 blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures {
    pub values: Vec<f64>,
    pub num_scalars: usize,
    pub classes: usize,
}

impl PairFeatures {
    pub fn distances(&self) -> &[f64] {
        &self.values[..NUM_DISTANCES]
    }

    pub fn distance(&self, d: Distance) -> f64 {
        let idx = Distance::ALL.iter().position(|&x| x == d).expect("listed");
        self.values[idx]
    }

    pub fn block(&self, i: usize) -> &[f64] {
        let start = self.num_scalars + i * self.classes;
        &self.values[start..start + self.classes]
    }
}

pub fn pair_features(fu: &[f64], fv: &[f64]) -> PairFeatures {
    pair_features_with(fu, fv, FeatureOptions::default())
}

pub fn pair_features_with(fu: &[f64], fv: &[f64], opts: FeatureOptions) -> PairFeatures {
    assert_eq!(fu.len(), fv.len(), "posterior widths differ");
    let c = fu.len();
    let mut values = Vec::with_capacity(opts.dim(c));
    values.extend(Distance::ALL.iter().map(|d| d.compute(fu, fv)));

    let average: Vec<f64> = fu.iter().zip(fv).map(|(a, b)| (a + b) / 2.0).collect();
    let l1: Vec<f64> = fu.iter().zip(fv).map(|(a, b)| (a - b).abs()).collect();
    let hadamard: Vec<f64> = fu.iter().zip(fv).map(|(a, b)| a * b).collect();
    let l2: Vec<f64> = l1.iter().map(|d| d * d).collect();
    let blocks = [average, l1, hadamard, l2];

    if opts.entropy_summary {
        values.extend(blocks.iter().map(|b| block_entropy(b)));
    }
    for b in &blocks {
        values.extend_from_slice(b);
    }
    PairFeatures {
        values,
        num_scalars: opts.num_scalars(),
        classes: c,
    }
}

fn block_entropy(block: &[f64]) -> f64 {
    let total: f64 = block.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return 0.0;
    }
    -block
        .iter()
        .map(|v| v.abs() / total)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}
