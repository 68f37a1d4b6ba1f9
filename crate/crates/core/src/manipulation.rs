//! Feature manipulation by the malicious client.
//!
//! The objective minimised over the client's node features is
//!
//! ```text
//! J = lambda * CE(f, smoothed targets)
//!   + alpha  * sum_{(u,v) in E}      |f(u) - f(v)|^2
//!   - beta   * sum_{(u,v) sampled not in E} (1 - cos(f(u), f(v)))^2
//! ```
//!
//! so that connected nodes are pulled together, sampled unconnected nodes
//! are pushed apart and the classification loss stays low. Each step moves
//! the features against `dJ/dX` and clips every column back into the range
//! it had in the clean data. Edges and labels are never touched.

use ndarray::{Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::attack::cosine_similarity;
use crate::error::{Error, Result};
use crate::graph::{sample_non_edges, Graph};
use crate::nn::{backward_external, forward, one_hot, ModelState, LOG_FLOOR};
use crate::rng::{stream, tag};

/// What the label-smoothing mass is divided by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingDenominator {
    /// `eps / C`: rows stay stochastic.
    #[default]
    Classes,
    /// `eps / CE`, using the model's clean cross-entropy. Rows are not
    /// normalised in this mode.
    Loss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManipulationConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub step_size: f64,
    pub steps: usize,
    pub negative_sample_ratio: f64,
    pub smoothing: SmoothingDenominator,
}

impl Default for ManipulationConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.01,
            lambda: 1.0,
            epsilon: 0.1,
            step_size: 0.01,
            steps: 100,
            negative_sample_ratio: 1.0,
            smoothing: SmoothingDenominator::Classes,
        }
    }
}

impl ManipulationConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha >= 0.0
            && self.beta >= 0.0
            && self.lambda >= 0.0
            && (0.0..1.0).contains(&self.epsilon)
            && self.step_size >= 0.0
            && self.step_size.is_finite()
            && self.negative_sample_ratio >= 0.0
            && self.negative_sample_ratio.is_finite();
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid manipulation config {self:?}")));
        }
        Ok(())
    }

    /// All penalties and smoothing off: the manipulated client behaves
    /// exactly like a benign one.
    pub fn inert() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            epsilon: 0.0,
            step_size: 0.0,
            ..Self::default()
        }
    }
}

/// `onehot * (1 - eps) + eps / C`.
pub fn smooth_labels(labels: &[usize], epsilon: f64, classes: usize) -> Array2<f64> {
    smooth_labels_with(labels, epsilon, classes, classes as f64)
}

/// `onehot * (1 - eps) + eps / denominator`.
pub fn smooth_labels_with(labels: &[usize], epsilon: f64, classes: usize, denominator: f64) -> Array2<f64> {
    let mut out = one_hot(labels, classes);
    if epsilon == 0.0 {
        return out;
    }
    out.mapv_inplace(|y| y * (1.0 - epsilon) + epsilon / denominator);
    out
}

/// `sum over edges of |f(u) - f(v)|^2`.
pub fn attraction_term(posteriors: &Array2<f64>, edges: &[(usize, usize)]) -> f64 {
    edges
        .iter()
        .map(|&(u, v)| {
            posteriors
                .row(u)
                .iter()
                .zip(posteriors.row(v))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum()
}

/// `sum over pairs of (1 - cos(f(u), f(v)))^2`.
pub fn repulsion_term(posteriors: &Array2<f64>, non_edges: &[(usize, usize)]) -> f64 {
    non_edges
        .iter()
        .map(|&(u, v)| {
            let c = cosine_similarity(&posteriors.row(u).to_vec(), &posteriors.row(v).to_vec());
            (1.0 - c) * (1.0 - c)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub total: f64,
    pub cross_entropy: f64,
    pub attraction: f64,
    pub repulsion: f64,
}

/// Gradient of cos(a, b) with respect to `a`; zero at a zero vector.
fn cosine_grad(a: &[f64], b: &[f64]) -> Vec<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return vec![0.0; a.len()];
    }
    let cos = cosine_similarity(a, b);
    a.iter()
        .zip(b)
        .map(|(&x, &y)| y / (na * nb) - cos * x / (na * na))
        .collect()
}

/// Value of `J` on `posteriors` and its exact gradient `dJ/dposteriors`.
/// Cross-entropy is the mean over `mask`.
pub fn combined_objective(
    posteriors: &Array2<f64>,
    config: &ManipulationConfig,
    targets: &Array2<f64>,
    mask: &[usize],
    edges: &[(usize, usize)],
    non_edges: &[(usize, usize)],
) -> (ObjectiveValue, Array2<f64>) {
    let mut grad = Array2::zeros(posteriors.dim());

    let mut ce = 0.0;
    if !mask.is_empty() {
        let scale = 1.0 / mask.len() as f64;
        for &u in mask {
            for c in 0..posteriors.ncols() {
                let t = targets[[u, c]];
                if t != 0.0 {
                    let q = posteriors[[u, c]] + LOG_FLOOR;
                    ce -= t * q.ln();
                    grad[[u, c]] -= config.lambda * scale * t / q;
                }
            }
        }
        ce *= scale;
    }

    let attraction = attraction_term(posteriors, edges);
    if config.alpha != 0.0 {
        for &(u, v) in edges {
            let diff = &posteriors.row(u) - &posteriors.row(v);
            grad.row_mut(u).scaled_add(2.0 * config.alpha, &diff);
            grad.row_mut(v).scaled_add(-2.0 * config.alpha, &diff);
        }
    }

    let repulsion = repulsion_term(posteriors, non_edges);
    if config.beta != 0.0 {
        for &(u, v) in non_edges {
            let a = posteriors.row(u).to_vec();
            let b = posteriors.row(v).to_vec();
            let cos = cosine_similarity(&a, &b);
            // d/dcos of -beta (1 - cos)^2 = 2 beta (1 - cos)
            let outer = 2.0 * config.beta * (1.0 - cos);
            for (c, g) in cosine_grad(&a, &b).into_iter().enumerate() {
                grad[[u, c]] += outer * g;
            }
            for (c, g) in cosine_grad(&b, &a).into_iter().enumerate() {
                grad[[v, c]] += outer * g;
            }
        }
    }

    let total = config.lambda * ce + config.alpha * attraction - config.beta * repulsion;
    (
        ObjectiveValue {
            total,
            cross_entropy: ce,
            attraction,
            repulsion,
        },
        grad,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveStep {
    pub step: usize,
    pub value: ObjectiveValue,
}

/// Output of [`pgd_manipulate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ManipulatedDataset {
    pub original: Array2<f64>,
    pub manipulated: Array2<f64>,
    pub targets: Array2<f64>,
    /// `J` before each update, plus one final entry after the last update.
    pub trace: Vec<ObjectiveStep>,
}

/// Per-column `[min, max]` of the clean features.
pub fn projection_box(x: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let lo = x
        .axis_iter(Axis(1))
        .map(|c| c.fold(f64::INFINITY, |a, &b| a.min(b)))
        .collect();
    let hi = x
        .axis_iter(Axis(1))
        .map(|c| c.fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
        .collect();
    (lo, hi)
}

/// Smoothed targets for the malicious client under `config`.
pub fn manipulation_targets(
    model: &ModelState,
    g: &Graph,
    mask: &[usize],
    config: &ManipulationConfig,
) -> Result<Array2<f64>> {
    let c = g.num_classes();
    match config.smoothing {
        SmoothingDenominator::Classes => Ok(smooth_labels(g.labels(), config.epsilon, c)),
        SmoothingDenominator::Loss => {
            let p = forward(model, g, g.features())?.posteriors().clone();
            let ce = crate::nn::cross_entropy(&p, &one_hot(g.labels(), c), mask);
            Ok(smooth_labels_with(g.labels(), config.epsilon, c, ce.max(LOG_FLOOR)))
        }
    }
}

/// Projected gradient descent on node features.
///
/// Starts from `start` (usually the clean features), projects into the
/// per-column box of `reference`, and resamples
/// `round(ratio * |E|)` non-edges at every step from `(seed, step)`.
#[allow(clippy::too_many_arguments)]
pub fn pgd_manipulate(
    model: &ModelState,
    g: &Graph,
    reference: &Array2<f64>,
    start: &Array2<f64>,
    targets: &Array2<f64>,
    mask: &[usize],
    config: &ManipulationConfig,
    seed: u64,
) -> Result<ManipulatedDataset> {
    config.validate()?;
    if start.dim() != reference.dim() || start.dim() != (g.num_nodes(), model.feature_dim) {
        return Err(Error::ShapeMismatch(format!(
            "features {:?} / reference {:?} for {} nodes x {} features",
            start.dim(),
            reference.dim(),
            g.num_nodes(),
            model.feature_dim
        )));
    }
    let (lo, hi) = projection_box(reference);
    let samples = (config.negative_sample_ratio * g.num_edges() as f64).round() as usize;
    let mut x = start.clone();
    let mut trace = Vec::with_capacity(config.steps + 1);

    let evaluate = |x: &Array2<f64>, step: usize| -> Result<(ObjectiveValue, Option<Array2<f64>>)> {
        let non_edges = sample_non_edges(g, samples, &mut stream(seed, &[tag::PGD, step as u64]));
        let tape = forward(model, g, x)?;
        let (value, upstream) = combined_objective(tape.posteriors(), config, targets, mask, g.edges(), &non_edges);
        if !value.total.is_finite() {
            return Err(Error::NonFinite(format!("objective at step {step}")));
        }
        if step == config.steps || config.step_size == 0.0 {
            return Ok((value, None));
        }
        let grads = backward_external(model, g, tape, &upstream)?;
        Ok((value, Some(grads.inputs)))
    };

    for step in 0..config.steps {
        let (value, grad) = evaluate(&x, step)?;
        trace.push(ObjectiveStep { step, value });
        if let Some(grad) = grad {
            x.scaled_add(-config.step_size, &grad);
            for mut row in x.rows_mut() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = v.clamp(lo[j], hi[j]);
                }
            }
        }
    }
    let (value, _) = evaluate(&x, config.steps)?;
    trace.push(ObjectiveStep {
        step: config.steps,
        value,
    });

    Ok(ManipulatedDataset {
        original: start.clone(),
        manipulated: x,
        targets: targets.clone(),
        trace,
    })
}

pub const HISTOGRAM_BINS: usize = 64;

/// Cosine-similarity histogram over the connected pairs of a graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bin_edges(i: usize) -> (f64, f64) {
        let width = 2.0 / HISTOGRAM_BINS as f64;
        (-1.0 + i as f64 * width, -1.0 + (i + 1) as f64 * width)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// L1 distance between the normalised histograms, in `[0, 2]`.
    pub fn l1_distance(&self, other: &Histogram) -> f64 {
        let (ta, tb) = (self.total() as f64, other.total() as f64);
        if ta == 0.0 || tb == 0.0 {
            return if ta == tb { 0.0 } else { 1.0 };
        }
        self.counts
            .iter()
            .zip(&other.counts)
            .map(|(&a, &b)| (a as f64 / ta - b as f64 / tb).abs())
            .sum()
    }
}

/// Histogram of `cos(rows[u], rows[v])` over every edge, where `rows` is
/// either a feature or a posterior matrix.
pub fn homophily_report(g: &Graph, rows: &Array2<f64>) -> Histogram {
    let mut counts = vec![0u64; HISTOGRAM_BINS];
    for &(u, v) in g.edges() {
        let c = cosine_similarity(&rows.row(u).to_vec(), &rows.row(v).to_vec());
        let bin = (((c + 1.0) / 2.0) * HISTOGRAM_BINS as f64).floor() as usize;
        counts[bin.min(HISTOGRAM_BINS - 1)] += 1;
    }
    Histogram { counts }
}

/// True if every entry of `x` lies in the per-column box of `reference`.
pub fn within_box(x: &Array2<f64>, reference: &Array2<f64>) -> bool {
    let (lo, hi) = projection_box(reference);
    let mut ok = true;
    Zip::indexed(x).for_each(|(_, j), &v| ok &= v >= lo[j] && v <= hi[j]);
    ok
}
