use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attack::Distance;
use crate::error::{Error, Result};
use crate::graph::{sample_non_edges, Graph};
use crate::rng::{stream, tag};

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score".into()));
    }
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass(format!("{pos} positives, {neg} negatives")));
    }
    Ok((pos, neg))
}

/// Indices ordered by ascending score.
fn ascending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

/// ROC AUC through the Mann-Whitney U statistic with average ranks for
/// ties. The rank sum is kept in integers (twice the average rank), so the
/// result is the exactly rounded value of `P(pos > neg) + P(pos = neg) / 2`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let order = ascending(scores);
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the average (i + j + 2) / 2
        let twice_avg = (i + j + 2) as u128;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        twice_rank_sum += twice_avg * tied_pos;
        i = j + 1;
    }
    let p = pos as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Precision of the `score >= threshold` decision; 0 when nothing is
/// predicted positive.
pub fn precision_at(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (mut tp, mut fp) = (0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        if s >= threshold {
            if l {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    Ok(if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    })
}

/// Step-wise area under the precision-recall curve. Tied scores form one
/// threshold.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_inputs(scores, labels)?;
    let mut order = ascending(scores);
    order.reverse();
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let group_pos = order[i..=j].iter().filter(|&&k| labels[k]).count();
        tp += group_pos;
        seen += j - i + 1;
        if group_pos > 0 {
            ap += (group_pos as f64 / pos as f64) * (tp as f64 / seen as f64);
        }
        i = j + 1;
    }
    Ok(ap)
}

/// `(precision at threshold, average precision)`.
pub fn precision_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Result<(f64, f64)> {
    Ok((
        precision_at(scores, labels, threshold)?,
        average_precision(scores, labels)?,
    ))
}

/// Fraction of `mask` whose argmax posterior (lowest index on ties) equals
/// the label.
pub fn accuracy(posteriors: &Array2<f64>, labels: &[usize], mask: &[usize]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    let hits = mask
        .iter()
        .filter(|&&u| {
            let row = posteriors.row(u);
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best == labels[u]
        })
        .count();
    hits as f64 / mask.len() as f64
}

/// Pair similarity used by AUC-CUS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    #[default]
    Cosine,
    /// A distance negated so that larger means more similar.
    NegDistance(Distance),
}

impl Similarity {
    pub fn score(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Similarity::Cosine => crate::attack::cosine_similarity(a, b),
            Similarity::NegDistance(d) => -d.compute(a, b),
        }
    }
}

/// AUC of `similarity` separating connected pairs from an equal-size
/// uniform sample of unconnected pairs.
pub fn auc_cus(g: &Graph, posteriors: &Array2<f64>, similarity: Similarity, seed: u64) -> Result<f64> {
    if g.num_edges() == 0 {
        return Err(Error::SingleClass("graph has no edges".into()));
    }
    let negatives = sample_non_edges(g, g.num_edges(), &mut stream(seed, &[tag::AUC_CUS]));
    let row = |u: usize| posteriors.row(u).to_vec();
    let mut scores = Vec::with_capacity(g.num_edges() + negatives.len());
    let mut labels = Vec::with_capacity(scores.capacity());
    for &(u, v) in g.edges() {
        scores.push(similarity.score(&row(u), &row(v)));
        labels.push(true);
    }
    for &(u, v) in &negatives {
        scores.push(similarity.score(&row(u), &row(v)));
        labels.push(false);
    }
    auc(&scores, &labels)
}
