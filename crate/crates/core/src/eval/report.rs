use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attack::{EvaluationPairs, ReconstructionResult};
use crate::error::{Error, Result};
use crate::graph::{ClientGraph, Graph};
use crate::manipulation::homophily_report;
use crate::nn::{predict, ModelState};

use super::metrics::{accuracy, auc, auc_cus, precision_metrics, Similarity};

/// Flat run summary. Every field except `hist_overlap_l1` (in [0, 2]),
/// `seed` and `config_hash` lies in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub attack_auc: f64,
    pub attack_precision: f64,
    pub attack_ap: f64,
    pub main_acc: f64,
    pub auc_cus_before: f64,
    pub auc_cus_after: f64,
    pub hist_overlap_l1: f64,
    pub seed: u64,
    pub config_hash: String,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidArgument(format!("report JSON: {e}")))
    }
}

/// Everything the evaluator joins to score one run.
#[derive(Debug, Clone, Copy)]
pub struct ReportInputs<'a> {
    pub reconstruction: &'a ReconstructionResult,
    pub evaluation: &'a EvaluationPairs,
    /// Posteriors the inference service returns for every node.
    pub served_posteriors: &'a Array2<f64>,
    pub ground_truth: &'a Graph,
    pub test_mask: &'a [usize],
    pub global_model: &'a ModelState,
    pub malicious: &'a ClientGraph,
    /// Final manipulated features of the malicious client, `None` for
    /// benign runs.
    pub manipulated_features: Option<&'a Array2<f64>>,
    pub similarity: Similarity,
    pub seed: u64,
    pub config_hash: &'a str,
}

/// Attack metrics are computed over the evaluation pairs. The stealth pair
/// compares the malicious client's clean and manipulated data: AUC-CUS of
/// the final global model's posteriors on that subgraph, and the L1
/// distance between the connected-pair feature cosine histograms.
pub fn full_report(inputs: &ReportInputs<'_>) -> Result<MetricReport> {
    let rec = inputs.reconstruction;
    let truth: HashMap<(usize, usize), bool> = inputs
        .evaluation
        .pairs
        .iter()
        .map(|&(u, v)| (u.min(v), u.max(v)))
        .zip(inputs.evaluation.labels.reveal().iter().copied())
        .collect();
    let labels = rec
        .pairs
        .iter()
        .map(|p| {
            truth
                .get(p)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("scored pair {p:?} is not an evaluation pair")))
        })
        .collect::<Result<Vec<bool>>>()?;
    let attack_auc = auc(&rec.scores, &labels)?;
    let (attack_precision, attack_ap) = precision_metrics(&rec.scores, &labels, rec.threshold)?;

    let main_acc = accuracy(inputs.served_posteriors, inputs.ground_truth.labels(), inputs.test_mask);

    let g_m = &inputs.malicious.graph;
    let clean = g_m.features();
    let after_x = inputs.manipulated_features.unwrap_or(clean);
    let before_p = predict(inputs.global_model, g_m, clean)?;
    let after_p = predict(inputs.global_model, g_m, after_x)?;
    let auc_cus_before = auc_cus(g_m, &before_p, inputs.similarity, inputs.seed)?;
    let auc_cus_after = auc_cus(g_m, &after_p, inputs.similarity, inputs.seed)?;
    let hist_overlap_l1 = homophily_report(g_m, clean).l1_distance(&homophily_report(g_m, after_x));

    Ok(MetricReport {
        attack_auc,
        attack_precision,
        attack_ap,
        main_acc,
        auc_cus_before,
        auc_cus_after,
        hist_overlap_l1,
        seed: inputs.seed,
        config_hash: inputs.config_hash.to_string(),
    })
}
