mod common;

use std::collections::BTreeSet;
use std::sync::Mutex;

use gflsim_core::attack::{
    all_pairs_evaluation, build_shadow_set, default_evaluation_pairs, reconstruct, train_attack_model, AttackTraining,
    FeatureOptions, PosteriorQuery,
};
use gflsim_core::eval::{full_report, DefenseSetting, ReportInputs, Similarity};
use gflsim_core::federation::{run_training, FederationConfig, PosteriorOracle};
use gflsim_core::nn::{predict, ArchKind, ModelArch};
use gflsim_core::Result;
use ndarray::Array2;

/// Serves fixed posteriors and records every queried id.
struct Recorder {
    posteriors: Array2<f64>,
    log: Mutex<Vec<usize>>,
}

impl Recorder {
    fn new(posteriors: Array2<f64>) -> Self {
        Self {
            posteriors,
            log: Mutex::new(Vec::new()),
        }
    }

    fn queried(&self) -> Vec<usize> {
        self.log.lock().unwrap().clone()
    }
}

impl PosteriorQuery for Recorder {
    fn num_classes(&self) -> usize {
        self.posteriors.ncols()
    }

    fn query(&self, nodes: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.log.lock().unwrap().extend_from_slice(nodes);
        Ok(nodes.iter().map(|&u| self.posteriors.row(u).to_vec()).collect())
    }
}

fn trained_recorder(seed: u64) -> (gflsim_core::graph::Graph, gflsim_core::graph::Partition, Recorder) {
    let (g, part, split) = common::setup(seed);
    let cfg = FederationConfig {
        rounds: 20,
        ..FederationConfig::new(ModelArch::new(ArchKind::Gcn), seed)
    };
    let out = run_training(cfg, part.clone(), &g, &split, None).unwrap();
    let p = predict(&out.state.global_model, &g, g.features()).unwrap();
    (g, part, Recorder::new(p))
}

#[test]
fn shadow_set_accounting_and_provenance() {
    let (_, part, oracle) = trained_recorder(1);
    let m = part.malicious();
    let shadow = build_shadow_set(m, &oracle, 1.0, FeatureOptions::default(), 3).unwrap();
    let e = m.graph.num_edges();
    assert_eq!(shadow.num_positives(), e);
    assert_eq!(shadow.num_negatives(), e);
    let own: BTreeSet<usize> = m.local_to_global.iter().copied().collect();
    assert!(oracle.queried().iter().all(|u| own.contains(u)));
    let distinct: BTreeSet<usize> = oracle.queried().into_iter().collect();
    assert_eq!(distinct.len(), oracle.queried().len());

    let global_edges: BTreeSet<(usize, usize)> = m
        .graph
        .edges()
        .iter()
        .map(|&(u, v)| (m.global_id(u), m.global_id(v)))
        .collect();
    for (p, &l) in shadow.pairs.iter().zip(&shadow.labels) {
        assert_eq!(global_edges.contains(p), l);
    }
    assert_eq!(shadow.features.dim(), (2 * e, 8 + 4 * 4));

    let again = build_shadow_set(m, &oracle, 1.0, FeatureOptions::default(), 3).unwrap();
    assert_eq!(again.pairs, shadow.pairs);
    let half = build_shadow_set(m, &oracle, 0.5, FeatureOptions::default(), 3).unwrap();
    assert_eq!(half.num_negatives(), (0.5 * e as f64).round() as usize);
}

#[test]
fn reconstruction_caches_and_dedups() {
    let (g, part, oracle) = trained_recorder(2);
    let shadow = build_shadow_set(part.malicious(), &oracle, 1.0, FeatureOptions::default(), 1).unwrap();
    let trained = train_attack_model(&shadow, &AttackTraining::default(), 1).unwrap();

    let before = oracle.queried().len();
    let empty = reconstruct(&trained.model, &oracle, &[]).unwrap();
    assert!(empty.is_empty() && empty.predicted.is_empty());
    assert_eq!(oracle.queried().len(), before);

    let candidates = [(1, 2), (2, 1), (5, 1), (1, 2), (7, 9)];
    let rec = reconstruct(&trained.model, &oracle, &candidates).unwrap();
    assert_eq!(rec.pairs, vec![(1, 2), (1, 5), (7, 9)]);
    assert_eq!(rec.scores.len(), 3);
    assert!(rec.scores.iter().all(|&s| s > 0.0 && s < 1.0));
    assert!(rec.predicted.iter().all(|p| rec.pairs.contains(p)));
    assert_eq!(oracle.queried()[before..], [1, 2, 5, 7, 9]);
    assert!(reconstruct(&trained.model, &oracle, &[(3, 3)]).is_err());
    assert!(g.num_nodes() > 9);
}

#[test]
fn scores_depend_only_on_the_posteriors() {
    let (_, part, oracle) = trained_recorder(3);
    let shadow = build_shadow_set(part.malicious(), &oracle, 1.0, FeatureOptions::default(), 1).unwrap();
    let trained = train_attack_model(&shadow, &AttackTraining::default(), 1).unwrap();
    // a second service returning the same rows in the same places
    let clone = Recorder::new(oracle.posteriors.clone());
    let pairs = [(0, 4), (8, 30), (17, 99)];
    let a = reconstruct(&trained.model, &oracle, &pairs).unwrap();
    let b = reconstruct(&trained.model, &clone, &pairs).unwrap();
    assert_eq!(a, b);
}

#[test]
fn evaluation_pairs_are_balanced_and_cover_every_edge() {
    let g = common::small_sbm(4);
    let all: Vec<usize> = (0..g.num_nodes()).collect();
    let ev = default_evaluation_pairs(&g, &all, 5).unwrap();
    let labels = ev.labels.reveal();
    let pos = labels.iter().filter(|&&l| l).count();
    assert_eq!(pos, g.num_edges());
    assert_eq!(labels.len(), 2 * pos);
    for (&(u, v), &l) in ev.pairs.iter().zip(labels) {
        assert_eq!(g.has_edge(u, v), l);
    }
    assert!(default_evaluation_pairs(&g, &[0], 5).is_err());
    assert!(default_evaluation_pairs(&g, &[0, 10_000], 5).is_err());
}

#[test]
fn all_pairs_evaluation_enumerates_the_target_exhaustively() {
    let g = common::small_sbm(4);
    let target: Vec<usize> = (0..30).rev().chain(0..5).collect();
    let ev = all_pairs_evaluation(&g, &target).unwrap();
    assert_eq!(ev.pairs.len(), 30 * 29 / 2);
    let distinct: BTreeSet<_> = ev.pairs.iter().copied().collect();
    assert_eq!(distinct.len(), ev.pairs.len());
    for (&(u, v), &l) in ev.pairs.iter().zip(ev.labels.reveal()) {
        assert!(u < v && v < 30);
        assert_eq!(g.has_edge(u, v), l);
    }
    assert!(all_pairs_evaluation(&g, &[0, 10_000]).is_err());
}

#[test]
fn benign_report_has_unchanged_stealth_metrics() {
    let (g, part, split) = common::setup(5);
    let cfg = FederationConfig {
        rounds: 20,
        ..FederationConfig::new(ModelArch::new(ArchKind::Sage), 5)
    };
    let out = run_training(cfg, part, &g, &split, None).unwrap();
    let oracle = PosteriorOracle::new(&out.state.global_model, &g, DefenseSetting::default(), None, 5).unwrap();
    let shadow = build_shadow_set(out.state.malicious_graph(), &oracle, 1.0, FeatureOptions::default(), 5).unwrap();
    let trained = train_attack_model(&shadow, &AttackTraining::default(), 5).unwrap();
    let all: Vec<usize> = (0..g.num_nodes()).collect();
    let ev = default_evaluation_pairs(&g, &all, 5).unwrap();
    let rec = reconstruct(&trained.model, &oracle, &ev.pairs).unwrap();
    let served = oracle.served_posteriors();
    let report = full_report(&ReportInputs {
        reconstruction: &rec,
        evaluation: &ev,
        served_posteriors: &served,
        ground_truth: &g,
        test_mask: &split.test,
        global_model: &out.state.global_model,
        malicious: out.state.malicious_graph(),
        manipulated_features: None,
        similarity: Similarity::Cosine,
        seed: 5,
        config_hash: "00",
    })
    .unwrap();
    assert_eq!(report.auc_cus_before, report.auc_cus_after);
    assert_eq!(report.hist_overlap_l1, 0.0);
    for v in [
        report.attack_auc,
        report.attack_precision,
        report.attack_ap,
        report.main_acc,
        report.auc_cus_before,
    ] {
        assert!((0.0..=1.0).contains(&v));
    }
    assert!(report.attack_auc > 0.5);
}
