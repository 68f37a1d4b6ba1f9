//! In-memory pipeline stages shared by the commands and the sweep runner.

use gflsim_core::attack::{
    all_pairs_evaluation, build_shadow_set, default_evaluation_pairs, reconstruct, train_attack_model, PosteriorQuery,
    ReconstructionResult, TrainedAttack,
};
use gflsim_core::eval::{full_report, MetricReport, ReportInputs};
use gflsim_core::federation::{run_training, PosteriorOracle, TrainingOutcome};
use gflsim_core::graph::{
    generate_sbm, load_graph, make_split, partition_graph, ClientGraph, DataSplit, Graph, Partition,
};
use gflsim_core::manipulation::{homophily_report, Histogram};
use gflsim_core::nn::ModelState;
use ndarray::Array2;

use crate::config::{AttackSection, DataSource, ExperimentConfig, PairUniverse, TargetRule};
use crate::error::{CliError, CliResult, Stage, StageExt};

/// Graph, split and client partition for one seed.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: Graph,
    pub split: DataSplit,
    pub partition: Partition,
}

impl Dataset {
    pub fn malicious(&self) -> &ClientGraph {
        self.partition.malicious()
    }
}

pub fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> CliResult<Dataset> {
    let d = &cfg.dataset;
    let graph = match d.source {
        DataSource::Sbm => generate_sbm(&d.sbm, seed).stage(Stage::Load)?,
        DataSource::Files => {
            let (nodes, edges) = d
                .nodes
                .as_ref()
                .zip(d.edges.as_ref())
                .ok_or_else(|| CliError::input(Stage::Load, "dataset files are not configured"))?;
            load_graph(nodes, edges).stage(Stage::Load)?
        }
    };
    let split = make_split(&graph, d.train_fraction, d.val_fraction, seed).stage(Stage::Load)?;
    let f = &cfg.federation;
    let partition = partition_graph(&graph, f.clients, f.overlap, f.malicious_client, seed).stage(Stage::Load)?;
    Ok(Dataset {
        graph,
        split,
        partition,
    })
}

/// Federated training; the benign baseline when manipulation is disabled.
pub fn train(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> CliResult<TrainingOutcome> {
    run_training(
        cfg.federation.to_config(seed),
        data.partition.clone(),
        &data.graph,
        &data.split,
        cfg.manipulation.to_config(),
    )
    .stage(Stage::Train)
}

/// What the attack stage needs from training.
#[derive(Debug, Clone, Copy)]
pub struct TrainedView<'a> {
    pub global_model: &'a ModelState,
    /// Final features the malicious client trained on, `None` when benign.
    pub manipulated: Option<&'a Array2<f64>>,
}

impl<'a> TrainedView<'a> {
    pub fn of(outcome: &'a TrainingOutcome) -> Self {
        Self {
            global_model: &outcome.state.global_model,
            manipulated: outcome
                .attacker
                .as_ref()
                .map(|a| a.manipulated_features(&outcome.state)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub report: MetricReport,
    pub reconstruction: ReconstructionResult,
    pub attack: TrainedAttack,
    pub queries: u64,
    /// Feature cosine histograms of the malicious client's edges, clean and
    /// (when manipulated) as trained on.
    pub clean_histogram: Histogram,
    pub manipulated_histogram: Option<Histogram>,
}

/// The attacker's side: it holds its own subgraph, a query handle and the
/// candidate pairs, and nothing else.
pub fn attacker_reconstruct(
    malicious: &ClientGraph,
    oracle: &dyn PosteriorQuery,
    candidates: &[(usize, usize)],
    settings: &AttackSection,
    seed: u64,
) -> CliResult<(TrainedAttack, ReconstructionResult)> {
    let shadow =
        build_shadow_set(malicious, oracle, settings.negative_ratio, settings.features(), seed).stage(Stage::Attack)?;
    let trained = train_attack_model(&shadow, &settings.training(), seed).stage(Stage::Attack)?;
    let rec = reconstruct(&trained.model, oracle, candidates).stage(Stage::Attack)?;
    Ok((trained, rec))
}

fn target_nodes(rule: TargetRule, data: &Dataset) -> Vec<usize> {
    let n = data.graph.num_nodes();
    match rule {
        TargetRule::All => (0..n).collect(),
        TargetRule::Benign => {
            let m = data.malicious();
            (0..n).filter(|&u| m.local_id(u).is_none()).collect()
        }
    }
}

/// Serves the trained model, runs the attacker and scores the result.
/// Evaluation pairs and defense noise follow the run seed; shadow sampling
/// and attack training follow `attack.seed` when set.
pub fn attack_and_evaluate(
    cfg: &ExperimentConfig,
    data: &Dataset,
    trained: TrainedView<'_>,
    seed: u64,
) -> CliResult<AttackOutcome> {
    let oracle = PosteriorOracle::new(
        trained.global_model,
        &data.graph,
        cfg.defense.setting(),
        cfg.defense.query_budget,
        seed,
    )
    .stage(Stage::Attack)?;
    let target = target_nodes(cfg.evaluation.target, data);
    let evaluation = match cfg.evaluation.pairs {
        PairUniverse::Balanced => default_evaluation_pairs(&data.graph, &target, seed),
        PairUniverse::All => all_pairs_evaluation(&data.graph, &target),
    }
    .stage(Stage::Evaluate)?;

    let attack_seed = cfg.attack.seed.unwrap_or(seed);
    let (attack, reconstruction) =
        attacker_reconstruct(data.malicious(), &oracle, &evaluation.pairs, &cfg.attack, attack_seed)?;
    let queries = oracle.queries_served();

    let served = oracle.served_posteriors();
    let config_hash = cfg.hash();
    let report = full_report(&ReportInputs {
        reconstruction: &reconstruction,
        evaluation: &evaluation,
        served_posteriors: &served,
        ground_truth: &data.graph,
        test_mask: &data.split.test,
        global_model: trained.global_model,
        malicious: data.malicious(),
        manipulated_features: trained.manipulated,
        similarity: cfg.evaluation.similarity,
        seed,
        config_hash: &config_hash,
    })
    .stage(Stage::Evaluate)?;

    let m = &data.malicious().graph;
    Ok(AttackOutcome {
        report,
        reconstruction,
        attack,
        queries,
        clean_histogram: homophily_report(m, m.features()),
        manipulated_histogram: trained.manipulated.map(|x| homophily_report(m, x)),
    })
}

/// Train then attack, all in memory.
pub fn run_once(cfg: &ExperimentConfig, seed: u64) -> CliResult<(TrainingOutcome, AttackOutcome)> {
    let data = load_dataset(cfg, seed)?;
    let outcome = train(cfg, &data, seed)?;
    let attack = attack_and_evaluate(cfg, &data, TrainedView::of(&outcome), seed)?;
    Ok((outcome, attack))
}
