//! Horizontal federated training with FedAvg and the posterior oracle that
//! serves the trained global model.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::PosteriorQuery;
use crate::error::{Error, Result};
use crate::eval::{accuracy, apply_defense, DefenseSetting};
use crate::graph::{ClientGraph, DataSplit, Graph, Partition};
use crate::manipulation::{manipulation_targets, pgd_manipulate, ManipulationConfig, ObjectiveStep};
use crate::nn::{init_model, one_hot, predict, train_local, Adam, ModelArch, ModelState};
use crate::rng::{derive_seed, stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub server_arch: ModelArch,
    /// Architecture of the attacker's private surrogate. When it equals
    /// `server_arch` the attacker differentiates through its copy of the
    /// global model instead.
    pub malicious_arch: ModelArch,
    pub learning_rate: f64,
    /// Epochs used to fit the surrogate on clean data before round one.
    pub surrogate_epochs: usize,
    pub seed: u64,
}

impl FederationConfig {
    pub fn new(arch: ModelArch, seed: u64) -> Self {
        Self {
            rounds: 100,
            local_epochs: 1,
            server_arch: arch,
            malicious_arch: arch,
            learning_rate: 0.01,
            surrogate_epochs: 100,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.server_arch.validate()?;
        self.malicious_arch.validate()?;
        if self.rounds == 0 || self.local_epochs == 0 {
            return Err(Error::InvalidArgument("rounds and local_epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn is_black_box(&self) -> bool {
        self.server_arch != self.malicious_arch
    }
}

/// Size-weighted parameter average.
pub fn fedavg_aggregate(models: &[&ModelState], sizes: &[usize]) -> Result<ModelState> {
    let first = *models
        .first()
        .ok_or_else(|| Error::InvalidArgument("no client models to aggregate".into()))?;
    if models.len() != sizes.len() {
        return Err(Error::InvalidArgument(format!(
            "{} models but {} sizes",
            models.len(),
            sizes.len()
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument("client sizes must be positive".into()));
    }
    if let Some(i) = models.iter().position(|m| !m.same_shape(first)) {
        return Err(Error::ShapeMismatch(format!("client {i} does not match client 0")));
    }
    let total: usize = sizes.iter().sum();
    let mut out = first.clone();
    for (t, acc) in out.params.iter_mut().enumerate() {
        acc.fill(0.0);
        for (m, &n) in models.iter().zip(sizes) {
            acc.scaled_add(n as f64 / total as f64, &m.params[t]);
        }
    }
    Ok(out)
}

/// Local data and optimizer state of one client.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub model: ModelState,
    pub optimizer: Adam,
    pub features: Array2<f64>,
    pub targets: Array2<f64>,
    pub train_mask: Vec<usize>,
    pub last_loss: f64,
}

/// The attacker's private state across rounds.
#[derive(Debug, Clone)]
pub struct MaliciousClient {
    pub config: ManipulationConfig,
    pub clean_features: Array2<f64>,
    pub surrogate: Option<ModelState>,
    pub last_trace: Vec<ObjectiveStep>,
    seed: u64,
}

impl MaliciousClient {
    pub fn manipulated_features<'a>(&self, state: &'a FederationState) -> &'a Array2<f64> {
        &state.clients[state.partition.malicious_index].features
    }
}

#[derive(Debug, Clone)]
pub struct FederationState {
    pub config: FederationConfig,
    pub partition: Partition,
    pub clients: Vec<ClientState>,
    pub global_model: ModelState,
    pub round_index: usize,
}

impl FederationState {
    /// Every client starts from the same initial global parameters.
    pub fn new(config: FederationConfig, partition: Partition, split: &DataSplit) -> Result<Self> {
        config.validate()?;
        let first = &partition.clients[0].graph;
        let (l, c) = (first.feature_dim(), first.num_classes());
        let global_model = init_model(config.server_arch, l, c, config.seed)?;
        let clients = partition
            .clients
            .iter()
            .enumerate()
            .map(|(i, cg)| {
                let train_mask = split.restrict(|u| cg.local_id(u)).train;
                if train_mask.is_empty() {
                    return Err(Error::InvalidArgument(format!("client {i} holds no training nodes")));
                }
                Ok(ClientState {
                    model: global_model.clone(),
                    optimizer: Adam::for_model(&global_model, config.learning_rate),
                    features: cg.graph.features().clone(),
                    targets: one_hot(cg.graph.labels(), c),
                    train_mask,
                    last_loss: f64::NAN,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            partition,
            clients,
            global_model,
            round_index: 0,
        })
    }

    pub fn malicious_graph(&self) -> &ClientGraph {
        self.partition.malicious()
    }

    /// Turns the configured malicious client into an attacker. Its targets
    /// are replaced by smoothed labels and, in the black-box setting, a
    /// surrogate of `malicious_arch` is fitted on its clean data.
    pub fn enlist_attacker(&mut self, manipulation: ManipulationConfig) -> Result<MaliciousClient> {
        manipulation.validate()?;
        let m = self.partition.malicious_index;
        let g = &self.partition.clients[m].graph;
        let client = &mut self.clients[m];
        let seed = derive_seed(self.config.seed, &[tag::PGD]);

        let surrogate = if self.config.is_black_box() {
            let mut s = init_model(
                self.config.malicious_arch,
                g.feature_dim(),
                g.num_classes(),
                derive_seed(self.config.seed, &[tag::SURROGATE]),
            )?;
            let mut adam = Adam::for_model(&s, self.config.learning_rate);
            train_local(
                &mut s,
                g,
                g.features(),
                &one_hot(g.labels(), g.num_classes()),
                &client.train_mask,
                self.config.surrogate_epochs,
                &mut adam,
            )?;
            Some(s)
        } else {
            None
        };
        let target_model = surrogate.as_ref().unwrap_or(&self.global_model);
        client.targets = manipulation_targets(target_model, g, &client.train_mask, &manipulation)?;
        Ok(MaliciousClient {
            config: manipulation,
            clean_features: g.features().clone(),
            surrogate,
            last_trace: Vec::new(),
            seed,
        })
    }
}

/// One FedAvg round: every client copies the global parameters, the
/// attacker (if any) re-manipulates its features from the clean data, every
/// client trains `local_epochs` full-batch epochs, and the server averages.
pub fn run_round(state: &mut FederationState, attacker: Option<&mut MaliciousClient>) -> Result<()> {
    if state.round_index >= state.config.rounds {
        return Err(Error::InvalidArgument(format!(
            "round {} exceeds configured {} rounds",
            state.round_index + 1,
            state.config.rounds
        )));
    }
    let global = state.global_model.clone();
    for client in &mut state.clients {
        client.model.load_params_from(&global)?;
    }

    // The first round has no model trained on clean data yet unless a
    // surrogate was fitted.
    let attacker = attacker.filter(|a| a.surrogate.is_some() || state.round_index > 0);
    if let Some(attacker) = attacker {
        let m = state.partition.malicious_index;
        let g = &state.partition.clients[m].graph;
        let client = &mut state.clients[m];
        let model = attacker.surrogate.as_ref().unwrap_or(&client.model);
        let round_seed = derive_seed(attacker.seed, &[state.round_index as u64]);
        let data = pgd_manipulate(
            model,
            g,
            &attacker.clean_features,
            &attacker.clean_features,
            &client.targets,
            &client.train_mask,
            &attacker.config,
            round_seed,
        )?;
        client.features = data.manipulated;
        attacker.last_trace = data.trace;
    }

    let epochs = state.config.local_epochs;
    let graphs = &state.partition.clients;
    state
        .clients
        .par_iter_mut()
        .zip(graphs.par_iter())
        .try_for_each(|(client, cg)| -> Result<()> {
            let trace = train_local(
                &mut client.model,
                &cg.graph,
                &client.features,
                &client.targets,
                &client.train_mask,
                epochs,
                &mut client.optimizer,
            )?;
            client.last_loss = *trace.last().expect("epochs >= 1");
            Ok(())
        })?;

    let models: Vec<&ModelState> = state.clients.iter().map(|c| &c.model).collect();
    state.global_model = fedavg_aggregate(&models, &state.partition.client_sizes())?;
    state.round_index += 1;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    pub global_train_acc: f64,
    pub global_val_acc: f64,
    pub malicious_local_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub state: FederationState,
    pub attacker: Option<MaliciousClient>,
    pub trace: Vec<RoundTrace>,
}

/// Runs every configured round. `manipulation = None` is the benign
/// baseline.
pub fn run_training(
    config: FederationConfig,
    partition: Partition,
    ground_truth: &Graph,
    split: &DataSplit,
    manipulation: Option<ManipulationConfig>,
) -> Result<TrainingOutcome> {
    let mut state = FederationState::new(config, partition, split)?;
    let mut attacker = manipulation.map(|m| state.enlist_attacker(m)).transpose()?;
    let mut trace = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        run_round(&mut state, attacker.as_mut())?;
        let p = predict(&state.global_model, ground_truth, ground_truth.features())?;
        trace.push(RoundTrace {
            round: state.round_index,
            global_train_acc: accuracy(&p, ground_truth.labels(), &split.train),
            global_val_acc: accuracy(&p, ground_truth.labels(), &split.val),
            malicious_local_loss: state.clients[state.partition.malicious_index].last_loss,
        });
    }
    Ok(TrainingOutcome { state, attacker, trace })
}

/// Query-only inference service over the full graph. Responses carry
/// posteriors and nothing else; noise for node `u` is drawn from a stream
/// keyed by `(seed, u)`, so a node always receives the same response.
#[derive(Debug)]
pub struct PosteriorOracle {
    posteriors: Array2<f64>,
    defense: DefenseSetting,
    seed: u64,
    budget: Option<u64>,
    served: AtomicU64,
}

impl PosteriorOracle {
    pub fn new(
        global_model: &ModelState,
        inference_graph: &Graph,
        defense: DefenseSetting,
        budget: Option<u64>,
        seed: u64,
    ) -> Result<Self> {
        defense.validate()?;
        let posteriors = predict(global_model, inference_graph, inference_graph.features())?;
        Ok(Self {
            posteriors,
            defense,
            seed,
            budget,
            served: AtomicU64::new(0),
        })
    }

    pub fn queries_served(&self) -> u64 {
        self.served.load(Ordering::SeqCst)
    }

    pub fn defense(&self) -> &DefenseSetting {
        &self.defense
    }

    fn respond(&self, u: usize) -> Vec<f64> {
        let clean = self.posteriors.row(u).to_vec();
        let mut rng = stream(self.seed, &[tag::DEFENSE, u as u64]);
        apply_defense(&clean, &self.defense, &mut rng)
    }

    /// Evaluator-side view of every response, for utility metrics. Not
    /// metered and not part of the attacker interface.
    pub fn served_posteriors(&self) -> Array2<f64> {
        let mut out = self.posteriors.clone();
        for u in 0..out.nrows() {
            out.row_mut(u).assign(&ndarray::Array1::from(self.respond(u)));
        }
        out
    }
}

impl PosteriorQuery for PosteriorOracle {
    fn num_classes(&self) -> usize {
        self.posteriors.ncols()
    }

    fn query(&self, nodes: &[usize]) -> Result<Vec<Vec<f64>>> {
        let n = self.posteriors.nrows();
        if let Some(&bad) = nodes.iter().find(|&&u| u >= n) {
            return Err(Error::InvalidNode { id: bad, num_nodes: n });
        }
        let want = nodes.len() as u64;
        if let Some(budget) = self.budget {
            self.served
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |used| {
                    (used + want <= budget).then_some(used + want)
                })
                .map_err(|used| Error::BudgetExhausted { used, budget })?;
        } else {
            self.served.fetch_add(want, Ordering::SeqCst);
        }
        Ok(nodes.iter().map(|&u| self.respond(u)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchKind;
    use ndarray::array;

    fn scalar_model(v: f64) -> ModelState {
        let mut m = init_model(ModelArch::new(ArchKind::Gcn), 1, 1, 0).unwrap();
        m.params = vec![array![[v]]];
        m.names = vec!["w".into()];
        m
    }

    #[test]
    fn fedavg_weighted_means() {
        let (a, b) = (scalar_model(1.0), scalar_model(3.0));
        assert_eq!(fedavg_aggregate(&[&a, &b], &[5, 5]).unwrap().params[0][[0, 0]], 2.0);
        let (a, b) = (scalar_model(0.0), scalar_model(4.0));
        let agg = fedavg_aggregate(&[&a, &b], &[1, 3]).unwrap();
        assert!((agg.params[0][[0, 0]] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn fedavg_fixed_point_and_errors() {
        let m = init_model(ModelArch::new(ArchKind::Sage), 3, 2, 4).unwrap();
        let agg = fedavg_aggregate(&[&m, &m, &m], &[2, 7, 3]).unwrap();
        for (x, y) in agg.params.iter().flatten().zip(m.params.iter().flatten()) {
            assert!((x - y).abs() <= 1e-12);
        }
        let other = init_model(ModelArch::new(ArchKind::Gcn), 3, 2, 4).unwrap();
        assert!(fedavg_aggregate(&[&m, &other], &[1, 1]).is_err());
        assert!(fedavg_aggregate(&[&m], &[0]).is_err());
        assert!(fedavg_aggregate(&[], &[]).is_err());
    }
}
