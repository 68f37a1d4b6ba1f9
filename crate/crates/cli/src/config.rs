//! Experiment configuration: a TOML file with one table per pipeline part.
//! Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gflsim_core::attack::{AttackTraining, AttackVariant, FeatureOptions};
use gflsim_core::eval::{DefenseKind, DefenseSetting, Similarity};
use gflsim_core::federation::FederationConfig;
use gflsim_core::graph::SbmParams;
use gflsim_core::manipulation::{ManipulationConfig, SmoothingDenominator};
use gflsim_core::nn::{ArchKind, ModelArch};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult, Stage};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub federation: FederationSection,
    pub manipulation: ManipulationSection,
    pub attack: AttackSection,
    pub defense: DefenseSection,
    pub evaluation: EvaluationSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Sbm,
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub source: DataSource,
    pub sbm: SbmParams,
    /// Node and edge files, relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<PathBuf>,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

/// 500 nodes in 4 equal blocks.
pub fn default_sbm() -> SbmParams {
    SbmParams {
        num_blocks: 4,
        nodes_per_block: 125,
        p_in: 0.2,
        p_out: 0.02,
        feature_dim: 16,
        feature_shift: 1.0,
    }
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            source: DataSource::Sbm,
            sbm: default_sbm(),
            nodes: None,
            edges: None,
            train_fraction: 0.2,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationSection {
    #[serde(alias = "k")]
    pub clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub server_arch: ArchKind,
    /// Defaults to `server_arch`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub malicious_arch: Option<ArchKind>,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub learning_rate: f64,
    /// Fraction of extra nodes each client borrows from the others.
    #[serde(alias = "rho")]
    pub overlap: f64,
    pub malicious_client: usize,
    pub surrogate_epochs: usize,
}

impl Default for FederationSection {
    fn default() -> Self {
        Self {
            clients: 3,
            rounds: 100,
            local_epochs: 1,
            server_arch: ArchKind::Gcn,
            malicious_arch: None,
            num_layers: 2,
            hidden_dim: 16,
            heads: 4,
            learning_rate: 0.01,
            overlap: 0.0,
            malicious_client: 0,
            surrogate_epochs: 100,
        }
    }
}

impl FederationSection {
    fn arch(&self, kind: ArchKind) -> ModelArch {
        ModelArch {
            kind,
            num_layers: self.num_layers,
            hidden_dim: self.hidden_dim,
            heads: self.heads,
        }
    }

    pub fn to_config(&self, seed: u64) -> FederationConfig {
        FederationConfig {
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            server_arch: self.arch(self.server_arch),
            malicious_arch: self.arch(self.malicious_arch.unwrap_or(self.server_arch)),
            learning_rate: self.learning_rate,
            surrogate_epochs: self.surrogate_epochs,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManipulationSection {
    /// `false` runs the benign baseline (no feature manipulation).
    pub enabled: bool,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub step_size: f64,
    pub steps: usize,
    pub negative_sample_ratio: f64,
    pub smoothing: SmoothingDenominator,
}

impl Default for ManipulationSection {
    fn default() -> Self {
        let d = ManipulationConfig::default();
        Self {
            enabled: true,
            alpha: d.alpha,
            beta: d.beta,
            lambda: d.lambda,
            epsilon: d.epsilon,
            step_size: d.step_size,
            steps: d.steps,
            negative_sample_ratio: d.negative_sample_ratio,
            smoothing: d.smoothing,
        }
    }
}

impl ManipulationSection {
    pub fn to_config(&self) -> Option<ManipulationConfig> {
        self.enabled.then_some(ManipulationConfig {
            alpha: self.alpha,
            beta: self.beta,
            lambda: self.lambda,
            epsilon: self.epsilon,
            step_size: self.step_size,
            steps: self.steps,
            negative_sample_ratio: self.negative_sample_ratio,
            smoothing: self.smoothing,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub variant: AttackVariant,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub patience: usize,
    /// Shadow negatives per shadow positive.
    pub negative_ratio: f64,
    pub entropy_summary: bool,
    /// Seed for shadow sampling and attack training; the run seed when
    /// absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for AttackSection {
    fn default() -> Self {
        let d = AttackTraining::default();
        Self {
            variant: d.variant,
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            validation_fraction: d.validation_fraction,
            patience: d.patience,
            negative_ratio: 1.0,
            entropy_summary: false,
            seed: None,
        }
    }
}

impl AttackSection {
    pub fn training(&self) -> AttackTraining {
        AttackTraining {
            variant: self.variant,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            validation_fraction: self.validation_fraction,
            patience: self.patience,
        }
    }

    pub fn features(&self) -> FeatureOptions {
        FeatureOptions {
            entropy_summary: self.entropy_summary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseSection {
    pub kind: DefenseKind,
    pub strength: f64,
    pub renormalize: bool,
    /// Maximum number of node posteriors the service answers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_budget: Option<u64>,
}

impl Default for DefenseSection {
    fn default() -> Self {
        Self {
            kind: DefenseKind::None,
            strength: 0.0,
            renormalize: true,
            query_budget: None,
        }
    }
}

impl DefenseSection {
    pub fn setting(&self) -> DefenseSetting {
        DefenseSetting {
            kind: self.kind,
            strength: self.strength,
            renormalize: self.renormalize,
        }
    }
}

/// Which nodes the evaluation pairs are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetRule {
    /// Every node of the graph.
    #[default]
    All,
    /// Nodes outside the malicious client.
    Benign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub seeds: Vec<u64>,
    pub target: TargetRule,
    pub pairs: PairUniverse,
    pub similarity: Similarity,
}

/// Which candidate pairs are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairUniverse {
    /// All target edges plus as many sampled non-edges.
    #[default]
    Balanced,
    /// Every pair of target nodes; small graphs only.
    All,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            target: TargetRule::All,
            pairs: PairUniverse::Balanced,
            similarity: Similarity::Cosine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Dotted config path to the list of values it takes, e.g.
    /// `"defense.strength" = [0.0, 0.05, 0.1]`.
    pub grid: BTreeMap<String, Vec<toml::Value>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

fn config_error(message: impl Into<String>) -> CliError {
    CliError::input(Stage::Config, message)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative dataset paths are resolved against its
    /// directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(Stage::Config, path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| config_error(format!("{}: {}", path.display(), e.message)))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset.nodes, &mut cfg.dataset.edges].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn validate(&self) -> CliResult<()> {
        let d = &self.dataset;
        if d.source == DataSource::Files && (d.nodes.is_none() || d.edges.is_none()) {
            return Err(config_error(
                "dataset.source = \"files\" needs dataset.nodes and dataset.edges",
            ));
        }
        let f = &self.federation;
        if f.clients == 0 || f.malicious_client >= f.clients {
            return Err(config_error(format!(
                "federation.malicious_client {} must be below federation.clients {}",
                f.malicious_client, f.clients
            )));
        }
        if !(0.0..=1.0).contains(&f.overlap) {
            return Err(config_error("federation.overlap must be in [0, 1]"));
        }
        f.to_config(0).validate().map_err(|e| config_error(e.to_string()))?;
        if let Some(m) = self.manipulation.to_config() {
            m.validate().map_err(|e| config_error(e.to_string()))?;
        }
        self.attack
            .training()
            .validate()
            .map_err(|e| config_error(e.to_string()))?;
        if !(self.attack.negative_ratio > 0.0 && self.attack.negative_ratio.is_finite()) {
            return Err(config_error("attack.negative_ratio must be positive"));
        }
        self.defense
            .setting()
            .validate()
            .map_err(|e| config_error(e.to_string()))?;
        if self.evaluation.seeds.is_empty() {
            return Err(config_error("evaluation.seeds must not be empty"));
        }
        Ok(())
    }

    /// Copy with the value at a dotted path replaced, re-validated.
    pub fn with_override(&self, path: &str, value: &toml::Value) -> CliResult<Self> {
        let mut root = toml::Value::try_from(self).map_err(|e| config_error(e.to_string()))?;
        let mut node = &mut root;
        let keys: Vec<&str> = path.split('.').collect();
        for key in &keys[..keys.len() - 1] {
            let table = node
                .as_table_mut()
                .ok_or_else(|| config_error(format!("{path}: {key} is not a table")))?;
            node = table
                .entry(key.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
        node.as_table_mut()
            .ok_or_else(|| config_error(format!("{path}: parent is not a table")))?
            .insert(keys[keys.len() - 1].to_string(), value.clone());
        let cfg: Self = root
            .try_into()
            .map_err(|e: toml::de::Error| config_error(format!("override {path} = {value}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Digest of everything that influences results (the output location
    /// and sweep grid excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        c.sweep = SweepSection::default();
        digest_json(&c)
    }

    /// Digest of the parts that determine the trained federation.
    pub fn training_hash(&self) -> String {
        digest_json(&(&self.dataset, &self.federation, &self.manipulation))
    }
}

fn digest_json(value: &impl Serialize) -> String {
    let json = serde_json::to_vec(value).expect("configuration serializes to JSON");
    format!("{:x}", Sha256::digest(json))
}
