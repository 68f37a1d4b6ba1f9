use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::AttentionNet;
use super::features::FeatureOptions;
use super::mlp::Mlp;
use super::pipeline::ShadowPairSet;
use crate::error::{Error, Result};
use crate::eval::auc;
use crate::nn::Adam;
use crate::rng::{stream, tag};

pub(crate) fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
}

/// A differentiable scorer producing one logit per input row.
pub trait BinaryClassifier {
    fn params(&self) -> &[Array2<f64>];
    fn params_mut(&mut self) -> &mut [Array2<f64>];
    fn logits(&self, x: &Array2<f64>) -> Vec<f64>;
    /// Parameter gradients for upstream gradient `d_logits`.
    fn backward(&self, x: &Array2<f64>, d_logits: &[f64]) -> Vec<Array2<f64>>;

    /// Mean binary cross-entropy on logits.
    fn bce_loss(&self, x: &Array2<f64>, targets: &[f64]) -> f64 {
        let z = self.logits(x);
        z.iter().zip(targets).map(|(&z, &y)| bce_term(z, y)).sum::<f64>() / z.len() as f64
    }

    /// Mean binary cross-entropy on logits and its parameter gradients.
    fn bce_loss_and_grads(&self, x: &Array2<f64>, targets: &[f64]) -> (f64, Vec<Array2<f64>>) {
        let z = self.logits(x);
        let n = z.len() as f64;
        let mut loss = 0.0;
        let d: Vec<f64> = z
            .iter()
            .zip(targets)
            .map(|(&z, &y)| {
                loss += bce_term(z, y);
                (sigmoid(z) - y) / n
            })
            .collect();
        (loss / n, self.backward(x, &d))
    }
}

/// softplus(z) - y z, stable form
fn bce_term(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-column z-scoring fitted on the shadow set.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Array2<f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).expect("non-empty").to_vec();
        let scale = x
            .std_axis(Axis(0), 0.0)
            .iter()
            .map(|&s| if s > 1e-12 { s } else { 1.0 })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackVariant {
    #[default]
    Mlp,
    Attention,
}

#[derive(Debug, Clone, PartialEq)]
enum Net {
    Mlp(Mlp),
    Attention(AttentionNet),
}

impl Net {
    fn classifier(&self) -> &dyn BinaryClassifier {
        match self {
            Net::Mlp(m) => m,
            Net::Attention(a) => a,
        }
    }

    fn classifier_mut(&mut self) -> &mut dyn BinaryClassifier {
        match self {
            Net::Mlp(m) => m,
            Net::Attention(a) => a,
        }
    }
}

/// Trained edge classifier over [`super::PairFeatures`] vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackModel {
    pub variant: AttackVariant,
    pub options: FeatureOptions,
    pub classes: usize,
    pub standardizer: Standardizer,
    net: Net,
}

/// Scores are clamped away from 0 and 1.
const SCORE_EPS: f64 = 1e-15;

impl AttackModel {
    pub fn new(
        variant: AttackVariant,
        options: FeatureOptions,
        classes: usize,
        standardizer: Standardizer,
        seed: u64,
    ) -> Self {
        let mut rng = stream(seed, &[tag::ATTACK_TRAIN, 0]);
        let num_scalars = options.num_scalars();
        let dim = options.dim(classes);
        let net = match variant {
            AttackVariant::Mlp => Net::Mlp(Mlp::new(dim, &mut rng)),
            AttackVariant::Attention => Net::Attention(AttentionNet::new(num_scalars, classes, &mut rng)),
        };
        Self {
            variant,
            options,
            classes,
            standardizer,
            net,
        }
    }

    pub fn classifier(&self) -> &dyn BinaryClassifier {
        self.net.classifier()
    }

    /// Edge probabilities in `(0, 1)` for raw (unstandardised) features.
    pub fn score(&self, features: &Array2<f64>) -> Vec<f64> {
        if features.nrows() == 0 {
            return Vec::new();
        }
        let x = self.standardizer.apply(features);
        self.net
            .classifier()
            .logits(&x)
            .into_iter()
            .map(|z| sigmoid(z).clamp(SCORE_EPS, 1.0 - SCORE_EPS))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackTraining {
    pub variant: AttackVariant,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of shadow pairs (per class) held out to pick the stopping
    /// epoch. 0 trains on everything for the full `epochs`.
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    /// Epochs without a lower held-out loss before training stops.
    #[serde(default = "default_patience")]
    pub patience: usize,
}

fn default_validation_fraction() -> f64 {
    0.2
}

fn default_patience() -> usize {
    20
}

impl AttackTraining {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("attack learning rate must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(Error::InvalidArgument(format!(
                "validation_fraction must be in [0, 0.5), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

impl Default for AttackTraining {
    fn default() -> Self {
        Self {
            variant: AttackVariant::Mlp,
            epochs: 200,
            batch_size: 64,
            learning_rate: 0.001,
            validation_fraction: default_validation_fraction(),
            patience: default_patience(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedAttack {
    pub model: AttackModel,
    /// AUC over every shadow pair, held-out ones included.
    pub train_auc: f64,
    /// Mean training BCE per completed epoch.
    pub loss_trace: Vec<f64>,
    /// Held-out BCE per completed epoch; empty without a hold-out.
    pub validation_trace: Vec<f64>,
    /// Number of epochs whose parameters were kept.
    pub best_epoch: usize,
}

/// Per-class split of `0..labels.len()` into (fit, held out).
fn holdout(labels: &[bool], fraction: f64, rng: &mut impl rand::Rng) -> (Vec<usize>, Vec<usize>) {
    let (mut fit, mut held) = (Vec::new(), Vec::new());
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        let k = if fraction > 0.0 && idx.len() >= 2 {
            ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1)
        } else {
            0
        };
        held.extend_from_slice(&idx[..k]);
        fit.extend_from_slice(&idx[k..]);
    }
    fit.sort_unstable();
    held.sort_unstable();
    (fit, held)
}

/// Mini-batch Adam on binary cross-entropy over the shadow pairs. With a
/// hold-out, the parameters with the lowest held-out loss are returned.
pub fn train_attack_model(shadow: &ShadowPairSet, settings: &AttackTraining, seed: u64) -> Result<TrainedAttack> {
    let n = shadow.labels.len();
    let positives = shadow.labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == n {
        return Err(Error::SingleClass(format!(
            "shadow set has {positives} positives out of {n} pairs"
        )));
    }
    settings.validate()?;
    let mut rng = stream(seed, &[tag::ATTACK_TRAIN, 1]);
    let (mut order, held) = holdout(&shadow.labels, settings.validation_fraction, &mut rng);
    let standardizer = Standardizer::fit(&shadow.features.select(Axis(0), &order));
    let x = standardizer.apply(&shadow.features);
    let y: Vec<f64> = shadow.labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    let x_held = x.select(Axis(0), &held);
    let y_held: Vec<f64> = held.iter().map(|&i| y[i]).collect();
    let mut model = AttackModel::new(settings.variant, shadow.options, shadow.classes, standardizer, seed);

    let mut adam = Adam::new(
        settings.learning_rate,
        model.classifier().params().iter().map(Array2::dim),
    );
    let mut loss_trace = Vec::with_capacity(settings.epochs);
    let mut validation_trace = Vec::new();
    let mut best: Option<(f64, usize, Vec<Array2<f64>>)> = None;
    for epoch in 1..=settings.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(settings.batch_size) {
            let xb = x.select(Axis(0), batch);
            let yb: Vec<f64> = batch.iter().map(|&i| y[i]).collect();
            let net = model.net.classifier_mut();
            let (loss, grads) = net.bce_loss_and_grads(&xb, &yb);
            adam.step(net.params_mut(), &grads)?;
            epoch_loss += loss * batch.len() as f64;
        }
        loss_trace.push(epoch_loss / order.len() as f64);
        if held.is_empty() {
            continue;
        }
        let net = model.net.classifier();
        let held_loss = net.bce_loss(&x_held, &y_held);
        validation_trace.push(held_loss);
        match &best {
            Some((b, _, _)) if held_loss >= *b => {}
            _ => best = Some((held_loss, epoch, net.params().to_vec())),
        }
        if best
            .as_ref()
            .is_some_and(|(_, e, _)| epoch - e >= settings.patience.max(1))
        {
            break;
        }
    }
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            model.net.classifier_mut().params_mut().clone_from_slice(&params);
            epoch
        }
        None => loss_trace.len(),
    };
    let scores = model.score(&shadow.features);
    let train_auc = auc(&scores, &shadow.labels)?;
    Ok(TrainedAttack {
        model,
        train_auc,
        loss_trace,
        validation_trace,
        best_epoch,
    })
}
