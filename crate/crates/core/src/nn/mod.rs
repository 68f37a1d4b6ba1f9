//! Dense graph neural networks with exact reverse-mode gradients.
//!
//! Parameters are plain `Array2<f64>` tensors (biases and attention vectors
//! are stored as matrices with one row per head). Backward passes are
//! written out by hand and checked against central finite differences in
//! the test suite.

mod adam;
mod io;
mod layers;
mod train;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, tag};

pub use adam::Adam;
pub use io::{read_model, write_model};
pub use layers::{backward_external, forward, loss_and_backward, predict, softmax_rows, ForwardTape, LOG_FLOOR};
pub use train::{cross_entropy, one_hot, train_local};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Gcn,
    #[serde(alias = "graphsage")]
    Sage,
    Gat,
}

impl ArchKind {
    pub const ALL: [ArchKind; 3] = [ArchKind::Gcn, ArchKind::Sage, ArchKind::Gat];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchKind::Gcn => "gcn",
            ArchKind::Sage => "sage",
            ArchKind::Gat => "gat",
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(ArchKind::Gcn),
            "sage" | "graphsage" => Ok(ArchKind::Sage),
            "gat" => Ok(ArchKind::Gat),
            other => Err(Error::InvalidArgument(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Architecture descriptor. Hidden layers use ReLU, the output layer is
/// followed by a row-wise softmax. For GAT, `hidden_dim` is the width of
/// each head; hidden heads are concatenated and output heads averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArch {
    pub kind: ArchKind,
    #[serde(default = "default_layers")]
    pub num_layers: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
}

fn default_layers() -> usize {
    2
}
fn default_hidden() -> usize {
    16
}
fn default_heads() -> usize {
    4
}

impl ModelArch {
    pub fn new(kind: ArchKind) -> Self {
        Self {
            kind,
            num_layers: default_layers(),
            hidden_dim: default_hidden(),
            heads: default_heads(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 || self.heads == 0 {
            return Err(Error::InvalidArgument(format!(
                "layers, hidden_dim and heads must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    fn heads_used(&self) -> usize {
        match self.kind {
            ArchKind::Gat => self.heads,
            _ => 1,
        }
    }

    /// `(input width, per-head output width, output width)` of layer `l`.
    pub(crate) fn layer_dims(&self, l: usize, feature_dim: usize, classes: usize) -> (usize, usize, usize) {
        let last = l + 1 == self.num_layers;
        let hidden_out = self.hidden_dim * self.heads_used();
        let input = if l == 0 { feature_dim } else { hidden_out };
        if last {
            (input, classes, classes)
        } else {
            (input, self.hidden_dim, hidden_out)
        }
    }

    pub(crate) fn params_per_layer(&self) -> usize {
        match self.kind {
            ArchKind::Gat => 4,
            _ => 2,
        }
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn param_shapes(&self, feature_dim: usize, classes: usize) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        for l in 0..self.num_layers {
            let (input, per_head, output) = self.layer_dims(l, feature_dim, classes);
            match self.kind {
                ArchKind::Gcn => {
                    out.push((format!("W{l}"), (input, output)));
                }
                ArchKind::Sage => {
                    out.push((format!("W{l}"), (2 * input, output)));
                }
                ArchKind::Gat => {
                    out.push((format!("W{l}"), (input, self.heads * per_head)));
                    out.push((format!("a_src{l}"), (self.heads, per_head)));
                    out.push((format!("a_dst{l}"), (self.heads, per_head)));
                }
            }
            out.push((format!("b{l}"), (1, output)));
        }
        out
    }
}

/// Parameters of one GNN together with the shapes they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub arch: ModelArch,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub names: Vec<String>,
    pub params: Vec<Array2<f64>>,
}

impl ModelState {
    pub fn param_count(&self) -> usize {
        self.params.iter().map(Array2::len).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Array2<f64>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn same_shape(&self, other: &ModelState) -> bool {
        self.arch == other.arch
            && self.feature_dim == other.feature_dim
            && self.num_classes == other.num_classes
            && self.params.iter().zip(&other.params).all(|(a, b)| a.dim() == b.dim())
    }

    /// Overwrites parameter values with another state's (same shapes).
    pub fn load_params_from(&mut self, other: &ModelState) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(
                "cannot copy parameters between different models".into(),
            ));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.assign(src);
        }
        Ok(())
    }
}

/// Per-parameter gradients plus the gradient with respect to the input
/// feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<Array2<f64>>,
    pub inputs: Array2<f64>,
}

/// Glorot-uniform weights, zero biases.
pub fn init_model(arch: ModelArch, feature_dim: usize, num_classes: usize, seed: u64) -> Result<ModelState> {
    arch.validate()?;
    if feature_dim == 0 || num_classes == 0 {
        return Err(Error::InvalidArgument(
            "feature_dim and num_classes must be >= 1".into(),
        ));
    }
    let mut rng = stream(seed, &[tag::INIT]);
    let shapes = arch.param_shapes(feature_dim, num_classes);
    let mut names = Vec::with_capacity(shapes.len());
    let mut params = Vec::with_capacity(shapes.len());
    for (name, (rows, cols)) in shapes {
        let value = if name.starts_with('b') {
            Array2::zeros((rows, cols))
        } else {
            let bound = if name.starts_with('a') {
                // attention vector [a_src || a_dst] seen as a (2 * cols) x 1 matrix
                (6.0 / (2 * cols + 1) as f64).sqrt()
            } else {
                (6.0 / (rows + cols) as f64).sqrt()
            };
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
        };
        names.push(name);
        params.push(value);
    }
    Ok(ModelState {
        arch,
        feature_dim,
        num_classes,
        names,
        params,
    })
}
