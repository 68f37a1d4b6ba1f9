use ndarray::Array2;

use super::{forward, loss_and_backward, Adam, ModelState, LOG_FLOOR};
use crate::error::Result;
use crate::graph::Graph;

/// One-hot target matrix for `labels`.
pub fn one_hot(labels: &[usize], classes: usize) -> Array2<f64> {
    let mut out = Array2::zeros((labels.len(), classes));
    for (u, &y) in labels.iter().enumerate() {
        out[[u, y]] = 1.0;
    }
    out
}

/// Masked mean cross-entropy without gradients.
pub fn cross_entropy(posteriors: &Array2<f64>, targets: &Array2<f64>, mask: &[usize]) -> f64 {
    let total: f64 = mask
        .iter()
        .map(|&u| {
            posteriors
                .row(u)
                .iter()
                .zip(targets.row(u))
                .filter(|(_, &t)| t != 0.0)
                .map(|(&p, &t)| -t * (p + LOG_FLOOR).ln())
                .sum::<f64>()
        })
        .sum();
    total / mask.len() as f64
}

/// Full-batch training on `mask`. Returns the loss observed at each epoch
/// before that epoch's update.
pub fn train_local(
    model: &mut ModelState,
    g: &Graph,
    x: &Array2<f64>,
    targets: &Array2<f64>,
    mask: &[usize],
    epochs: usize,
    optimizer: &mut Adam,
) -> Result<Vec<f64>> {
    let mut trace = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let tape = forward(model, g, x)?;
        let (loss, grads) = loss_and_backward(model, g, tape, targets, mask)?;
        optimizer.step_model(model, &grads.params)?;
        trace.push(loss);
    }
    Ok(trace)
}
