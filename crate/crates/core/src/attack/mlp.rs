use ndarray::{Array2, Axis};
use rand::Rng;

use super::model::{glorot, BinaryClassifier};

/// `d -> 64 -> 32 -> 1` perceptron with ReLU hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    params: Vec<Array2<f64>>,
}

pub const HIDDEN: [usize; 2] = [64, 32];

impl Mlp {
    pub fn new(input_dim: usize, rng: &mut impl Rng) -> Self {
        let dims = [input_dim, HIDDEN[0], HIDDEN[1], 1];
        let mut params = Vec::new();
        for w in dims.windows(2) {
            params.push(glorot(w[0], w[1], rng));
            params.push(Array2::zeros((1, w[1])));
        }
        Self { params }
    }

    fn layers(&self, x: &Array2<f64>) -> Vec<Array2<f64>> {
        // activations: input, h1, h2, logits (pre-activation stored for hidden)
        let mut acts = vec![x.clone()];
        for l in 0..3 {
            let z = acts[l].dot(&self.params[2 * l]) + &self.params[2 * l + 1].row(0);
            acts.push(if l < 2 { z.mapv(|v| v.max(0.0)) } else { z });
        }
        acts
    }
}

impl BinaryClassifier for Mlp {
    fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    fn logits(&self, x: &Array2<f64>) -> Vec<f64> {
        self.layers(x).pop().expect("three layers").column(0).to_vec()
    }

    fn backward(&self, x: &Array2<f64>, d_logits: &[f64]) -> Vec<Array2<f64>> {
        let acts = self.layers(x);
        let mut grads: Vec<Array2<f64>> = self.params.iter().map(|p| Array2::zeros(p.dim())).collect();
        let mut d = Array2::from_shape_vec((d_logits.len(), 1), d_logits.to_vec()).expect("column");
        for l in (0..3).rev() {
            if l < 2 {
                // ReLU on acts[l + 1]
                ndarray::Zip::from(&mut d).and(&acts[l + 1]).for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            grads[2 * l] = acts[l].t().dot(&d);
            grads[2 * l + 1] = d.sum_axis(Axis(0)).insert_axis(Axis(0));
            if l > 0 {
                d = d.dot(&self.params[2 * l].t());
            }
        }
        grads
    }
}
