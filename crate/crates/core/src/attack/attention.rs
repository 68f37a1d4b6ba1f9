//! Token self-attention classifier over pair features.
//!
//! Each scalar feature becomes a token `x_i * e_i + c_i`; each element-wise
//! block becomes a token `block_j W_j + c_j`. One multi-head self-attention
//! layer with a residual connection and ReLU is followed by mean pooling
//! and a linear read-out.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use super::features::NUM_BLOCKS;
use super::model::{glorot, BinaryClassifier};
use crate::nn::softmax_rows;

pub const EMBED_DIM: usize = 32;
pub const HEADS: usize = 4;

// parameter slots
const SCALAR_W: usize = 0;
const SCALAR_B: usize = 1;
const BLOCK_B: usize = 2;
const WQ: usize = 3;
const WK: usize = 4;
const WV: usize = 5;
const WO: usize = 6;
const BO: usize = 7;
const FC_W: usize = 8;
const FC_B: usize = 9;
const BLOCK_W: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionNet {
    num_scalars: usize,
    classes: usize,
    params: Vec<Array2<f64>>,
}

struct Cache {
    tokens: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// per sample, per head: attention matrix (tokens x tokens)
    attn: Vec<Vec<Array2<f64>>>,
    mixed: Array2<f64>,
    pre: Array2<f64>,
    pooled: Array2<f64>,
}

impl AttentionNet {
    pub fn new(num_scalars: usize, classes: usize, rng: &mut impl Rng) -> Self {
        let d = EMBED_DIM;
        let mut params = vec![
            glorot(num_scalars, d, rng),
            Array2::zeros((num_scalars, d)),
            Array2::zeros((NUM_BLOCKS, d)),
            glorot(d, d, rng),
            glorot(d, d, rng),
            glorot(d, d, rng),
            glorot(d, d, rng),
            Array2::zeros((1, d)),
            glorot(d, 1, rng),
            Array2::zeros((1, 1)),
        ];
        for _ in 0..NUM_BLOCKS {
            params.push(glorot(classes, d, rng));
        }
        Self {
            num_scalars,
            classes,
            params,
        }
    }

    fn num_tokens(&self) -> usize {
        self.num_scalars + NUM_BLOCKS
    }

    /// Token matrix with `batch * num_tokens` rows.
    fn embed(&self, x: &Array2<f64>) -> Array2<f64> {
        let t = self.num_tokens();
        let mut tokens = Array2::zeros((x.nrows() * t, EMBED_DIM));
        for (i, row) in x.rows().into_iter().enumerate() {
            for j in 0..self.num_scalars {
                let mut tok = tokens.row_mut(i * t + j);
                tok.assign(&self.params[SCALAR_B].row(j));
                tok.scaled_add(row[j], &self.params[SCALAR_W].row(j));
            }
            for b in 0..NUM_BLOCKS {
                let start = self.num_scalars + b * self.classes;
                let block = row.slice(s![start..start + self.classes]);
                let mut tok = tokens.row_mut(i * t + self.num_scalars + b);
                tok.assign(&self.params[BLOCK_B].row(b));
                tok += &block.dot(&self.params[BLOCK_W + b]);
            }
        }
        tokens
    }

    fn run(&self, x: &Array2<f64>) -> (Vec<f64>, Cache) {
        let t = self.num_tokens();
        let hd = EMBED_DIM / HEADS;
        let scale = 1.0 / (hd as f64).sqrt();
        let tokens = self.embed(x);
        let q = tokens.dot(&self.params[WQ]);
        let k = tokens.dot(&self.params[WK]);
        let v = tokens.dot(&self.params[WV]);
        let mut mixed = Array2::zeros(tokens.dim());
        let mut attn = Vec::with_capacity(x.nrows());
        for i in 0..x.nrows() {
            let rows = i * t..(i + 1) * t;
            let mut per_head = Vec::with_capacity(HEADS);
            for h in 0..HEADS {
                let cols = h * hd..(h + 1) * hd;
                let qh = q.slice(s![rows.clone(), cols.clone()]);
                let kh = k.slice(s![rows.clone(), cols.clone()]);
                let vh = v.slice(s![rows.clone(), cols.clone()]);
                let a = softmax_rows(&(qh.dot(&kh.t()) * scale));
                mixed.slice_mut(s![rows.clone(), cols]).assign(&a.dot(&vh));
                per_head.push(a);
            }
            attn.push(per_head);
        }
        let pre = mixed.dot(&self.params[WO]) + &self.params[BO].row(0) + &tokens;
        let act = pre.mapv(|v| v.max(0.0));
        let pooled = act
            .to_shape((x.nrows(), t, EMBED_DIM))
            .expect("contiguous")
            .mean_axis(Axis(1))
            .expect("tokens");
        let logits = (pooled.dot(&self.params[FC_W]) + self.params[FC_B][[0, 0]])
            .column(0)
            .to_vec();
        (
            logits,
            Cache {
                tokens,
                q,
                k,
                v,
                attn,
                mixed,
                pre,
                pooled,
            },
        )
    }
}

fn softmax_vjp(a: ArrayView2<f64>, da: &Array2<f64>) -> Array2<f64> {
    let dot = (&a * da).sum_axis(Axis(1)).insert_axis(Axis(1));
    &a * &(da - &dot)
}

impl BinaryClassifier for AttentionNet {
    fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    fn logits(&self, x: &Array2<f64>) -> Vec<f64> {
        self.run(x).0
    }

    fn backward(&self, x: &Array2<f64>, d_logits: &[f64]) -> Vec<Array2<f64>> {
        let (_, c) = self.run(x);
        let t = self.num_tokens();
        let n = x.nrows();
        let hd = EMBED_DIM / HEADS;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut grads: Vec<Array2<f64>> = self.params.iter().map(|p| Array2::zeros(p.dim())).collect();

        let d_out = Array2::from_shape_vec((n, 1), d_logits.to_vec()).expect("column");
        grads[FC_W] = c.pooled.t().dot(&d_out);
        grads[FC_B][[0, 0]] = d_logits.iter().sum();
        let d_pooled = d_out.dot(&self.params[FC_W].t());

        // mean pooling and ReLU
        let mut d_pre = Array2::zeros(c.pre.dim());
        for i in 0..n {
            for j in 0..t {
                let r = i * t + j;
                for e in 0..EMBED_DIM {
                    if c.pre[[r, e]] > 0.0 {
                        d_pre[[r, e]] = d_pooled[[i, e]] / t as f64;
                    }
                }
            }
        }
        grads[WO] = c.mixed.t().dot(&d_pre);
        grads[BO] = d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
        let d_mixed = d_pre.dot(&self.params[WO].t());
        let mut d_tokens = d_pre;

        let mut dq = Array2::zeros(c.q.dim());
        let mut dk = Array2::zeros(c.k.dim());
        let mut dv = Array2::zeros(c.v.dim());
        for i in 0..n {
            let rows = i * t..(i + 1) * t;
            for h in 0..HEADS {
                let cols = h * hd..(h + 1) * hd;
                let a = &c.attn[i][h];
                let dm = d_mixed.slice(s![rows.clone(), cols.clone()]);
                let vh = c.v.slice(s![rows.clone(), cols.clone()]);
                let qh = c.q.slice(s![rows.clone(), cols.clone()]);
                let kh = c.k.slice(s![rows.clone(), cols.clone()]);
                let da = dm.dot(&vh.t());
                dv.slice_mut(s![rows.clone(), cols.clone()]).assign(&a.t().dot(&dm));
                let ds = softmax_vjp(a.view(), &da) * scale;
                dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.dot(&kh));
                dk.slice_mut(s![rows.clone(), cols]).assign(&ds.t().dot(&qh));
            }
        }
        grads[WQ] = c.tokens.t().dot(&dq);
        grads[WK] = c.tokens.t().dot(&dk);
        grads[WV] = c.tokens.t().dot(&dv);
        d_tokens += &dq.dot(&self.params[WQ].t());
        d_tokens += &dk.dot(&self.params[WK].t());
        d_tokens += &dv.dot(&self.params[WV].t());

        for (i, row) in x.rows().into_iter().enumerate() {
            for j in 0..self.num_scalars {
                let dt = d_tokens.row(i * t + j);
                grads[SCALAR_W].row_mut(j).scaled_add(row[j], &dt);
                grads[SCALAR_B].row_mut(j).scaled_add(1.0, &dt);
            }
            for b in 0..NUM_BLOCKS {
                let dt = d_tokens.row(i * t + self.num_scalars + b);
                grads[BLOCK_B].row_mut(b).scaled_add(1.0, &dt);
                let start = self.num_scalars + b * self.classes;
                for cc in 0..self.classes {
                    grads[BLOCK_W + b].row_mut(cc).scaled_add(row[start + cc], &dt);
                }
            }
        }
        grads
    }
}
