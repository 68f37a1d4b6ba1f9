//! Forward passes and their vector-Jacobian products.

use ndarray::{s, Array2, ArrayView2, Axis};

use super::{ArchKind, Gradients, ModelState};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Floor added inside `log` for cross-entropy.
pub const LOG_FLOOR: f64 = 1e-12;

const LEAKY_SLOPE: f64 = 0.2;

/// Intermediates recorded by [`forward`]; moved into exactly one backward
/// call.
#[derive(Debug)]
pub struct ForwardTape {
    layers: Vec<LayerTape>,
    posteriors: Array2<f64>,
    input_dim: (usize, usize),
}

impl ForwardTape {
    pub fn posteriors(&self) -> &Array2<f64> {
        &self.posteriors
    }
}

#[derive(Debug)]
struct LayerTape {
    input: Array2<f64>,
    pre: Array2<f64>,
    cache: LayerCache,
}

#[derive(Debug)]
enum LayerCache {
    /// `Â H`
    Gcn { propagated: Array2<f64> },
    /// `[H | mean_N(H)]`
    Sage { concat: Array2<f64> },
    Gat {
        wh: Array2<f64>,
        /// `[head][node]` -> attention weights over `attn_neighbors(node)`
        alpha: Vec<Vec<Vec<f64>>>,
        /// matching pre-LeakyReLU logits
        logits: Vec<Vec<Vec<f64>>>,
    },
}

/// Structure shared by every layer of one pass.
struct Topology {
    gcn: Vec<Vec<(usize, f64)>>,
    /// neighbors with the node itself inserted in order
    closed: Vec<Vec<usize>>,
}

impl Topology {
    fn new(g: &Graph, kind: ArchKind) -> Self {
        let gcn = if kind == ArchKind::Gcn {
            g.gcn_propagation()
        } else {
            Vec::new()
        };
        let closed = if kind == ArchKind::Gat {
            (0..g.num_nodes())
                .map(|u| {
                    let mut row = g.neighbors(u).to_vec();
                    let pos = row.partition_point(|&v| v < u);
                    row.insert(pos, u);
                    row
                })
                .collect()
        } else {
            Vec::new()
        };
        Self { gcn, closed }
    }
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

fn gcn_propagate(prop: &[Vec<(usize, f64)>], h: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(h.dim());
    for (u, row) in prop.iter().enumerate() {
        let mut acc = out.row_mut(u);
        for &(v, w) in row {
            acc.scaled_add(w, &h.row(v));
        }
    }
    out
}

fn mean_aggregate(g: &Graph, h: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(h.dim());
    for u in 0..g.num_nodes() {
        let nbrs = g.neighbors(u);
        if nbrs.is_empty() {
            continue;
        }
        let scale = 1.0 / nbrs.len() as f64;
        let mut acc = out.row_mut(u);
        for &v in nbrs {
            acc.scaled_add(scale, &h.row(v));
        }
    }
    out
}

/// Transpose of [`mean_aggregate`].
fn mean_aggregate_t(g: &Graph, d: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(d.dim());
    for u in 0..g.num_nodes() {
        let nbrs = g.neighbors(u);
        if nbrs.is_empty() {
            continue;
        }
        let scale = 1.0 / nbrs.len() as f64;
        for &v in nbrs {
            out.row_mut(v).scaled_add(scale, &d.row(u));
        }
    }
    out
}

fn bias_row(b: &Array2<f64>) -> ndarray::ArrayView1<'_, f64> {
    b.row(0)
}

/// Runs the model on `g`'s structure with feature matrix `x` and returns
/// the posterior tape. Every posterior row is a probability vector.
pub fn forward(model: &ModelState, g: &Graph, x: &Array2<f64>) -> Result<ForwardTape> {
    if x.dim() != (g.num_nodes(), model.feature_dim) {
        return Err(Error::ShapeMismatch(format!(
            "features {:?}, expected ({}, {})",
            x.dim(),
            g.num_nodes(),
            model.feature_dim
        )));
    }
    let arch = model.arch;
    let topo = Topology::new(g, arch.kind);
    let per_layer = arch.params_per_layer();
    let mut layers = Vec::with_capacity(arch.num_layers);
    let mut h = x.clone();
    for l in 0..arch.num_layers {
        let p = &model.params[l * per_layer..(l + 1) * per_layer];
        let last = l + 1 == arch.num_layers;
        let (pre, cache) = match arch.kind {
            ArchKind::Gcn => {
                let propagated = gcn_propagate(&topo.gcn, h.view());
                let pre = propagated.dot(&p[0]) + &bias_row(&p[1]);
                (pre, LayerCache::Gcn { propagated })
            }
            ArchKind::Sage => {
                let agg = mean_aggregate(g, h.view());
                let concat = ndarray::concatenate![Axis(1), h, agg];
                let pre = concat.dot(&p[0]) + &bias_row(&p[1]);
                (pre, LayerCache::Sage { concat })
            }
            ArchKind::Gat => gat_forward(&topo, &h, p, arch.heads, last),
        };
        let next = if last { softmax_rows(&pre) } else { relu(&pre) };
        layers.push(LayerTape { input: h, pre, cache });
        h = next;
    }
    Ok(ForwardTape {
        layers,
        posteriors: h,
        input_dim: x.dim(),
    })
}

/// Posteriors only.
pub fn predict(model: &ModelState, g: &Graph, x: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(forward(model, g, x)?.posteriors)
}

fn gat_forward(
    topo: &Topology,
    h: &Array2<f64>,
    p: &[Array2<f64>],
    heads: usize,
    last: bool,
) -> (Array2<f64>, LayerCache) {
    let (w, a_src, a_dst, b) = (&p[0], &p[1], &p[2], &p[3]);
    let width = a_src.ncols();
    let n = h.nrows();
    let wh = h.dot(w);
    let out_cols = if last { width } else { heads * width };
    let mut pre = Array2::zeros((n, out_cols));
    let mut alpha = Vec::with_capacity(heads);
    let mut logits = Vec::with_capacity(heads);
    for k in 0..heads {
        let whk = wh.slice(s![.., k * width..(k + 1) * width]);
        let src = whk.dot(&a_src.row(k));
        let dst = whk.dot(&a_dst.row(k));
        let mut head_alpha = Vec::with_capacity(n);
        let mut head_logits = Vec::with_capacity(n);
        for u in 0..n {
            let nb = &topo.closed[u];
            let z: Vec<f64> = nb.iter().map(|&v| src[u] + dst[v]).collect();
            let e: Vec<f64> = z.iter().map(|&v| leaky(v)).collect();
            let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut a: Vec<f64> = e.iter().map(|&v| (v - max).exp()).collect();
            let sum: f64 = a.iter().sum();
            a.iter_mut().for_each(|v| *v /= sum);

            let scale = if last { 1.0 / heads as f64 } else { 1.0 };
            let mut acc = if last {
                pre.row_mut(u)
            } else {
                pre.slice_mut(s![u, k * width..(k + 1) * width])
            };
            for (&v, &av) in nb.iter().zip(&a) {
                acc.scaled_add(scale * av, &whk.row(v));
            }
            head_alpha.push(a);
            head_logits.push(z);
        }
        alpha.push(head_alpha);
        logits.push(head_logits);
    }
    pre += &bias_row(b);
    (pre, LayerCache::Gat { wh, alpha, logits })
}

/// Pulls `upstream = dLoss/dPosteriors` back to every parameter and to the
/// input features.
pub fn backward_external(
    model: &ModelState,
    g: &Graph,
    tape: ForwardTape,
    upstream: &Array2<f64>,
) -> Result<Gradients> {
    if upstream.dim() != tape.posteriors.dim() {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient {:?} vs posteriors {:?}",
            upstream.dim(),
            tape.posteriors.dim()
        )));
    }
    let arch = model.arch;
    let topo = Topology::new(g, arch.kind);
    let per_layer = arch.params_per_layer();

    // softmax VJP
    let p = &tape.posteriors;
    let dot = (upstream * p).sum_axis(Axis(1)).insert_axis(Axis(1));
    let mut d_pre = p * &(upstream - &dot);

    let mut grads: Vec<Array2<f64>> = model.params.iter().map(|t| Array2::zeros(t.dim())).collect();
    let mut d_input = Array2::zeros(tape.input_dim);

    for (l, layer) in tape.layers.into_iter().enumerate().rev() {
        let params = &model.params[l * per_layer..(l + 1) * per_layer];
        let pg = &mut grads[l * per_layer..(l + 1) * per_layer];
        let last = l + 1 == arch.num_layers;
        if !last {
            // ReLU
            ndarray::Zip::from(&mut d_pre).and(&layer.pre).for_each(|d, &z| {
                if z <= 0.0 {
                    *d = 0.0
                }
            });
        }
        let d_h = match layer.cache {
            LayerCache::Gcn { propagated } => {
                pg[0] = propagated.t().dot(&d_pre);
                pg[1] = d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
                let d_prop = d_pre.dot(&params[0].t());
                // Â is symmetric
                gcn_propagate(&topo.gcn, d_prop.view())
            }
            LayerCache::Sage { concat } => {
                pg[0] = concat.t().dot(&d_pre);
                pg[1] = d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
                let d_cat = d_pre.dot(&params[0].t());
                let width = layer.input.ncols();
                let mut d_h = d_cat.slice(s![.., ..width]).to_owned();
                d_h += &mean_aggregate_t(g, d_cat.slice(s![.., width..]));
                d_h
            }
            LayerCache::Gat { wh, alpha, logits } => gat_backward(
                &topo,
                &layer.input,
                params,
                pg,
                &d_pre,
                &wh,
                &alpha,
                &logits,
                arch.heads,
                last,
            ),
        };
        if l == 0 {
            d_input = d_h;
        } else {
            d_pre = d_h;
        }
    }
    Ok(Gradients {
        params: grads,
        inputs: d_input,
    })
}

#[allow(clippy::too_many_arguments)]
fn gat_backward(
    topo: &Topology,
    input: &Array2<f64>,
    params: &[Array2<f64>],
    pg: &mut [Array2<f64>],
    d_pre: &Array2<f64>,
    wh: &Array2<f64>,
    alpha: &[Vec<Vec<f64>>],
    logits: &[Vec<Vec<f64>>],
    heads: usize,
    last: bool,
) -> Array2<f64> {
    let (w, a_src, a_dst) = (&params[0], &params[1], &params[2]);
    let width = a_src.ncols();
    let n = input.nrows();
    pg[3] = d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
    let mut d_wh = Array2::<f64>::zeros(wh.dim());
    let mut d_a_src = Array2::<f64>::zeros(a_src.dim());
    let mut d_a_dst = Array2::<f64>::zeros(a_dst.dim());

    for k in 0..heads {
        let cols = s![.., k * width..(k + 1) * width];
        let whk = wh.slice(cols);
        let d_out = if last {
            d_pre / heads as f64
        } else {
            d_pre.slice(cols).to_owned()
        };
        let mut d_src = vec![0.0; n];
        let mut d_dst = vec![0.0; n];
        {
            let mut d_whk = d_wh.slice_mut(cols);
            for u in 0..n {
                let nb = &topo.closed[u];
                let a = &alpha[k][u];
                let du = d_out.row(u);
                let d_alpha: Vec<f64> = nb.iter().map(|&v| du.dot(&whk.row(v))).collect();
                for (&v, &av) in nb.iter().zip(a) {
                    d_whk.row_mut(v).scaled_add(av, &du);
                }
                let weighted: f64 = a.iter().zip(&d_alpha).map(|(x, y)| x * y).sum();
                for (idx, &v) in nb.iter().enumerate() {
                    let de = a[idx] * (d_alpha[idx] - weighted);
                    let slope = if logits[k][u][idx] > 0.0 { 1.0 } else { LEAKY_SLOPE };
                    let dz = de * slope;
                    d_src[u] += dz;
                    d_dst[v] += dz;
                }
            }
            for u in 0..n {
                d_a_src.row_mut(k).scaled_add(d_src[u], &whk.row(u));
                d_a_dst.row_mut(k).scaled_add(d_dst[u], &whk.row(u));
                d_whk.row_mut(u).scaled_add(d_src[u], &a_src.row(k));
                d_whk.row_mut(u).scaled_add(d_dst[u], &a_dst.row(k));
            }
        }
    }
    pg[0] = input.t().dot(&d_wh);
    pg[1] = d_a_src;
    pg[2] = d_a_dst;
    d_wh.dot(&w.t())
}

/// Masked mean cross-entropy against row-stochastic `targets`, with the
/// exact gradient obtained through [`backward_external`].
pub fn loss_and_backward(
    model: &ModelState,
    g: &Graph,
    tape: ForwardTape,
    targets: &Array2<f64>,
    mask: &[usize],
) -> Result<(f64, Gradients)> {
    let p = &tape.posteriors;
    if targets.dim() != p.dim() {
        return Err(Error::ShapeMismatch(format!(
            "targets {:?} vs posteriors {:?}",
            targets.dim(),
            p.dim()
        )));
    }
    if mask.is_empty() {
        return Err(Error::InvalidArgument("empty training mask".into()));
    }
    let scale = 1.0 / mask.len() as f64;
    let mut upstream = Array2::zeros(p.dim());
    let mut loss = 0.0;
    for &u in mask {
        for c in 0..p.ncols() {
            let t = targets[[u, c]];
            if t != 0.0 {
                let q = p[[u, c]] + LOG_FLOOR;
                loss -= t * q.ln();
                upstream[[u, c]] -= scale * t / q;
            }
        }
    }
    let grads = backward_external(model, g, tape, &upstream)?;
    Ok((loss * scale, grads))
}
