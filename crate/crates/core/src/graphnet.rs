//! Graph convolution over line graphs: learned adjacency via mutual top-k
//! pooling, intra-graph aggregation, and cross-graph aggregation driven by
//! the soft assignment between the two images.
//!
//! Feature matrices are `(n+1) x d` with the dustbin row last. A forward
//! pass stacks `blocks` rounds of adjacency learning, intra-graph
//! convolution, a transport solve on the current embeddings, and
//! cross-graph convolution, then one final transport solve.

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::config::{GraphConfig, TransportConfig};
use crate::error::{Error, Result};
use crate::transport::solve_matching;

/// Learnable weights of one graph block.
///
/// `omega` and the score vectors `a1`/`a2` build relation scores on the
/// block input (width `d_in`); `theta_nbr`/`theta_self` map `d_in` to the
/// block width; `cross_w` maps the concatenated cross-graph input
/// (`2 * width`) back to `width`. Both graphs share one set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphLayerParams {
    pub omega: Array2<f64>,
    pub a1: Array1<f64>,
    pub a2: Array1<f64>,
    pub theta_nbr: Array2<f64>,
    pub theta_self: Array2<f64>,
    pub cross_w: Array2<f64>,
}

fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, std).unwrap();
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

impl GraphLayerParams {
    /// He-style initialization scaled by each weight's fan-in.
    pub fn init(d_in: usize, width: usize, rng: &mut impl Rng) -> Self {
        let vec_normal = Normal::new(0.0, (1.0 / width as f64).sqrt()).unwrap();
        GraphLayerParams {
            omega: normal_matrix(width, d_in, (2.0 / d_in as f64).sqrt(), rng),
            a1: Array1::from_shape_simple_fn(width, || vec_normal.sample(rng)),
            a2: Array1::from_shape_simple_fn(width, || vec_normal.sample(rng)),
            theta_nbr: normal_matrix(d_in, width, (2.0 / d_in as f64).sqrt(), rng),
            theta_self: normal_matrix(d_in, width, (2.0 / d_in as f64).sqrt(), rng),
            cross_w: normal_matrix(2 * width, width, (1.0 / width as f64).sqrt(), rng),
        }
    }

    pub fn param_count(&self) -> usize {
        self.omega.len()
            + self.a1.len()
            + self.a2.len()
            + self.theta_nbr.len()
            + self.theta_self.len()
            + self.cross_w.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphParams {
    pub layers: Vec<GraphLayerParams>,
}

impl GraphParams {
    /// Block 0 consumes `input_dim` features; later blocks consume the
    /// block width.
    pub fn init(input_dim: usize, cfg: &GraphConfig, rng: &mut impl Rng) -> Self {
        let layers = (0..cfg.blocks)
            .map(|l| {
                let d_in = if l == 0 { input_dim } else { cfg.width };
                GraphLayerParams::init(d_in, cfg.width, rng)
            })
            .collect();
        GraphParams { layers }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }
}

/// Tape handles for one block's weights.
pub struct GraphLayerVars {
    pub omega: Var,
    pub a1: Var,
    pub a2: Var,
    pub theta_nbr: Var,
    pub theta_self: Var,
    pub cross_w: Var,
}

pub struct GraphVars {
    pub layers: Vec<GraphLayerVars>,
}

pub fn leaf_graph_params(tape: &Tape, params: &GraphParams, trainable: bool) -> GraphVars {
    GraphVars {
        layers: params
            .layers
            .iter()
            .map(|l| GraphLayerVars {
                omega: tape.leaf(l.omega.clone().into_dyn(), trainable),
                a1: tape.leaf(l.a1.clone().into_dyn(), trainable),
                a2: tape.leaf(l.a2.clone().into_dyn(), trainable),
                theta_nbr: tape.leaf(l.theta_nbr.clone().into_dyn(), trainable),
                theta_self: tape.leaf(l.theta_self.clone().into_dyn(), trainable),
                cross_w: tape.leaf(l.cross_w.clone().into_dyn(), trainable),
            })
            .collect(),
    }
}

/// Pairwise scores `relu(a1 . (omega f_i) + a2 . (omega f_j))` for all
/// node pairs, shape `(n+1) x (n+1)`.
pub fn relation_scores(tape: &Tape, features: Var, omega: Var, a1: Var, a2: Var) -> Result<Var> {
    let (rows, d) = {
        let f = tape.value(features);
        (f.shape()[0], f.shape()[1])
    };
    let (q, od) = {
        let o = tape.value(omega);
        (o.shape()[0], o.shape()[1])
    };
    if od != d {
        return Err(Error::shape(format!(
            "projection is {q}x{od}, features are {rows}x{d}"
        )));
    }
    if tape.value(a1).shape() != [q] || tape.value(a2).shape() != [q] {
        return Err(Error::shape("score vectors must match projection rows"));
    }
    let proj = tape.matmul(features, tape.transpose(omega));
    let u = tape.reshape(tape.matmul(proj, tape.reshape(a1, &[q, 1])), &[rows]);
    let v = tape.reshape(tape.matmul(proj, tape.reshape(a2, &[q, 1])), &[rows]);
    let zeros = tape.constant(ArrayD::zeros(IxDyn(&[rows, rows])));
    Ok(tape.relu(tape.add_row(tape.add_col(zeros, u), v)))
}

/// `ceil(k * n)` clamped into `[1, n]`; the flag reports a clamp.
pub fn neighbor_count(k: f64, n: usize) -> (usize, bool) {
    let raw = (k * n as f64).ceil() as usize;
    if raw > n {
        (n, true)
    } else {
        (raw.max(1), false)
    }
}

pub struct AdjacencyOut {
    /// Scores with non-selected entries zeroed.
    pub sparse: Var,
    /// Normalized mutual adjacency, last row and column zero.
    pub adjacency: Var,
    /// True when `ceil(k n)` exceeded `n` and was clamped.
    pub clamped: bool,
}

/// Keep each row's top `ceil(k n)` scores, enforce mutuality, and
/// normalize: `A = tanh(A_s A_s^T) / ceil(k n)` with the dustbin row and
/// column zeroed. With `strict_mutual`, entries whose endpoints do not
/// both select each other are zeroed before the product; otherwise the
/// product alone enforces neighborhood overlap.
pub fn mutual_topk_adjacency(
    tape: &Tape,
    scores: Var,
    k: f64,
    n: usize,
    strict_mutual: bool,
) -> Result<AdjacencyOut> {
    if n < 1 {
        return Err(Error::invalid("adjacency needs at least one detected node"));
    }
    if !(k > 0.0) {
        return Err(Error::invalid("keep ratio must be positive"));
    }
    let shape = tape.value(scores).shape().to_vec();
    if shape != [n + 1, n + 1] {
        return Err(Error::shape(format!(
            "scores are {shape:?}, expected ({}, {})",
            n + 1,
            n + 1
        )));
    }
    let (kn, clamped) = neighbor_count(k, n);
    if clamped {
        eprintln!("warning: keep ratio {k} asks for more than {n} neighbors, clamped");
    }
    let rows = n + 1;
    let values = tape.value_owned(scores);
    // top-kn per row; ties keep the lower column index
    let mut keep = vec![vec![false; rows]; rows];
    for i in 0..rows {
        let mut order: Vec<usize> = (0..rows).collect();
        order.sort_by(|&x, &y| {
            values[[i, y]]
                .partial_cmp(&values[[i, x]])
                .unwrap()
                .then(x.cmp(&y))
        });
        for &j in order.iter().take(kn) {
            keep[i][j] = true;
        }
    }
    let mut mask = Array2::<f64>::zeros((rows, rows));
    for i in 0..rows {
        for j in 0..rows {
            let selected = if strict_mutual {
                keep[i][j] && keep[j][i]
            } else {
                keep[i][j]
            };
            if selected {
                mask[[i, j]] = 1.0;
            }
        }
    }
    let sparse = tape.mul_mask(scores, mask.into_dyn());
    let product = tape.matmul(sparse, tape.transpose(sparse));
    let normalized = tape.scale(tape.tanh(product), 1.0 / kn as f64);
    let mut edge_mask = Array2::<f64>::ones((rows, rows));
    for t in 0..rows {
        edge_mask[[rows - 1, t]] = 0.0;
        edge_mask[[t, rows - 1]] = 0.0;
    }
    let adjacency = tape.mul_mask(normalized, edge_mask.into_dyn());
    Ok(AdjacencyOut {
        sparse,
        adjacency,
        clamped,
    })
}

/// Ablation baseline: every detected pair connected with weight `1/n`,
/// dustbin row and column zero.
pub fn uniform_adjacency(tape: &Tape, n: usize) -> Var {
    let rows = n + 1;
    let mut a = Array2::<f64>::zeros((rows, rows));
    if n > 0 {
        let w = 1.0 / n as f64;
        for i in 0..n {
            for j in 0..n {
                a[[i, j]] = w;
            }
        }
    }
    tape.constant(a.into_dyn())
}

/// `relu(A F Theta_nbr) + relu(F Theta_self)`.
pub fn intra_conv(
    tape: &Tape,
    adjacency: Var,
    features: Var,
    theta_nbr: Var,
    theta_self: Var,
) -> Result<Var> {
    let (rows, d) = {
        let f = tape.value(features);
        (f.shape()[0], f.shape()[1])
    };
    if tape.value(adjacency).shape() != [rows, rows] {
        return Err(Error::shape("adjacency must be square over the nodes"));
    }
    let t1 = tape.value(theta_nbr).shape().to_vec();
    let t2 = tape.value(theta_self).shape().to_vec();
    if t1.len() != 2 || t1[0] != d || t1 != t2 {
        return Err(Error::shape(format!(
            "intra weights {t1:?} / {t2:?} do not map width {d}"
        )));
    }
    let nbr = tape.relu(tape.matmul(tape.matmul(adjacency, features), theta_nbr));
    let own = tape.relu(tape.matmul(features, theta_self));
    Ok(tape.add(nbr, own))
}

/// Cross-graph update. Detected rows concatenate the transport-weighted
/// average of the other graph with the node's own embedding, then project
/// by `w_cross`; the dustbin row projects `[0 | own dustbin]` so it
/// aggregates nothing from the other graph.
pub fn cross_conv(
    tape: &Tape,
    fa: Var,
    fb: Var,
    log_p: Var,
    w_cross: Var,
) -> Result<(Var, Var)> {
    let (ra, d) = {
        let f = tape.value(fa);
        (f.shape()[0], f.shape()[1])
    };
    let (rb, db) = {
        let f = tape.value(fb);
        (f.shape()[0], f.shape()[1])
    };
    if db != d {
        return Err(Error::shape("cross-graph feature widths differ"));
    }
    if tape.value(log_p).shape() != [ra, rb] {
        return Err(Error::shape("assignment shape does not match node counts"));
    }
    let w_shape = tape.value(w_cross).shape().to_vec();
    if w_shape.len() != 2 || w_shape[0] != 2 * d {
        return Err(Error::shape(format!(
            "cross weight is {w_shape:?}, expected first dim {}",
            2 * d
        )));
    }
    let (n, m) = (ra - 1, rb - 1);
    let p = tape.exp(log_p);
    let one_side = |p_rows: Var, other: Var, own: Var, count: usize| {
        let agg = tape.matmul(p_rows, other);
        let own_det = tape.slice_rows(own, 0, count);
        let detected = tape.matmul(tape.concat_cols(agg, own_det), w_cross);
        let zero = tape.constant(ArrayD::zeros(IxDyn(&[1, d])));
        let dust_in = tape.concat_cols(zero, tape.slice_rows(own, count, count + 1));
        let dust = tape.matmul(dust_in, w_cross);
        tape.concat_rows(detected, dust)
    };
    let pa = tape.slice_rows(p, 0, n);
    let new_a = one_side(pa, fb, fa, n);
    // transpose first, then take detected rows: the only shape-consistent
    // reading of the mirrored update
    let pb = tape.slice_rows(tape.transpose(p), 0, m);
    let new_b = one_side(pb, fa, fb, m);
    Ok((new_a, new_b))
}

/// Final embeddings and assignment of the stacked forward pass.
pub struct GraphForward {
    pub fa: Var,
    pub fb: Var,
    pub log_p: Var,
    pub converged: bool,
    pub adjacency_clamped: bool,
}

/// Run `cfg.blocks` rounds of adjacency learning, intra-graph convolution,
/// transport on the current embeddings, and cross-graph convolution, then
/// one final transport solve with the shared affinity weight `c`.
pub fn graph_forward(
    tape: &Tape,
    fa0: Var,
    fb0: Var,
    vars: &GraphVars,
    c: Var,
    cfg: &GraphConfig,
    transport_cfg: &TransportConfig,
) -> Result<GraphForward> {
    if vars.layers.len() != cfg.blocks {
        return Err(Error::config(format!(
            "{} blocks configured but {} parameter sets",
            cfg.blocks,
            vars.layers.len()
        )));
    }
    let mut fa = fa0;
    let mut fb = fb0;
    let mut clamped = false;
    for (l, layer) in vars.layers.iter().enumerate() {
        let n = tape.value(fa).shape()[0] - 1;
        let m = tape.value(fb).shape()[0] - 1;
        let k = cfg.keep_ratio(l);
        let adj_a = if cfg.uniform_adjacency || n == 0 {
            uniform_adjacency(tape, n)
        } else {
            let scores = relation_scores(tape, fa, layer.omega, layer.a1, layer.a2)?;
            let out = mutual_topk_adjacency(tape, scores, k, n, cfg.strict_mutual)?;
            clamped |= out.clamped;
            out.adjacency
        };
        let adj_b = if cfg.uniform_adjacency || m == 0 {
            uniform_adjacency(tape, m)
        } else {
            let scores = relation_scores(tape, fb, layer.omega, layer.a1, layer.a2)?;
            let out = mutual_topk_adjacency(tape, scores, k, m, cfg.strict_mutual)?;
            clamped |= out.clamped;
            out.adjacency
        };
        fa = intra_conv(tape, adj_a, fa, layer.theta_nbr, layer.theta_self)?;
        fb = intra_conv(tape, adj_b, fb, layer.theta_nbr, layer.theta_self)?;
        let block_transport = solve_matching(tape, fa, fb, c, transport_cfg)?;
        let (na, nb) = cross_conv(tape, fa, fb, block_transport.log_p, layer.cross_w)?;
        fa = na;
        fb = nb;
    }
    let final_transport = solve_matching(tape, fa, fb, c, transport_cfg)?;
    Ok(GraphForward {
        fa,
        fb,
        log_p: final_transport.log_p,
        converged: final_transport.converged,
        adjacency_clamped: clamped,
    })
}
