//! Soft assignment between two line sets as entropy-regularized optimal
//! transport, solved by log-domain Sinkhorn iteration, plus hard match
//! extraction.
//!
//! Matrices are `(n+1) x (m+1)` with the dustbin row/column last. The
//! dustbin marginals are `a = [1,...,1, m]` and `b = [1,...,1, n]`, so
//! every detected line carries unit mass and each dustbin can absorb the
//! entire other side.

use ndarray::{Array1, Array2};

use crate::autodiff::{Tape, Var};
use crate::config::TransportConfig;
use crate::error::{Error, Result};
use crate::types::MatchSet;

/// Transport marginals with dustbin entries last.
pub fn dustbin_marginals(n: usize, m: usize) -> (Array1<f64>, Array1<f64>) {
    let mut a = Array1::<f64>::ones(n + 1);
    a[n] = m as f64;
    let mut b = Array1::<f64>::ones(m + 1);
    b[m] = n as f64;
    (a, b)
}

/// Log-domain affinity: `log M = Fa C Fb^T / delta`.
pub fn affinity(tape: &Tape, fa: Var, fb: Var, c: Var, temperature: f64) -> Result<Var> {
    if temperature <= 0.0 {
        return Err(Error::invalid("temperature must be positive"));
    }
    let (wa, wb, cs) = {
        let a = tape.value(fa);
        let b = tape.value(fb);
        let cm = tape.value(c);
        (a.shape()[1], b.shape()[1], cm.shape().to_vec())
    };
    if cs != [wa, wb] {
        return Err(Error::shape(format!(
            "affinity weight is {cs:?}, embeddings need ({wa}, {wb})"
        )));
    }
    let proj = tape.matmul(fa, c);
    let scores = tape.matmul(proj, tape.transpose(fb));
    Ok(tape.scale(scores, 1.0 / temperature))
}

/// Result of a Sinkhorn solve; `log_p` stays on the tape for the loss.
pub struct SinkhornOut {
    pub log_p: Var,
    pub converged: bool,
    pub iterations: usize,
}

fn log_or_floor(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        -1e30
    }
}

/// Worst marginal violation of `exp(log_p)` against `(a, b)`.
pub fn marginal_residual(log_p: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let p = log_p.mapv(f64::exp);
    let mut worst = 0.0f64;
    for (i, &ai) in a.iter().enumerate() {
        worst = worst.max((p.row(i).sum() - ai).abs());
    }
    for (j, &bj) in b.iter().enumerate() {
        worst = worst.max((p.column(j).sum() - bj).abs());
    }
    worst
}

/// Alternate row and column potential updates in the log domain until the
/// marginal residual drops below `cfg.tol` (when `cfg.early_stop`) or
/// `cfg.max_iters` is reached. Differentiable through the unrolled loop.
pub fn sinkhorn_log(
    tape: &Tape,
    log_m: Var,
    a: &Array1<f64>,
    b: &Array1<f64>,
    cfg: &TransportConfig,
) -> Result<SinkhornOut> {
    let shape = tape.value(log_m).shape().to_vec();
    if shape.len() != 2 || shape[0] != a.len() || shape[1] != b.len() {
        return Err(Error::shape(format!(
            "affinity is {shape:?}, marginals are {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b.iter()).any(|&x| x < 0.0) {
        return Err(Error::invalid("marginals must be non-negative"));
    }
    if (a.sum() - b.sum()).abs() > 1e-9 * (1.0 + a.sum().abs()) {
        return Err(Error::invalid(format!(
            "marginals must balance: sum(a) = {}, sum(b) = {}",
            a.sum(),
            b.sum()
        )));
    }
    let log_a = tape.constant(a.mapv(log_or_floor).into_dyn());
    let log_b = tape.constant(b.mapv(log_or_floor).into_dyn());
    let mut g = tape.constant(ndarray::ArrayD::zeros(ndarray::IxDyn(&[b.len()])));
    let mut f;
    let mut iterations = 0;
    let mut converged = false;
    let mut log_p = log_m;
    for _ in 0..cfg.max_iters {
        f = tape.sub(log_a, tape.logsumexp_rows(tape.add_row(log_m, g)));
        g = tape.sub(log_b, tape.logsumexp_cols(tape.add_col(log_m, f)));
        log_p = tape.add_row(tape.add_col(log_m, f), g);
        iterations += 1;
        if cfg.early_stop {
            let lp = tape
                .value_owned(log_p)
                .into_dimensionality::<ndarray::Ix2>()
                .expect("2-d plan");
            if marginal_residual(&lp, a, b) <= cfg.tol {
                converged = true;
                break;
            }
        }
    }
    if !cfg.early_stop || !converged {
        let lp = tape
            .value_owned(log_p)
            .into_dimensionality::<ndarray::Ix2>()
            .expect("2-d plan");
        converged = marginal_residual(&lp, a, b) <= cfg.tol;
    }
    Ok(SinkhornOut {
        log_p,
        converged,
        iterations,
    })
}

/// Affinity followed by Sinkhorn with dustbin marginals inferred from the
/// embedding row counts.
pub fn solve_matching(
    tape: &Tape,
    fa: Var,
    fb: Var,
    c: Var,
    cfg: &TransportConfig,
) -> Result<SinkhornOut> {
    let n = tape.value(fa).shape()[0] - 1;
    let m = tape.value(fb).shape()[0] - 1;
    let log_m = affinity(tape, fa, fb, c, cfg.temperature)?;
    let (a, b) = dustbin_marginals(n, m);
    sinkhorn_log(tape, log_m, &a, &b, cfg)
}

/// Mutual-argmax extraction with a mass floor. Indices are in the space
/// of the rows/columns of `log_p` (dustbins excluded from the output).
pub fn extract_matches(log_p: &Array2<f64>, score_floor: f64) -> MatchSet {
    let (rows, cols) = log_p.dim();
    let (n, m) = (rows - 1, cols - 1);
    let p = log_p.mapv(f64::exp);
    let argmax = |values: Vec<f64>| -> usize {
        let mut best = 0;
        for (k, &v) in values.iter().enumerate() {
            if v > values[best] {
                best = k;
            }
        }
        best
    };
    let row_arg: Vec<usize> = (0..n)
        .map(|i| argmax(p.row(i).to_vec()))
        .collect();
    let col_arg: Vec<usize> = (0..m)
        .map(|j| argmax(p.column(j).to_vec()))
        .collect();
    let mut out = MatchSet::default();
    let mut matched_b = vec![false; m];
    for (i, &j) in row_arg.iter().enumerate() {
        if j < m && col_arg[j] == i && p[[i, j]] >= score_floor {
            out.matches.push((i, j, p[[i, j]]));
            matched_b[j] = true;
        } else {
            out.unmatched_a.push(i);
        }
    }
    for (j, &taken) in matched_b.iter().enumerate() {
        if !taken {
            out.unmatched_b.push(j);
        }
    }
    out
}
