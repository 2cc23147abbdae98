//! Finite-difference verification of recorded gradients.
//!
//! Used by the test suites: every differentiable building block is checked
//! by comparing tape gradients against central differences on small,
//! deterministic inputs.

use ndarray::ArrayD;

use super::{Tape, Var};

/// Central finite difference of a scalar function at `x`, one entry at a
/// time: `(f(x + e) - f(x - e)) / 2e`.
pub fn central_diff<F>(f: F, x: &ArrayD<f64>, eps: f64) -> ArrayD<f64>
where
    F: Fn(&ArrayD<f64>) -> f64,
{
    let mut out = ArrayD::<f64>::zeros(x.raw_dim());
    let slot = out.as_slice_mut().expect("standard layout required");
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.as_slice_mut().unwrap()[i] += eps;
        let mut xm = x.clone();
        xm.as_slice_mut().unwrap()[i] -= eps;
        slot[i] = (f(&xp) - f(&xm)) / (2.0 * eps);
    }
    out
}

/// Worst-case elementwise relative error between two gradients, with an
/// absolute floor so that near-zero entries compare absolutely.
pub fn max_rel_error(analytic: &ArrayD<f64>, numeric: &ArrayD<f64>, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shape mismatch");
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Build a tape over `inputs`, evaluate the scalar produced by `f`, and
/// compare every input gradient against central differences. Returns the
/// worst relative error across all inputs and entries.
pub fn check_gradients<F>(inputs: &[ArrayD<f64>], eps: f64, floor: f64, f: F) -> f64
where
    F: Fn(&Tape, &[Var]) -> Var,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let root = f(&tape, &vars);
    let grads = tape.backward(root);

    let eval = |perturbed: &[ArrayD<f64>]| -> f64 {
        let t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.leaf(x.clone(), false)).collect();
        let r = f(&t, &vs);
        let val = t.value(r);
        *val.iter().next().expect("scalar output")
    };

    let mut worst = 0.0f64;
    for (i, x0) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i], x0.shape());
        let numeric = central_diff(
            |x| {
                let mut set: Vec<ArrayD<f64>> = inputs.to_vec();
                set[i] = x.clone();
                eval(&set)
            },
            x0,
            eps,
        );
        worst = worst.max(max_rel_error(&analytic, &numeric, floor));
    }
    worst
}
