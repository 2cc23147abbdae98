//! Training objectives: angular-margin descriptor loss, assignment
//! negative log-likelihood, and their balanced combination.

use crate::autodiff::{Tape, Var};
use crate::config::LossConfig;
use crate::error::{Error, Result};
use crate::types::GroundTruth;

/// A scalar loss on the tape, with a flag for degenerate inputs (empty
/// pair list, clamped probabilities) that produced a warning.
pub struct LossTerm {
    pub value: Var,
    pub warned: bool,
}

/// Rows must be unit vectors, except that an exactly-zero row is allowed:
/// a line whose activation support died pools to zero and participates
/// with neutral cosines instead of poisoning the whole batch.
fn validate_unit_rows(tape: &Tape, v: Var, what: &str) -> Result<()> {
    let m = tape.value(v);
    let shape = m.shape().to_vec();
    for i in 0..shape[0] {
        let mut sq = 0.0;
        for j in 0..shape[1] {
            sq += m[[i, j]] * m[[i, j]];
        }
        let norm = sq.sqrt();
        if (norm - 1.0).abs() > 1e-3 && norm > 1e-6 {
            return Err(Error::invalid(format!(
                "{what} row {i} is not unit norm (|r| = {norm})"
            )));
        }
    }
    Ok(())
}

/// Softmax loss over cosine logits with an additive angular margin on the
/// positive pair, averaged over pairs.
///
/// For pair (i, j): `-log( e^{s cos(th_ij + eta)} / (e^{s cos(th_ij + eta)}
/// + sum_{k != j} e^{s cos th_ik}) )` where angles come from the clamped
/// arccosine of descriptor dot products.
pub fn angular_margin_loss(
    tape: &Tape,
    fa: Var,
    fb: Var,
    pairs: &[(usize, usize)],
    scale: f64,
    margin: f64,
) -> Result<LossTerm> {
    validate_unit_rows(tape, fa, "first descriptor set")?;
    validate_unit_rows(tape, fb, "second descriptor set")?;
    let (n, m) = {
        let a = tape.value(fa);
        let b = tape.value(fb);
        (a.shape()[0], b.shape()[0])
    };
    if pairs.is_empty() {
        return Ok(LossTerm {
            value: tape.constant(ndarray::ArrayD::zeros(ndarray::IxDyn(&[]))),
            warned: true,
        });
    }
    for &(i, j) in pairs {
        if i >= n || j >= m {
            return Err(Error::invalid(format!("pair ({i}, {j}) out of range")));
        }
    }

    let cos = tape.matmul(fa, tape.transpose(fb));
    let theta = tape.acos_clamped(cos, 1e-8);

    let pos_theta = tape.gather_entries(theta, pairs);
    let pos_margined = tape.add_scalar(pos_theta, margin);
    let pos_logit = tape.scale(tape.cos(pos_margined), scale); // (p)

    let neg_logits = tape.scale(tape.cos(theta), scale); // (n, m)
    let pair_rows: Vec<usize> = pairs.iter().map(|&(i, _)| i).collect();
    let rows = tape.gather_rows(neg_logits, &pair_rows); // (p, m)
    // additively mask out each pair's own column before the log-sum-exp
    let mut mask = ndarray::Array2::<f64>::zeros((pairs.len(), m));
    for (r, &(_, j)) in pairs.iter().enumerate() {
        mask[[r, j]] = -1e30;
    }
    let masked = tape.add(rows, tape.constant(mask.into_dyn()));
    let p = pairs.len();
    let pos_col = tape.reshape(pos_logit, &[p, 1]);
    let full = tape.concat_cols(pos_col, masked); // (p, 1 + m)
    let denom = tape.logsumexp_rows(full); // (p)
    let per_pair = tape.sub(denom, pos_logit);
    let total = tape.sum_all(per_pair);
    Ok(LossTerm {
        value: tape.scale(total, 1.0 / p as f64),
        warned: false,
    })
}

/// Sum of the angular-margin loss over both layers and both directions,
/// with layer-specific scale and margin.
#[allow(clippy::too_many_arguments)]
pub fn feature_learning_loss(
    tape: &Tape,
    a_shallow: Var,
    a_deep: Var,
    b_shallow: Var,
    b_deep: Var,
    pairs: &[(usize, usize)],
    cfg: &LossConfig,
) -> Result<LossTerm> {
    let reversed: Vec<(usize, usize)> = pairs.iter().map(|&(i, j)| (j, i)).collect();
    let mut warned = false;
    let mut acc: Option<Var> = None;
    for (fa, fb, ps) in [
        (a_shallow, b_shallow, pairs),
        (b_shallow, a_shallow, reversed.as_slice()),
    ] {
        let term = angular_margin_loss(tape, fa, fb, ps, cfg.shallow_scale, cfg.shallow_margin)?;
        warned |= term.warned;
        acc = Some(match acc {
            Some(a) => tape.add(a, term.value),
            None => term.value,
        });
    }
    for (fa, fb, ps) in [
        (a_deep, b_deep, pairs),
        (b_deep, a_deep, reversed.as_slice()),
    ] {
        let term = angular_margin_loss(tape, fa, fb, ps, cfg.deep_scale, cfg.deep_margin)?;
        warned |= term.warned;
        acc = Some(match acc {
            Some(a) => tape.add(a, term.value),
            None => term.value,
        });
    }
    Ok(LossTerm {
        value: acc.expect("four terms"),
        warned,
    })
}

/// Negative log-likelihood of the ground-truth assignment under a
/// log-domain transport plan of shape `(n+1, m+1)` (dustbins last).
///
/// Unnormalized sum over matched pairs and both dustbin target sets;
/// probabilities are clamped at 1e-12 (clamping sets the warning flag).
pub fn matching_loss(tape: &Tape, log_p: Var, gt: &GroundTruth) -> Result<LossTerm> {
    let shape = tape.value(log_p).shape().to_vec();
    let (n, m) = (shape[0] - 1, shape[1] - 1);
    let mut targets: Vec<(usize, usize)> = Vec::new();
    for &(i, j) in &gt.pairs {
        if i >= n || j >= m {
            return Err(Error::invalid(format!("gt pair ({i}, {j}) out of range")));
        }
        targets.push((i, j));
    }
    for &i in &gt.unmatched_a {
        if i >= n {
            return Err(Error::invalid(format!("unmatched A index {i} out of range")));
        }
        targets.push((i, m));
    }
    for &j in &gt.unmatched_b {
        if j >= m {
            return Err(Error::invalid(format!("unmatched B index {j} out of range")));
        }
        targets.push((n, j));
    }
    if targets.is_empty() {
        return Ok(LossTerm {
            value: tape.constant(ndarray::ArrayD::zeros(ndarray::IxDyn(&[]))),
            warned: true,
        });
    }
    let warned = {
        let lp = tape.value(log_p);
        targets
            .iter()
            .any(|&(i, j)| lp[[i, j]] <= (1e-12f64).ln())
    };
    let p = tape.exp(log_p);
    let logs = tape.ln_clamped(p, 1e-12);
    let picked = tape.gather_entries(logs, &targets);
    let total = tape.sum_all(picked);
    Ok(LossTerm {
        value: tape.neg(total),
        warned,
    })
}

/// `balance * feature + (1 - balance) * graph`.
pub fn total_loss(tape: &Tape, feature: Var, graph: Var, balance: f64) -> Var {
    tape.add(
        tape.scale(feature, balance),
        tape.scale(graph, 1.0 - balance),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::check_gradients;
    use ndarray::{arr2, Array2, ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_rows(k: usize, d: usize, seed: u64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m: Array2<f64> =
            Array2::from_shape_simple_fn((k, d), || rng.random_range(-1.0..1.0));
        for mut row in m.outer_iter_mut() {
            let n = row.dot(&row).sqrt();
            row /= n;
        }
        m.into_dyn()
    }

    #[test]
    fn margin_free_hand_case_matches_closed_form() {
        let tape = Tape::new();
        let fa = tape.leaf(arr2(&[[1.0, 0.0]]).into_dyn(), false);
        let fb = tape.leaf(arr2(&[[1.0, 0.0], [0.0, 1.0]]).into_dyn(), false);
        let term = angular_margin_loss(&tape, fa, fb, &[(0, 0)], 1.0, 0.0).unwrap();
        let got = tape.value(term.value)[[]];
        let want = (1.0 + (-1.0f64).exp()).ln(); // 0.31326...
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn margined_hand_case_matches_closed_form_and_exceeds_margin_free() {
        let tape = Tape::new();
        let fa = tape.leaf(arr2(&[[1.0, 0.0]]).into_dyn(), false);
        let fb = tape.leaf(arr2(&[[1.0, 0.0], [0.0, 1.0]]).into_dyn(), false);
        let plain = angular_margin_loss(&tape, fa, fb, &[(0, 0)], 1.0, 0.0).unwrap();
        let margined = angular_margin_loss(&tape, fa, fb, &[(0, 0)], 1.0, 0.5).unwrap();
        let got = tape.value(margined.value)[[]];
        let want = (1.0 + (-(0.5f64.cos())).exp()).ln(); // 0.34768...
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        assert!(got > tape.value(plain.value)[[]]);
    }

    #[test]
    fn margin_free_case_reduces_to_softmax_cross_entropy() {
        let fa = unit_rows(3, 4, 1);
        let fb = unit_rows(4, 4, 2);
        let pairs = [(0, 1), (1, 3), (2, 0)];
        let tape = Tape::new();
        let fav = tape.leaf(fa.clone(), false);
        let fbv = tape.leaf(fb.clone(), false);
        let term = angular_margin_loss(&tape, fav, fbv, &pairs, 1.0, 0.0).unwrap();
        let got = tape.value(term.value)[[]];
        // independent softmax cross-entropy over cosine logits
        let mut want = 0.0;
        for &(i, j) in &pairs {
            let logits: Vec<f64> = (0..4)
                .map(|k| {
                    (0..4)
                        .map(|d| fa[[i, d]] * fb[[k, d]])
                        .sum::<f64>()
                        .clamp(-1.0 + 1e-8, 1.0 - 1e-8)
                })
                .collect();
            let denom: f64 = logits.iter().map(|l| l.exp()).sum();
            want -= (logits[j].exp() / denom).ln();
        }
        want /= pairs.len() as f64;
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn empty_pairs_return_zero_with_warning() {
        let tape = Tape::new();
        let fa = tape.leaf(unit_rows(2, 3, 3), false);
        let fb = tape.leaf(unit_rows(2, 3, 4), false);
        let term = angular_margin_loss(&tape, fa, fb, &[], 30.0, 0.5).unwrap();
        assert!(term.warned);
        assert_eq!(tape.value(term.value)[[]], 0.0);
    }

    #[test]
    fn non_unit_rows_are_rejected() {
        let tape = Tape::new();
        let fa = tape.leaf(arr2(&[[2.0, 0.0]]).into_dyn(), false);
        let fb = tape.leaf(unit_rows(2, 2, 5), false);
        assert!(angular_margin_loss(&tape, fa, fb, &[(0, 0)], 1.0, 0.0).is_err());
    }

    #[test]
    fn loss_decreases_as_positive_cosine_increases() {
        let mut prev = f64::INFINITY;
        for &ang in &[1.2f64, 0.8, 0.4, 0.1] {
            let tape = Tape::new();
            let fa = tape.leaf(arr2(&[[ang.cos(), ang.sin()]]).into_dyn(), false);
            let fb = tape.leaf(arr2(&[[1.0, 0.0], [0.0, 1.0]]).into_dyn(), false);
            let term = angular_margin_loss(&tape, fa, fb, &[(0, 0)], 5.0, 0.2).unwrap();
            let v = tape.value(term.value)[[]];
            assert!(v < prev, "loss should fall as cosine rises");
            prev = v;
        }
    }

    #[test]
    fn angular_margin_gradients_match_finite_differences() {
        let fa = unit_rows(4, 5, 6);
        let fb = unit_rows(5, 5, 7);
        let pairs = [(0, 2), (1, 0), (3, 4)];
        let err = check_gradients(&[fa, fb], 1e-6, 1.0, |t, v| {
            angular_margin_loss(t, v[0], v[1], &pairs, 7.0, 0.3)
                .unwrap()
                .value
        });
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn symmetric_instance_gives_equal_directions() {
        let f = unit_rows(4, 3, 8);
        let pairs: Vec<(usize, usize)> = (0..4).map(|i| (i, i)).collect();
        let tape = Tape::new();
        let fa = tape.leaf(f.clone(), false);
        let fb = tape.leaf(f, false);
        let ab = angular_margin_loss(&tape, fa, fb, &pairs, 30.0, 0.5).unwrap();
        let rev: Vec<(usize, usize)> = pairs.iter().map(|&(i, j)| (j, i)).collect();
        let ba = angular_margin_loss(&tape, fb, fa, &rev, 30.0, 0.5).unwrap();
        let a = tape.value(ab.value)[[]];
        let b = tape.value(ba.value)[[]];
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn feature_loss_is_sum_of_four_terms() {
        let a3 = unit_rows(4, 3, 9);
        let a5 = unit_rows(4, 6, 10);
        let b3 = unit_rows(4, 3, 11);
        let b5 = unit_rows(4, 6, 12);
        let pairs = [(0, 1), (2, 3), (3, 0)];
        let cfg = LossConfig::default();
        let tape = Tape::new();
        let va3 = tape.leaf(a3, false);
        let va5 = tape.leaf(a5, false);
        let vb3 = tape.leaf(b3, false);
        let vb5 = tape.leaf(b5, false);
        let total = feature_learning_loss(&tape, va3, va5, vb3, vb5, &pairs, &cfg).unwrap();
        let rev: Vec<(usize, usize)> = pairs.iter().map(|&(i, j)| (j, i)).collect();
        let mut want = 0.0;
        for (fa, fb, ps, s, eta) in [
            (va3, vb3, &pairs[..], cfg.shallow_scale, cfg.shallow_margin),
            (vb3, va3, &rev[..], cfg.shallow_scale, cfg.shallow_margin),
            (va5, vb5, &pairs[..], cfg.deep_scale, cfg.deep_margin),
            (vb5, va5, &rev[..], cfg.deep_scale, cfg.deep_margin),
        ] {
            let term = angular_margin_loss(&tape, fa, fb, ps, s, eta).unwrap();
            want += tape.value(term.value)[[]];
        }
        let got = tape.value(total.value)[[]];
        assert!((got - want).abs() < 1e-12);
    }

    /// Independent scalar evaluation of the four-term loss with raw loops.
    #[test]
    fn feature_loss_matches_reference_scalar_implementation() {
        let a3 = unit_rows(4, 3, 13);
        let a5 = unit_rows(4, 5, 14);
        let b3 = unit_rows(4, 3, 15);
        let b5 = unit_rows(4, 5, 16);
        let pairs = [(0, 0), (1, 2), (3, 1)];
        let cfg = LossConfig::default();

        let reference_term = |fa: &ArrayD<f64>,
                              fb: &ArrayD<f64>,
                              ps: &[(usize, usize)],
                              s: f64,
                              eta: f64| {
            let d = fa.shape()[1];
            let m = fb.shape()[0];
            let mut total = 0.0;
            for &(i, j) in ps {
                let cos_ij: f64 = (0..d).map(|t| fa[[i, t]] * fb[[j, t]]).sum();
                let th = cos_ij.clamp(-1.0 + 1e-8, 1.0 - 1e-8).acos();
                let pos = (s * (th + eta).cos()).exp();
                let mut denom = pos;
                for k in 0..m {
                    if k == j {
                        continue;
                    }
                    let cos_ik: f64 = (0..d).map(|t| fa[[i, t]] * fb[[k, t]]).sum();
                    let thk = cos_ik.clamp(-1.0 + 1e-8, 1.0 - 1e-8).acos();
                    denom += (s * thk.cos()).exp();
                }
                total -= (pos / denom).ln();
            }
            total / ps.len() as f64
        };
        let rev: Vec<(usize, usize)> = pairs.iter().map(|&(i, j)| (j, i)).collect();
        let want = reference_term(&a3, &b3, &pairs, cfg.shallow_scale, cfg.shallow_margin)
            + reference_term(&b3, &a3, &rev, cfg.shallow_scale, cfg.shallow_margin)
            + reference_term(&a5, &b5, &pairs, cfg.deep_scale, cfg.deep_margin)
            + reference_term(&b5, &a5, &rev, cfg.deep_scale, cfg.deep_margin);

        let tape = Tape::new();
        let got = feature_learning_loss(
            &tape,
            tape.leaf(a3.clone(), false),
            tape.leaf(a5.clone(), false),
            tape.leaf(b3.clone(), false),
            tape.leaf(b5.clone(), false),
            &pairs,
            &cfg,
        )
        .unwrap();
        let got = tape.value(got.value)[[]];
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    fn log_uniform(n: usize, m: usize) -> ArrayD<f64> {
        ArrayD::from_elem(
            IxDyn(&[n + 1, m + 1]),
            (1.0 / ((n + 1) * (m + 1)) as f64).ln(),
        )
    }

    #[test]
    fn matching_loss_uniform_case_is_log4() {
        let tape = Tape::new();
        let lp = tape.leaf(log_uniform(1, 1), false);
        let gt = GroundTruth {
            pairs: vec![(0, 0)],
            ..Default::default()
        };
        let term = matching_loss(&tape, lp, &gt).unwrap();
        let got = tape.value(term.value)[[]];
        assert!((got - 4.0f64.ln()).abs() < 1e-9, "{got}");
        assert!(!term.warned);
    }

    #[test]
    fn matching_loss_is_zero_on_one_hot_targets() {
        // 2x2 detected block with unit mass at every target
        let mut p = Array2::<f64>::from_elem((3, 3), 1e-300);
        p[[0, 1]] = 1.0;
        p[[1, 2]] = 1.0; // unmatched A line -> dustbin column
        p[[2, 0]] = 1.0; // unmatched B line -> dustbin row
        let lp = p.mapv(f64::ln).into_dyn();
        let tape = Tape::new();
        let v = tape.leaf(lp, false);
        let gt = GroundTruth {
            pairs: vec![(0, 1)],
            unmatched_a: vec![1],
            unmatched_b: vec![0],
        };
        let term = matching_loss(&tape, v, &gt).unwrap();
        assert!(tape.value(term.value)[[]].abs() < 1e-9);
    }

    #[test]
    fn matching_loss_matches_reference_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut p: Array2<f64> =
            Array2::from_shape_simple_fn((5, 5), || rng.random_range(0.01..1.0));
        let total: f64 = p.sum();
        p /= total;
        let gt = GroundTruth {
            pairs: vec![(0, 3), (2, 1)],
            unmatched_a: vec![1, 3],
            unmatched_b: vec![0, 2],
        };
        let mut want = 0.0;
        for &(i, j) in &gt.pairs {
            want -= p[[i, j]].ln();
        }
        for &i in &gt.unmatched_a {
            want -= p[[i, 4]].ln();
        }
        for &j in &gt.unmatched_b {
            want -= p[[4, j]].ln();
        }
        let tape = Tape::new();
        let v = tape.leaf(p.mapv(f64::ln).into_dyn(), false);
        let term = matching_loss(&tape, v, &gt).unwrap();
        let got = tape.value(term.value)[[]];
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn matching_loss_clamps_zero_probability_with_warning() {
        let mut p = Array2::<f64>::from_elem((2, 2), 0.5);
        p[[0, 0]] = 0.0;
        let lp = p.mapv(|x: f64| if x > 0.0 { x.ln() } else { -1e30 }).into_dyn();
        let tape = Tape::new();
        let v = tape.leaf(lp, false);
        let gt = GroundTruth {
            pairs: vec![(0, 0)],
            ..Default::default()
        };
        let term = matching_loss(&tape, v, &gt).unwrap();
        assert!(term.warned);
        let got = tape.value(term.value)[[]];
        assert!((got - (-(1e-12f64).ln())).abs() < 1e-6);
    }

    #[test]
    fn matching_loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let mut p: Array2<f64> =
            Array2::from_shape_simple_fn((5, 6), || rng.random_range(0.05..1.0));
        let total: f64 = p.sum();
        p /= total;
        let lp = p.mapv(f64::ln).into_dyn();
        let gt = GroundTruth {
            pairs: vec![(0, 1), (3, 4)],
            unmatched_a: vec![2],
            unmatched_b: vec![0, 3],
        };
        let err = check_gradients(&[lp], 1e-6, 1.0, |t, v| {
            matching_loss(t, v[0], &gt).unwrap().value
        });
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn total_loss_is_affine_combination() {
        let tape = Tape::new();
        let f = tape.constant(ArrayD::from_elem(IxDyn(&[]), 2.0));
        let g = tape.constant(ArrayD::from_elem(IxDyn(&[]), 4.0));
        assert_eq!(tape.value(total_loss(&tape, f, g, 0.5))[[]], 3.0);
        assert_eq!(tape.value(total_loss(&tape, f, g, 1.0))[[]], 2.0);
        assert_eq!(tape.value(total_loss(&tape, f, g, 0.0))[[]], 4.0);
    }
}
