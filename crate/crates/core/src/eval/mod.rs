//! Evaluation: precision/recall/F-measure, robustness sweeps over rotation,
//! blur, and scale, and the ablation toggle table.

pub mod plot;
pub mod transforms;

use std::collections::HashSet;
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{GroundTruth, LineSegment, MatchSet};

/// Percent-scale precision/recall/F-measure with the raw counts behind them.
///
/// `precision_defined` is false when there were no predicted matches, and
/// `recall_defined` is false when the ground truth had no pairs; the percent
/// value is 0 in those cases and the flags let aggregation skip them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gt_matches: usize,
    pub precision_defined: bool,
    pub recall_defined: bool,
}

/// Harmonic mean of percent-scale precision and recall: 2RP/(R+P), or 0 when
/// both are 0.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Score predicted matches against ground truth. A prediction counts as
/// correct only on exact index-pair equality.
pub fn precision_recall_f(predicted: &MatchSet, gt: &GroundTruth) -> MatchMetrics {
    let gt_set: HashSet<(usize, usize)> = gt.pairs.iter().copied().collect();
    let true_positives = predicted
        .matches
        .iter()
        .filter(|(i, j, _)| gt_set.contains(&(*i, *j)))
        .count();
    let predicted_n = predicted.matches.len();
    let gt_n = gt.pairs.len();
    let precision_defined = predicted_n > 0;
    let recall_defined = gt_n > 0;
    let precision = if precision_defined {
        100.0 * true_positives as f64 / predicted_n as f64
    } else {
        0.0
    };
    let recall = if recall_defined {
        100.0 * true_positives as f64 / gt_n as f64
    } else {
        0.0
    };
    MatchMetrics {
        precision,
        recall,
        f_measure: f_measure(precision, recall),
        true_positives,
        predicted: predicted_n,
        gt_matches: gt_n,
        precision_defined,
        recall_defined,
    }
}

/// Pool raw counts across records (micro-averaging) and recompute the
/// percentages from the pooled counts. Records that contribute no predictions
/// or no ground truth simply add nothing to the respective denominator.
pub fn aggregate(per_record: &[MatchMetrics]) -> MatchMetrics {
    let true_positives: usize = per_record.iter().map(|m| m.true_positives).sum();
    let predicted: usize = per_record.iter().map(|m| m.predicted).sum();
    let gt_matches: usize = per_record.iter().map(|m| m.gt_matches).sum();
    let precision_defined = predicted > 0;
    let recall_defined = gt_matches > 0;
    let precision = if precision_defined {
        100.0 * true_positives as f64 / predicted as f64
    } else {
        0.0
    };
    let recall = if recall_defined {
        100.0 * true_positives as f64 / gt_matches as f64
    } else {
        0.0
    };
    MatchMetrics {
        precision,
        recall,
        f_measure: f_measure(precision, recall),
        true_positives,
        predicted,
        gt_matches,
        precision_defined,
        recall_defined,
    }
}

/// Which image-degradation axis a robustness sweep walks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    RotationDeg,
    BlurSigma,
    Scale,
}

impl SweepAxis {
    /// The axis value at which the transform is the identity.
    pub fn identity_value(self) -> f64 {
        match self {
            SweepAxis::RotationDeg | SweepAxis::BlurSigma => 0.0,
            SweepAxis::Scale => 1.0,
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepAxis::RotationDeg => write!(f, "rotation_deg"),
            SweepAxis::BlurSigma => write!(f, "blur_sigma"),
            SweepAxis::Scale => write!(f, "scale"),
        }
    }
}

/// One sweep sample. `metrics` is None when the transform left no ground
/// truth to score against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub metrics: Option<MatchMetrics>,
}

/// A full sweep along one axis; values are strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// CSV with one row per sweep point; undefined points leave the metric
    /// cells empty.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},precision,recall,f_measure,true_positives,predicted,gt_matches\n", self.axis);
        for p in &self.points {
            match &p.metrics {
                Some(m) => out.push_str(&format!(
                    "{},{:.4},{:.4},{:.4},{},{},{}\n",
                    p.value, m.precision, m.recall, m.f_measure, m.true_positives, m.predicted, m.gt_matches
                )),
                None => out.push_str(&format!("{},,,,,,\n", p.value)),
            }
        }
        out
    }
}

/// Borrowed view of one evaluation pair: both images, both line sets, and the
/// ground truth over their indices.
#[derive(Debug, Clone, Copy)]
pub struct EvalPair<'a> {
    pub image_a: &'a Array2<f64>,
    pub image_b: &'a Array2<f64>,
    pub lines_a: &'a [LineSegment],
    pub lines_b: &'a [LineSegment],
    pub gt: &'a GroundTruth,
}

/// Walk one degradation axis: transform the pair at each value, run the
/// matcher, and score it against the remapped ground truth.
///
/// The identity value (0 degrees, sigma 0, scale 1) bypasses the transform
/// entirely, so that point equals the untransformed evaluation bit for bit.
/// Values must be strictly increasing. A transform that empties the ground
/// truth records an undefined point instead of calling the matcher.
pub fn robustness_sweep<M>(
    pair: &EvalPair,
    axis: SweepAxis,
    values: &[f64],
    mut matcher: M,
) -> Result<SweepResult>
where
    M: FnMut(&EvalPair) -> Result<MatchSet>,
{
    for w in values.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::invalid(format!(
                "sweep values must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    let mut points = Vec::with_capacity(values.len());
    for &v in values {
        if v == axis.identity_value() {
            let predicted = matcher(pair)?;
            points.push(SweepPoint { value: v, metrics: Some(precision_recall_f(&predicted, pair.gt)) });
            continue;
        }
        let transformed = match axis {
            SweepAxis::RotationDeg => transforms::rotated_pair(pair, v)?,
            SweepAxis::BlurSigma => transforms::blurred_pair(pair, v)?,
            SweepAxis::Scale => transforms::scaled_pair(pair, v)?,
        };
        if transformed.gt.pairs.is_empty() {
            points.push(SweepPoint { value: v, metrics: None });
            continue;
        }
        let view = transformed.as_eval();
        let predicted = matcher(&view)?;
        points.push(SweepPoint { value: v, metrics: Some(precision_recall_f(&predicted, &transformed.gt)) });
    }
    Ok(SweepResult { axis, points })
}

/// Component switches for the ablation table, ordered as the table columns:
/// feature learning loss, graph learning by top-k pooling, Gaussian-pooled
/// line descriptors.
///
/// Documented fallbacks when a toggle is off: lambda = 0 for the feature
/// loss, a fixed full adjacency for graph learning, and a point-sampling
/// descriptor for the pooled descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationToggles {
    pub feature_loss: bool,
    pub topk_graph_learning: bool,
    pub glpooling: bool,
}

impl AblationToggles {
    /// Derive the configuration for this toggle combination from a
    /// fully-enabled base: disabled feature loss zeroes the descriptor-loss
    /// weight, disabled graph learning swaps in the uniform dense adjacency,
    /// and disabled pooling collapses the descriptor to single-point samples.
    pub fn apply(&self, base: &crate::config::Config) -> crate::config::Config {
        let mut cfg = base.clone();
        if !self.feature_loss {
            cfg.loss.balance = 0.0;
        }
        if !self.topk_graph_learning {
            cfg.graph.uniform_adjacency = true;
        }
        if !self.glpooling {
            cfg.descriptor.cells = 1;
            cfg.descriptor.groups = 1;
        }
        cfg
    }
}

/// The four standard table rows, from everything on to everything off.
pub const ABLATION_ROWS: [AblationToggles; 4] = [
    AblationToggles { feature_loss: true, topk_graph_learning: true, glpooling: true },
    AblationToggles { feature_loss: true, topk_graph_learning: true, glpooling: false },
    AblationToggles { feature_loss: true, topk_graph_learning: false, glpooling: false },
    AblationToggles { feature_loss: false, topk_graph_learning: false, glpooling: false },
];

/// One ablation table row; `metrics` is None when no trained variant was
/// available for that combination (the row is kept so the notice is visible).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub toggles: AblationToggles,
    pub metrics: Option<MatchMetrics>,
}

/// Evaluate each requested toggle combination in order. The closure returns
/// None when it has no trained variant for a combination; that row is kept
/// with empty metrics.
pub fn ablation_run(
    rows: &[AblationToggles],
    mut evaluate: impl FnMut(&AblationToggles) -> Option<MatchMetrics>,
) -> Vec<AblationRow> {
    rows.iter()
        .map(|t| AblationRow { toggles: *t, metrics: evaluate(t) })
        .collect()
}

/// CSV for the ablation table with on/off markers and P/R columns.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mark = |on: bool| if on { "on" } else { "off" };
    let mut out = String::from("feature_loss,topk_graph_learning,glpooling,precision,recall\n");
    for row in rows {
        let t = row.toggles;
        match &row.metrics {
            Some(m) => out.push_str(&format!(
                "{},{},{},{:.4},{:.4}\n",
                mark(t.feature_loss),
                mark(t.topk_graph_learning),
                mark(t.glpooling),
                m.precision,
                m.recall
            )),
            None => out.push_str(&format!(
                "{},{},{},skipped,skipped\n",
                mark(t.feature_loss),
                mark(t.topk_graph_learning),
                mark(t.glpooling)
            )),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn metrics_from(pairs: &[(usize, usize)], predicted: &[(usize, usize)]) -> MatchMetrics {
        let gt = GroundTruth { pairs: pairs.to_vec(), unmatched_a: vec![], unmatched_b: vec![] };
        let pred = MatchSet {
            matches: predicted.iter().map(|&(i, j)| (i, j, 1.0)).collect(),
            unmatched_a: vec![],
            unmatched_b: vec![],
        };
        precision_recall_f(&pred, &gt)
    }

    #[test]
    fn f_measure_matches_published_table_values() {
        assert!((f_measure(85.46, 45.29) - 59.20).abs() < 0.01);
        assert!((f_measure(86.12, 70.47) - 77.51).abs() < 0.01);
    }

    #[test]
    fn perfect_prediction_scores_100() {
        let m = metrics_from(&[(0, 1), (1, 0), (2, 2)], &[(0, 1), (1, 0), (2, 2)]);
        assert_eq!(m.precision, 100.0);
        assert_eq!(m.recall, 100.0);
        assert_eq!(m.f_measure, 100.0);
        assert!(m.precision_defined && m.recall_defined);
    }

    #[test]
    fn empty_sides_set_undefined_flags() {
        let m = metrics_from(&[(0, 0)], &[]);
        assert!(!m.precision_defined && m.recall_defined);
        assert_eq!(m.precision, 0.0);
        let m = metrics_from(&[], &[(0, 0)]);
        assert!(m.precision_defined && !m.recall_defined);
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.f_measure, 0.0);
    }

    #[test]
    fn intersection_count_agrees_with_brute_force() {
        let mut rng = StdRng::seed_from_u64(42);
        for trial in 0..20 {
            let n = rng.random_range(1..=1000);
            let m = rng.random_range(1..=1000);
            let gt_pairs: Vec<(usize, usize)> =
                (0..n).map(|_| (rng.random_range(0..80), rng.random_range(0..80))).collect();
            // Ground-truth pair lists are sets; dedupe.
            let mut gt_pairs: Vec<_> = gt_pairs
                .into_iter()
                .collect::<HashSet<_>>()
                .into_iter()
                .collect();
            gt_pairs.sort_unstable();
            let predicted: Vec<(usize, usize)> = (0..m)
                .map(|_| (rng.random_range(0..80), rng.random_range(0..80)))
                .collect::<HashSet<_>>()
                .into_iter()
                .collect();
            let got = metrics_from(&gt_pairs, &predicted);
            let brute = predicted
                .iter()
                .filter(|p| gt_pairs.iter().any(|g| g == *p))
                .count();
            assert_eq!(got.true_positives, brute, "trial {trial}");
            assert!((got.precision - 100.0 * brute as f64 / predicted.len() as f64).abs() < 1e-12);
            assert!((got.recall - 100.0 * brute as f64 / gt_pairs.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn f_measure_symmetric_and_below_arithmetic_mean() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..500 {
            let p = rng.random_range(0.0..=100.0);
            let r = rng.random_range(0.0..=100.0);
            let f = f_measure(p, r);
            assert!((f - f_measure(r, p)).abs() < 1e-12);
            assert!(f <= (p + r) / 2.0 + 1e-12);
            assert!((0.0..=100.0).contains(&f));
        }
        assert_eq!(f_measure(0.0, 0.0), 0.0);
    }

    #[test]
    fn aggregate_pools_counts_not_percentages() {
        // Record 1: 9/10 predicted correct of 10 gt. Record 2: 1/10 of 10.
        let r1 = metrics_from(
            &(0..10).map(|i| (i, i)).collect::<Vec<_>>(),
            &(0..10).map(|i| (i, if i < 9 { i } else { 99 })).collect::<Vec<_>>(),
        );
        let r2 = metrics_from(
            &(0..10).map(|i| (i, i)).collect::<Vec<_>>(),
            &(0..10).map(|i| (i, if i < 1 { i } else { 99 })).collect::<Vec<_>>(),
        );
        let pooled = aggregate(&[r1, r2]);
        assert_eq!(pooled.true_positives, 10);
        assert_eq!(pooled.predicted, 20);
        assert_eq!(pooled.gt_matches, 20);
        assert!((pooled.precision - 50.0).abs() < 1e-12);
        assert!((pooled.recall - 50.0).abs() < 1e-12);

        // A record with no gt pairs adds false positives to the precision
        // denominator but nothing to the recall denominator.
        let fp_only = metrics_from(&[], &[(5, 5), (6, 6)]);
        let pooled = aggregate(&[r1, fp_only]);
        assert_eq!(pooled.gt_matches, 10);
        assert_eq!(pooled.predicted, 12);
        assert!((pooled.recall - 90.0).abs() < 1e-12);
        assert!((pooled.precision - 75.0).abs() < 1e-12);

        let empty = aggregate(&[]);
        assert!(!empty.precision_defined && !empty.recall_defined);
    }

    fn demo_pair() -> (Array2<f64>, Vec<LineSegment>, GroundTruth) {
        let img = Array2::from_elem((48, 48), 0.3);
        let lines = vec![
            LineSegment { x0: 14.0, y0: 20.0, x1: 34.0, y1: 24.0 },
            LineSegment { x0: 20.0, y0: 30.0, x1: 30.0, y1: 38.0 },
        ];
        let gt = GroundTruth { pairs: vec![(0, 0), (1, 1)], unmatched_a: vec![], unmatched_b: vec![] };
        (img, lines, gt)
    }

    /// Matcher that predicts the identity pairing over however many lines
    /// each side currently has.
    fn identity_matcher(pair: &EvalPair) -> Result<MatchSet> {
        let n = pair.lines_a.len().min(pair.lines_b.len());
        Ok(MatchSet {
            matches: (0..n).map(|i| (i, i, 1.0)).collect(),
            unmatched_a: (n..pair.lines_a.len()).collect(),
            unmatched_b: (n..pair.lines_b.len()).collect(),
        })
    }

    #[test]
    fn identity_sweep_point_equals_direct_evaluation() {
        let (img, lines, gt) = demo_pair();
        let pair = EvalPair { image_a: &img, image_b: &img, lines_a: &lines, lines_b: &lines, gt: &gt };
        for axis in [SweepAxis::RotationDeg, SweepAxis::BlurSigma, SweepAxis::Scale] {
            let id = axis.identity_value();
            let values = if id < 0.5 { vec![id, 10.0] } else { vec![0.5, id] };
            let sweep = robustness_sweep(&pair, axis, &values, identity_matcher).unwrap();
            let direct = precision_recall_f(&identity_matcher(&pair).unwrap(), &gt);
            let idx = if id < 0.5 { 0 } else { 1 };
            assert_eq!(sweep.points[idx].metrics, Some(direct));
        }
    }

    #[test]
    fn blur_sweep_keeps_six_ascending_points() {
        let (img, lines, gt) = demo_pair();
        let pair = EvalPair { image_a: &img, image_b: &img, lines_a: &lines, lines_b: &lines, gt: &gt };
        let values = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
        let sweep = robustness_sweep(&pair, SweepAxis::BlurSigma, &values, identity_matcher).unwrap();
        assert_eq!(sweep.points.len(), 6);
        for (p, v) in sweep.points.iter().zip(values) {
            assert_eq!(p.value, v);
            assert!(p.metrics.is_some());
        }
        let csv = sweep.to_csv();
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.starts_with("blur_sigma,precision,"));
    }

    #[test]
    fn non_increasing_sweep_values_rejected() {
        let (img, lines, gt) = demo_pair();
        let pair = EvalPair { image_a: &img, image_b: &img, lines_a: &lines, lines_b: &lines, gt: &gt };
        assert!(robustness_sweep(&pair, SweepAxis::BlurSigma, &[1.0, 1.0], identity_matcher).is_err());
        assert!(robustness_sweep(&pair, SweepAxis::Scale, &[0.8, 0.4], identity_matcher).is_err());
    }

    #[test]
    fn emptied_ground_truth_records_undefined_point() {
        // All lines hug one corner, so a large opposite rotation pushes them
        // off both canvases and the gt empties.
        let img = Array2::from_elem((64, 64), 0.3);
        let lines = vec![LineSegment { x0: 56.0, y0: 2.0, x1: 62.0, y1: 8.0 }];
        let gt = GroundTruth { pairs: vec![(0, 0)], unmatched_a: vec![], unmatched_b: vec![] };
        let pair = EvalPair { image_a: &img, image_b: &img, lines_a: &lines, lines_b: &lines, gt: &gt };
        let sweep = robustness_sweep(&pair, SweepAxis::RotationDeg, &[90.0], |_| {
            panic!("matcher must not run on an empty ground truth")
        })
        .unwrap();
        assert_eq!(sweep.points[0].metrics, None);
        assert!(sweep.to_csv().contains("90,,,,,,"));
    }

    #[test]
    fn rotation_sweep_scores_remapped_geometry() {
        let (img, lines, gt) = demo_pair();
        let pair = EvalPair { image_a: &img, image_b: &img, lines_a: &lines, lines_b: &lines, gt: &gt };
        let sweep =
            robustness_sweep(&pair, SweepAxis::RotationDeg, &[0.0, 30.0], identity_matcher).unwrap();
        // Central lines survive a 30 degree split rotation, and the identity
        // matcher stays perfect on the relabeled indices.
        let m = sweep.points[1].metrics.unwrap();
        assert_eq!(m.recall, 100.0);
        assert_eq!(m.precision, 100.0);
    }

    #[test]
    fn ablation_rows_follow_table_pattern() {
        let rows = ablation_run(&ABLATION_ROWS, |t| {
            // Fake monotone numbers keyed off the toggle count.
            let on = [t.feature_loss, t.topk_graph_learning, t.glpooling]
                .iter()
                .filter(|&&b| b)
                .count();
            Some(MatchMetrics {
                precision: 70.0 + on as f64,
                recall: 50.0 + on as f64,
                f_measure: 0.0,
                true_positives: on,
                predicted: 10,
                gt_matches: 10,
                precision_defined: true,
                recall_defined: true,
            })
        });
        assert_eq!(rows.len(), 4);
        let pattern: Vec<(bool, bool, bool)> = rows
            .iter()
            .map(|r| (r.toggles.feature_loss, r.toggles.topk_graph_learning, r.toggles.glpooling))
            .collect();
        assert_eq!(
            pattern,
            vec![
                (true, true, true),
                (true, true, false),
                (true, false, false),
                (false, false, false),
            ]
        );
        assert!(rows.iter().all(|r| r.metrics.is_some()));
        let csv = ablation_csv(&rows);
        assert!(csv.starts_with("feature_loss,topk_graph_learning,glpooling,precision,recall\n"));
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.contains("on,on,on,73.0000,53.0000"));
    }

    #[test]
    fn ablation_skips_missing_variants_and_keeps_order() {
        let requested = [ABLATION_ROWS[0], ABLATION_ROWS[3]];
        let rows = ablation_run(&requested, |t| {
            if t.feature_loss {
                Some(MatchMetrics {
                    precision: 80.0,
                    recall: 60.0,
                    f_measure: f_measure(80.0, 60.0),
                    true_positives: 6,
                    predicted: 8,
                    gt_matches: 10,
                    precision_defined: true,
                    recall_defined: true,
                })
            } else {
                None
            }
        });
        assert_eq!(rows.len(), 2);
        assert!(rows[0].metrics.is_some());
        assert!(rows[1].metrics.is_none());
        let csv = ablation_csv(&rows);
        assert!(csv.contains("off,off,off,skipped,skipped"));
    }
}
