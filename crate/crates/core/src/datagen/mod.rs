//! Dataset production: synthetic homography pairs with exact ground
//! truth, depth-reprojection labeling, pair filtering, and JSON-lines
//! manifest IO.

pub mod depth;
pub mod homography;
pub mod manifest;
pub mod scannet;
pub mod scene;
pub mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{GroundTruth, LineSegment};

/// One dataset entry: two images on disk, their line sets, and the
/// ground-truth partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePairRecord {
    pub image_a: String,
    pub image_b: String,
    pub lines_a: Vec<LineSegment>,
    pub lines_b: Vec<LineSegment>,
    pub gt: GroundTruth,
    pub meta: RecordMeta,
}

/// Generation provenance and the thresholds that produced the labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    /// "synthetic-homography" or "depth-reprojection".
    pub provenance: String,
    pub seed: u64,
    /// Row-major warp taking view A pixels to view B, when synthetic.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub homography: Option<[[f64; 3]; 3]>,
    /// Fraction of view A that lands inside view B.
    pub view_overlap: f64,
    pub angle_thresh_deg: f64,
    pub overlap_thresh: f64,
}

impl ImagePairRecord {
    /// Index bounds and the partition property of the ground truth.
    pub fn validate(&self) -> Result<()> {
        let (n_a, n_b) = (self.lines_a.len(), self.lines_b.len());
        let in_bounds = self
            .gt
            .pairs
            .iter()
            .all(|&(i, j)| i < n_a && j < n_b)
            && self.gt.unmatched_a.iter().all(|&i| i < n_a)
            && self.gt.unmatched_b.iter().all(|&j| j < n_b);
        if !in_bounds {
            return Err(Error::invalid("ground-truth index out of bounds"));
        }
        if !self.gt.is_partition(n_a, n_b) {
            return Err(Error::invalid(
                "ground truth does not partition the line sets",
            ));
        }
        Ok(())
    }

    /// Matched lines divided by unmatched lines across both views;
    /// infinite when nothing is unmatched.
    pub fn match_ratio(&self) -> f64 {
        let non = self.gt.unmatched_a.len() + self.gt.unmatched_b.len();
        if non == 0 {
            f64::INFINITY
        } else {
            self.gt.pairs.len() as f64 / non as f64
        }
    }
}

/// Keep/discard decision for one record: enough matches, not too much
/// view overlap, match ratio inside the bounds.
pub fn filter_pairs(
    record: &ImagePairRecord,
    min_matches: usize,
    max_overlap: f64,
    ratio_bounds: (f64, f64),
) -> bool {
    if record.gt.pairs.len() < min_matches {
        return false;
    }
    if record.meta.view_overlap > max_overlap {
        return false;
    }
    let ratio = record.match_ratio();
    ratio >= ratio_bounds.0 && ratio <= ratio_bounds.1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record_with(pairs: usize, non_a: usize, non_b: usize, overlap: f64) -> ImagePairRecord {
        let seg = |o: f64| LineSegment {
            x0: o,
            y0: 0.0,
            x1: o + 10.0,
            y1: 0.0,
        };
        let n_a = pairs + non_a;
        let n_b = pairs + non_b;
        ImagePairRecord {
            image_a: "a.png".into(),
            image_b: "b.png".into(),
            lines_a: (0..n_a).map(|i| seg(i as f64)).collect(),
            lines_b: (0..n_b).map(|i| seg(i as f64)).collect(),
            gt: GroundTruth {
                pairs: (0..pairs).map(|i| (i, i)).collect(),
                unmatched_a: (pairs..n_a).collect(),
                unmatched_b: (pairs..n_b).collect(),
            },
            meta: RecordMeta {
                provenance: "synthetic-homography".into(),
                seed: 0,
                homography: None,
                view_overlap: overlap,
                angle_thresh_deg: 5.0,
                overlap_thresh: 0.5,
            },
        }
    }

    #[test]
    fn balanced_record_is_kept() {
        let r = record_with(6, 3, 3, 0.7); // ratio 1.0
        assert!(filter_pairs(&r, 5, 0.9, (0.5, 1.5)));
    }

    #[test]
    fn overlarge_ratio_is_discarded() {
        let r = record_with(8, 2, 2, 0.7); // ratio 2.0
        assert!(!filter_pairs(&r, 5, 0.9, (0.5, 1.5)));
    }

    #[test]
    fn too_few_matches_are_discarded() {
        let r = record_with(0, 4, 4, 0.5);
        assert!(!filter_pairs(&r, 5, 0.9, (0.5, 1.5)));
    }

    #[test]
    fn excessive_view_overlap_is_discarded() {
        let r = record_with(6, 3, 3, 0.95);
        assert!(!filter_pairs(&r, 5, 0.9, (0.5, 1.5)));
    }

    #[test]
    fn filter_is_a_pure_predicate() {
        let r = record_with(6, 4, 4, 0.8);
        let first = filter_pairs(&r, 5, 0.9, (0.5, 1.5));
        for _ in 0..5 {
            assert_eq!(filter_pairs(&r, 5, 0.9, (0.5, 1.5)), first);
        }
    }

    #[test]
    fn validation_rejects_bad_indices() {
        let mut r = record_with(3, 1, 1, 0.5);
        r.gt.pairs.push((40, 0));
        assert!(r.validate().is_err());
        let mut r2 = record_with(3, 1, 1, 0.5);
        r2.gt.unmatched_a.clear(); // breaks the partition
        assert!(r2.validate().is_err());
        assert!(record_with(3, 1, 1, 0.5).validate().is_ok());
    }
}
