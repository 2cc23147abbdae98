//! Shared geometric and matching data types.

use serde::{Deserialize, Serialize};

/// 2-d line segment in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct LineSegment {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<[f64; 4]> for LineSegment {
    fn from(v: [f64; 4]) -> Self {
        LineSegment {
            x0: v[0],
            y0: v[1],
            x1: v[2],
            y1: v[3],
        }
    }
}

impl From<LineSegment> for [f64; 4] {
    fn from(s: LineSegment) -> Self {
        [s.x0, s.y0, s.x1, s.y1]
    }
}

impl LineSegment {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        LineSegment { x0, y0, x1, y1 }
    }

    pub fn length(&self) -> f64 {
        (self.x1 - self.x0).hypot(self.y1 - self.y0)
    }

    pub fn midpoint(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    /// Unit direction from endpoint 0 to endpoint 1; zero-length segments
    /// get (1, 0).
    pub fn direction(&self) -> (f64, f64) {
        let len = self.length();
        if len < 1e-12 {
            (1.0, 0.0)
        } else {
            ((self.x1 - self.x0) / len, (self.y1 - self.y0) / len)
        }
    }

    /// Unit normal (direction rotated +90 degrees).
    pub fn normal(&self) -> (f64, f64) {
        let (dx, dy) = self.direction();
        (-dy, dx)
    }

    /// Acute angle in radians between this segment's direction and
    /// another's (orientation-insensitive, in [0, pi/2]).
    pub fn angle_to(&self, other: &LineSegment) -> f64 {
        let (ax, ay) = self.direction();
        let (bx, by) = other.direction();
        (ax * bx + ay * by).abs().clamp(0.0, 1.0).acos()
    }

    pub fn scaled(&self, s: f64) -> LineSegment {
        LineSegment::new(self.x0 * s, self.y0 * s, self.x1 * s, self.y1 * s)
    }
}

/// Exact correspondence labels for one image pair.
///
/// `pairs` are (index in A, index in B); every line index of either image
/// appears exactly once across `pairs` and the unmatched lists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
}

impl GroundTruth {
    /// Check the partition property against the two line counts.
    pub fn is_partition(&self, n_a: usize, n_b: usize) -> bool {
        let mut seen_a = vec![0u8; n_a];
        let mut seen_b = vec![0u8; n_b];
        for &(i, j) in &self.pairs {
            if i >= n_a || j >= n_b {
                return false;
            }
            seen_a[i] += 1;
            seen_b[j] += 1;
        }
        for &i in &self.unmatched_a {
            if i >= n_a {
                return false;
            }
            seen_a[i] += 1;
        }
        for &j in &self.unmatched_b {
            if j >= n_b {
                return false;
            }
            seen_b[j] += 1;
        }
        seen_a.iter().all(|&c| c == 1) && seen_b.iter().all(|&c| c == 1)
    }
}

/// Hard matching decision extracted from a soft assignment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    /// (index in A, index in B, assignment mass).
    pub matches: Vec<(usize, usize, f64)>,
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
}
