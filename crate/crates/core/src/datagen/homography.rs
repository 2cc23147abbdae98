//! Planar homographies for synthetic pair generation: point and segment
//! mapping, composition, inversion, and random warp sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::types::LineSegment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography(pub [[f64; 3]; 3]);

impl Homography {
    pub fn identity() -> Self {
        Homography([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Rotation by `angle_rad` and uniform `scale` about `(cx, cy)`, then
    /// translation by `(tx, ty)`, with projective row `(p1, p2, 1)`.
    pub fn similarity_about(
        cx: f64,
        cy: f64,
        angle_rad: f64,
        scale: f64,
        tx: f64,
        ty: f64,
        p1: f64,
        p2: f64,
    ) -> Self {
        let a = scale * angle_rad.cos();
        let b = scale * angle_rad.sin();
        // x' = a (x - cx) - b (y - cy) + cx + tx
        Homography([
            [a, -b, cx + tx - a * cx + b * cy],
            [b, a, cy + ty - b * cx - a * cy],
            [p1, p2, 1.0],
        ])
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let h = &self.0;
        let w = h[2][0] * x + h[2][1] * y + h[2][2];
        (
            (h[0][0] * x + h[0][1] * y + h[0][2]) / w,
            (h[1][0] * x + h[1][1] * y + h[1][2]) / w,
        )
    }

    pub fn map_segment(&self, seg: &LineSegment) -> LineSegment {
        let (x0, y0) = self.apply(seg.x0, seg.y0);
        let (x1, y1) = self.apply(seg.x1, seg.y1);
        LineSegment { x0, y0, x1, y1 }
    }

    pub fn determinant(&self) -> f64 {
        let h = &self.0;
        h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1])
            - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
            + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0])
    }

    pub fn inverse(&self) -> Option<Homography> {
        let det = self.determinant();
        if det.abs() < 1e-12 {
            return None;
        }
        let h = &self.0;
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| {
            h[r0][c0] * h[r1][c1] - h[r0][c1] * h[r1][c0]
        };
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        let mut out = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                out[r][c] = adj[r][c] / det;
            }
        }
        Some(Homography(out))
    }

    /// `self` after `other`: `(self * other)(x) = self(other(x))`.
    pub fn compose(&self, other: &Homography) -> Homography {
        let mut out = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                for k in 0..3 {
                    out[r][c] += self.0[r][k] * other.0[k][c];
                }
            }
        }
        Homography(out)
    }

    /// Random in-view warp; resamples internally while the determinant is
    /// degenerate.
    #[allow(clippy::too_many_arguments)]
    pub fn random_warp(
        rng: &mut impl Rng,
        width: usize,
        height: usize,
        max_rotation_deg: f64,
        scale_range: (f64, f64),
        max_translation_frac: f64,
        max_perspective: f64,
    ) -> Homography {
        let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
        loop {
            let angle = rng.random_range(-max_rotation_deg..=max_rotation_deg).to_radians();
            let scale = rng.random_range(scale_range.0..=scale_range.1);
            let tx = rng.random_range(-1.0..=1.0) * max_translation_frac * width as f64;
            let ty = rng.random_range(-1.0..=1.0) * max_translation_frac * height as f64;
            let p1 = rng.random_range(-max_perspective..=max_perspective);
            let p2 = rng.random_range(-max_perspective..=max_perspective);
            let h = Homography::similarity_about(cx, cy, angle, scale, tx, ty, p1, p2);
            if h.determinant().abs() > 1e-6 {
                return h;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_maps_points_to_themselves() {
        let h = Homography::identity();
        assert_eq!(h.apply(3.5, -2.0), (3.5, -2.0));
    }

    #[test]
    fn rotation_about_center_keeps_the_center_fixed() {
        let h = Homography::similarity_about(10.0, 20.0, 0.7, 1.3, 0.0, 0.0, 0.0, 0.0);
        let (x, y) = h.apply(10.0, 20.0);
        assert!((x - 10.0).abs() < 1e-12 && (y - 20.0).abs() < 1e-12);
    }

    #[test]
    fn quarter_turn_moves_a_unit_offset() {
        let h = Homography::similarity_about(
            0.0,
            0.0,
            std::f64::consts::FRAC_PI_2,
            1.0,
            0.0,
            0.0,
            0.0,
            0.0,
        );
        let (x, y) = h.apply(1.0, 0.0);
        assert!(x.abs() < 1e-12 && (y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_composes_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let h = Homography::random_warp(&mut rng, 96, 96, 25.0, (0.7, 1.3), 0.1, 3e-4);
            let inv = h.inverse().unwrap();
            let both = h.compose(&inv);
            let (x, y) = both.apply(17.0, 41.0);
            assert!((x - 17.0).abs() < 1e-8 && (y - 41.0).abs() < 1e-8);
        }
    }

    #[test]
    fn perspective_division_is_applied() {
        let h = Homography([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.01, 0.0, 1.0]]);
        let (x, y) = h.apply(10.0, 4.0);
        assert!((x - 10.0 / 1.1).abs() < 1e-12);
        assert!((y - 4.0 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn segments_map_endpoint_wise() {
        let h = Homography::similarity_about(0.0, 0.0, 0.0, 2.0, 1.0, -1.0, 0.0, 0.0);
        let seg = LineSegment {
            x0: 1.0,
            y0: 1.0,
            x1: 2.0,
            y1: 3.0,
        };
        let mapped = h.map_segment(&seg);
        assert_eq!((mapped.x0, mapped.y0), (3.0, 1.0));
        assert_eq!((mapped.x1, mapped.y1), (5.0, 5.0));
    }
}
