//! Geometric and photometric transforms used by the robustness sweeps.
//!
//! Each transform produces a new image pair together with exactly re-mapped
//! line endpoints and a re-indexed ground truth. Rotation splits the requested
//! angle oppositely across the two views; blur and scale apply to both views
//! symmetrically.

use ndarray::Array2;

use super::EvalPair;
use crate::descriptor::relabel_after_exclusion;
use crate::error::{Error, Result};
use crate::types::{GroundTruth, LineSegment};

/// Clipped slivers shorter than this many pixels are dropped from the line
/// set and relabeled out of the ground truth.
pub const MIN_CLIPPED_LEN: f64 = 4.0;

/// An image pair after a sweep transform, with remapped lines and relabeled
/// ground truth.
#[derive(Debug, Clone)]
pub struct TransformedPair {
    pub image_a: Array2<f64>,
    pub image_b: Array2<f64>,
    pub lines_a: Vec<LineSegment>,
    pub lines_b: Vec<LineSegment>,
    pub gt: GroundTruth,
}

impl TransformedPair {
    /// Borrow the transformed data in the shape the sweep evaluator expects.
    pub fn as_eval(&self) -> EvalPair<'_> {
        EvalPair {
            image_a: &self.image_a,
            image_b: &self.image_b,
            lines_a: &self.lines_a,
            lines_b: &self.lines_b,
            gt: &self.gt,
        }
    }
}

/// Bilinear sample with either zero fill or edge clamp outside the canvas.
fn sample_bilinear(img: &Array2<f64>, x: f64, y: f64, zero_outside: bool) -> f64 {
    let (h, w) = img.dim();
    if zero_outside && (x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64) {
        return 0.0;
    }
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    (1.0 - fx) * (1.0 - fy) * img[[y0, x0]]
        + fx * (1.0 - fy) * img[[y0, x1]]
        + (1.0 - fx) * fy * img[[y1, x0]]
        + fx * fy * img[[y1, x1]]
}

/// Rotate a point about (cx, cy) by `angle_rad` in pixel coordinates.
pub fn rotate_point(x: f64, y: f64, cx: f64, cy: f64, angle_rad: f64) -> (f64, f64) {
    let (s, c) = angle_rad.sin_cos();
    let dx = x - cx;
    let dy = y - cy;
    (cx + c * dx - s * dy, cy + s * dx + c * dy)
}

/// Rotate an image about its center, keeping the canvas size. Pixels that map
/// outside the source are filled with zero.
pub fn rotate_image(img: &Array2<f64>, angle_deg: f64) -> Array2<f64> {
    let (h, w) = img.dim();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let inv = -angle_deg.to_radians();
    let mut out = Array2::zeros((h, w));
    for yo in 0..h {
        for xo in 0..w {
            let (xs, ys) = rotate_point(xo as f64, yo as f64, cx, cy, inv);
            out[[yo, xo]] = sample_bilinear(img, xs, ys, true);
        }
    }
    out
}

/// Separable Gaussian blur with kernel radius ceil(3 sigma) and edge-clamped
/// borders. Sigma 0 returns a copy.
pub fn gaussian_blur(img: &Array2<f64>, sigma: f64) -> Result<Array2<f64>> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::invalid(format!("blur sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for i in -radius..=radius {
        kernel.push((-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }
    let (h, w) = img.dim();
    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
    let mut horiz = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let xs = clamp(x as i64 + ki as i64 - radius, w);
                acc += k * img[[y, xs]];
            }
            horiz[[y, x]] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let ys = clamp(y as i64 + ki as i64 - radius, h);
                acc += k * horiz[[ys, x]];
            }
            out[[y, x]] = acc;
        }
    }
    Ok(out)
}

/// Resample an image by an isotropic scale factor. Output dims are
/// round(dim * s), at least 1; samples are edge-clamped.
pub fn scale_image(img: &Array2<f64>, s: f64) -> Result<Array2<f64>> {
    if s <= 0.0 || !s.is_finite() {
        return Err(Error::invalid(format!("scale must be > 0, got {s}")));
    }
    let (h, w) = img.dim();
    let ho = ((h as f64 * s).round() as usize).max(1);
    let wo = ((w as f64 * s).round() as usize).max(1);
    let mut out = Array2::zeros((ho, wo));
    for yo in 0..ho {
        for xo in 0..wo {
            out[[yo, xo]] = sample_bilinear(img, xo as f64 / s, yo as f64 / s, false);
        }
    }
    Ok(out)
}

/// Liang-Barsky clip of a segment to the rectangle [0, w-1] x [0, h-1].
/// Returns None when nothing visible remains.
pub fn clip_segment(seg: &LineSegment, w: usize, h: usize) -> Option<LineSegment> {
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    let dx = seg.x1 - seg.x0;
    let dy = seg.y1 - seg.y0;
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    // (p, q) per boundary: t valid while p*t <= q.
    let bounds = [
        (-dx, seg.x0),
        (dx, xmax - seg.x0),
        (-dy, seg.y0),
        (dy, ymax - seg.y0),
    ];
    for (p, q) in bounds {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
            continue;
        }
        let t = q / p;
        if p < 0.0 {
            if t > t1 {
                return None;
            }
            t0 = t0.max(t);
        } else {
            if t < t0 {
                return None;
            }
            t1 = t1.min(t);
        }
    }
    if t0 > t1 {
        return None;
    }
    Some(LineSegment {
        x0: seg.x0 + t0 * dx,
        y0: seg.y0 + t0 * dy,
        x1: seg.x0 + t1 * dx,
        y1: seg.y0 + t1 * dy,
    })
}

/// Map every line with `f`, keep those that survive clipping with at least
/// `MIN_CLIPPED_LEN` length, and report the kept source indices.
fn remap_lines(
    lines: &[LineSegment],
    w: usize,
    h: usize,
    f: impl Fn(&LineSegment) -> LineSegment,
) -> (Vec<LineSegment>, Vec<usize>) {
    let mut kept = Vec::new();
    let mut keep_idx = Vec::new();
    for (i, seg) in lines.iter().enumerate() {
        let mapped = f(seg);
        if let Some(clipped) = clip_segment(&mapped, w, h) {
            if clipped.length() >= MIN_CLIPPED_LEN {
                kept.push(clipped);
                keep_idx.push(i);
            }
        }
    }
    (kept, keep_idx)
}

/// Rotate the two views in opposite directions by half the requested angle
/// each, remap endpoints exactly, clip to the canvas, and relabel the ground
/// truth over the surviving lines.
pub fn rotated_pair(pair: &EvalPair, total_deg: f64) -> Result<TransformedPair> {
    if !total_deg.is_finite() {
        return Err(Error::invalid("rotation angle must be finite"));
    }
    let half = total_deg / 2.0;
    let (ha, wa) = pair.image_a.dim();
    let (hb, wb) = pair.image_b.dim();
    let rot = |img: &Array2<f64>, deg: f64| rotate_image(img, deg);
    let fwd = |w: usize, h: usize, deg: f64| {
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        let rad = deg.to_radians();
        move |seg: &LineSegment| {
            let (x0, y0) = rotate_point(seg.x0, seg.y0, cx, cy, rad);
            let (x1, y1) = rotate_point(seg.x1, seg.y1, cx, cy, rad);
            LineSegment { x0, y0, x1, y1 }
        }
    };
    let (lines_a, keep_a) = remap_lines(pair.lines_a, wa, ha, fwd(wa, ha, half));
    let (lines_b, keep_b) = remap_lines(pair.lines_b, wb, hb, fwd(wb, hb, -half));
    let gt = relabel_after_exclusion(
        pair.gt,
        &keep_a,
        &keep_b,
        pair.lines_a.len(),
        pair.lines_b.len(),
    )?;
    Ok(TransformedPair {
        image_a: rot(pair.image_a, half),
        image_b: rot(pair.image_b, -half),
        lines_a,
        lines_b,
        gt,
    })
}

/// Blur both views with the same Gaussian sigma; geometry is unchanged.
pub fn blurred_pair(pair: &EvalPair, sigma: f64) -> Result<TransformedPair> {
    Ok(TransformedPair {
        image_a: gaussian_blur(pair.image_a, sigma)?,
        image_b: gaussian_blur(pair.image_b, sigma)?,
        lines_a: pair.lines_a.to_vec(),
        lines_b: pair.lines_b.to_vec(),
        gt: pair.gt.clone(),
    })
}

/// Rescale both views isotropically; endpoints are multiplied by the factor
/// exactly and the ground truth indexing is unchanged.
pub fn scaled_pair(pair: &EvalPair, s: f64) -> Result<TransformedPair> {
    let scale_seg = |seg: &LineSegment| LineSegment {
        x0: seg.x0 * s,
        y0: seg.y0 * s,
        x1: seg.x1 * s,
        y1: seg.y1 * s,
    };
    Ok(TransformedPair {
        image_a: scale_image(pair.image_a, s)?,
        image_b: scale_image(pair.image_b, s)?,
        lines_a: pair.lines_a.iter().map(scale_seg).collect(),
        lines_b: pair.lines_b.iter().map(scale_seg).collect(),
        gt: pair.gt.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn impulse(h: usize, w: usize, y: usize, x: usize) -> Array2<f64> {
        let mut img = Array2::zeros((h, w));
        img[[y, x]] = 1.0;
        img
    }

    #[test]
    fn rotate_point_quarter_turn_exact() {
        let (x, y) = rotate_point(15.0, 10.0, 10.0, 10.0, std::f64::consts::FRAC_PI_2);
        assert!((x - 10.0).abs() < 1e-12 && (y - 15.0).abs() < 1e-12);
        let (x, y) = rotate_point(15.0, 10.0, 10.0, 10.0, -std::f64::consts::FRAC_PI_2);
        assert!((x - 10.0).abs() < 1e-12 && (y - 5.0).abs() < 1e-12);
    }

    #[test]
    fn rotate_image_moves_impulse_consistently_with_points() {
        // 21x21 canvas has integer center (10, 10); a quarter turn maps the
        // impulse at (x=15, y=10) onto the exact grid point (10, 15).
        let img = impulse(21, 21, 10, 15);
        let out = rotate_image(&img, 90.0);
        assert!((out[[15, 10]] - 1.0).abs() < 1e-9, "got {}", out[[15, 10]]);
        let total: f64 = out.sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rotate_zero_degrees_is_bit_exact() {
        let mut rng = StdRng::seed_from_u64(5);
        let img = Array2::from_shape_fn((9, 13), |_| rng.random_range(0.0..1.0));
        let out = rotate_image(&img, 0.0);
        assert_eq!(img, out);
    }

    #[test]
    fn blur_matches_direct_2d_convolution() {
        let mut rng = StdRng::seed_from_u64(11);
        let img = Array2::from_shape_fn((9, 7), |_| rng.random_range(0.0..1.0));
        let sigma = 0.8;
        let out = gaussian_blur(&img, sigma).unwrap();

        // Direct 2D convolution with the same clamped borders.
        let radius = (3.0 * sigma).ceil() as i64;
        let mut k = Vec::new();
        for i in -radius..=radius {
            k.push((-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp());
        }
        let norm: f64 = k.iter().sum();
        let (h, w) = img.dim();
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut acc = 0.0;
                for dy in -radius..=radius {
                    for dx in -radius..=radius {
                        let ys = (y + dy).clamp(0, h as i64 - 1) as usize;
                        let xs = (x + dx).clamp(0, w as i64 - 1) as usize;
                        let kw = k[(dy + radius) as usize] * k[(dx + radius) as usize]
                            / (norm * norm);
                        acc += kw * img[[ys, xs]];
                    }
                }
                let got = out[[y as usize, x as usize]];
                assert!((got - acc).abs() < 1e-12, "({y},{x}): {got} vs {acc}");
            }
        }
    }

    #[test]
    fn blur_preserves_constant_and_range() {
        let img = Array2::from_elem((6, 8), 0.37);
        let out = gaussian_blur(&img, 2.0).unwrap();
        for v in out.iter() {
            assert!((v - 0.37).abs() < 1e-12);
        }
        let mut rng = StdRng::seed_from_u64(3);
        let img = Array2::from_shape_fn((12, 12), |_| rng.random_range(0.2..0.9));
        let out = gaussian_blur(&img, 1.5).unwrap();
        for v in out.iter() {
            assert!(*v >= 0.2 - 1e-12 && *v <= 0.9 + 1e-12);
        }
        assert!(gaussian_blur(&img, -1.0).is_err());
    }

    #[test]
    fn scale_rounds_dims_and_multiplies_endpoints_exactly() {
        let img = Array2::from_elem((100, 64), 0.5);
        let pair_lines = vec![LineSegment { x0: 10.0, y0: 20.0, x1: 40.0, y1: 60.0 }];
        let gt = GroundTruth { pairs: vec![], unmatched_a: vec![0], unmatched_b: vec![0] };
        let pair = EvalPair {
            image_a: &img,
            image_b: &img,
            lines_a: &pair_lines,
            lines_b: &pair_lines,
            gt: &gt,
        };
        let out = scaled_pair(&pair, 0.5).unwrap();
        assert_eq!(out.image_a.dim(), (50, 32));
        let seg = &out.lines_a[0];
        assert_eq!((seg.x0, seg.y0, seg.x1, seg.y1), (5.0, 10.0, 20.0, 30.0));
        assert_eq!(&out.gt, pair.gt);
        // Constant image stays constant under resampling.
        for v in out.image_a.iter() {
            assert!((v - 0.5).abs() < 1e-12);
        }
        assert!(scaled_pair(&pair, 0.0).is_err());
    }

    #[test]
    fn clip_segment_cases() {
        // Fully inside: unchanged.
        let s = LineSegment { x0: 2.0, y0: 3.0, x1: 8.0, y1: 5.0 };
        let c = clip_segment(&s, 20, 20).unwrap();
        assert_eq!((c.x0, c.y0, c.x1, c.y1), (2.0, 3.0, 8.0, 5.0));
        // Crosses the right edge at x = 19: midpoint interpolation is exact.
        let s = LineSegment { x0: 15.0, y0: 10.0, x1: 23.0, y1: 14.0 };
        let c = clip_segment(&s, 20, 20).unwrap();
        assert!((c.x1 - 19.0).abs() < 1e-12 && (c.y1 - 12.0).abs() < 1e-12);
        assert_eq!((c.x0, c.y0), (15.0, 10.0));
        // Entirely outside: gone.
        let s = LineSegment { x0: 30.0, y0: 30.0, x1: 40.0, y1: 35.0 };
        assert!(clip_segment(&s, 20, 20).is_none());
        // Crossing a corner region without touching the rect: gone.
        let s = LineSegment { x0: -5.0, y0: 3.0, x1: 3.0, y1: -5.0 };
        assert!(clip_segment(&s, 20, 20).is_none());
    }

    #[test]
    fn rotated_pair_relabels_partition_and_drops_corner_lines() {
        let img = Array2::from_elem((64, 64), 0.2);
        // One central line that survives and one hugging a corner that gets
        // rotated out of the canvas.
        let lines_a = vec![
            LineSegment { x0: 22.0, y0: 30.0, x1: 42.0, y1: 34.0 },
            LineSegment { x0: 56.0, y0: 2.0, x1: 62.0, y1: 8.0 },
        ];
        let lines_b = lines_a.clone();
        let gt = GroundTruth {
            pairs: vec![(0, 0), (1, 1)],
            unmatched_a: vec![],
            unmatched_b: vec![],
        };
        let pair = EvalPair {
            image_a: &img,
            image_b: &img,
            lines_a: &lines_a,
            lines_b: &lines_b,
            gt: &gt,
        };
        let out = rotated_pair(&pair, 90.0).unwrap();
        // The corner line leaves the canvas in at least one view.
        assert!(out.lines_a.len() < 2 || out.lines_b.len() < 2);
        assert!(out.gt.is_partition(out.lines_a.len(), out.lines_b.len()));
        // The central line survives in both views and stays paired.
        assert_eq!(out.gt.pairs.len(), 1);
        // Endpoint remap is the exact forward rotation (A view: +45 deg).
        let cx = 31.5;
        let (ex, ey) = rotate_point(22.0, 30.0, cx, cx, 45f64.to_radians());
        let seg = &out.lines_a[0];
        let d0 = (seg.x0 - ex).hypot(seg.y0 - ey);
        let d1 = (seg.x1 - ex).hypot(seg.y1 - ey);
        assert!(d0.min(d1) < 1e-9, "remap should be the exact rotation");
    }

    #[test]
    fn blurred_pair_keeps_geometry_identical() {
        let mut rng = StdRng::seed_from_u64(9);
        let img = Array2::from_shape_fn((32, 32), |_| rng.random_range(0.0..1.0));
        let lines = vec![LineSegment { x0: 4.0, y0: 4.0, x1: 20.0, y1: 18.0 }];
        let gt = GroundTruth { pairs: vec![(0, 0)], unmatched_a: vec![], unmatched_b: vec![] };
        let pair = EvalPair {
            image_a: &img,
            image_b: &img,
            lines_a: &lines,
            lines_b: &lines,
            gt: &gt,
        };
        let out = blurred_pair(&pair, 1.2).unwrap();
        assert_eq!(out.lines_a, lines);
        assert_eq!(out.lines_b, lines);
        assert_eq!(&out.gt, &gt);
        assert!((out.image_a[[10, 10]] - img[[10, 10]]).abs() > 1e-6);
    }
}
