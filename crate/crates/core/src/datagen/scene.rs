//! Rasterization of synthetic line scenes: a smooth parametric background
//! with anti-aliased line segments composited on top.

use ndarray::Array2;
use rand::Rng;

use super::homography::Homography;
use crate::types::LineSegment;

/// Grayscale canvas, intensities in `[0, 1]`, row-major `(h, w)`.
pub struct Canvas {
    pub pixels: Array2<f64>,
}

/// Parameters of a smooth background shading field, shared between the
/// two views of a pair so that a warp maps one onto the other.
#[derive(Debug, Clone, Copy)]
pub struct Background {
    pub base: f64,
    pub amplitude: f64,
    pub freq_x: f64,
    pub freq_y: f64,
    pub phase_x: f64,
    pub phase_y: f64,
}

impl Background {
    pub fn sample(rng: &mut impl Rng) -> Self {
        Background {
            base: rng.random_range(0.10..0.18),
            amplitude: rng.random_range(0.03..0.08),
            freq_x: rng.random_range(0.5..2.0),
            freq_y: rng.random_range(0.5..2.0),
            phase_x: rng.random_range(0.0..std::f64::consts::TAU),
            phase_y: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }

    pub fn at(&self, x: f64, y: f64, width: f64, height: f64) -> f64 {
        let sx = (std::f64::consts::TAU * self.freq_x * x / width + self.phase_x).sin();
        let sy = (std::f64::consts::TAU * self.freq_y * y / height + self.phase_y).sin();
        self.base + self.amplitude * sx * sy
    }
}

/// Squared-distance-free point-to-segment distance.
pub fn distance_to_segment(px: f64, py: f64, seg: &LineSegment) -> f64 {
    let (dx, dy) = (seg.x1 - seg.x0, seg.y1 - seg.y0);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - seg.x0) * dx + (py - seg.y0) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (seg.x0 + t * dx, seg.y0 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

impl Canvas {
    /// Flat canvas of the given intensity.
    pub fn new(width: usize, height: usize, intensity: f64) -> Self {
        Canvas {
            pixels: Array2::from_elem((height, width), intensity),
        }
    }

    /// Background evaluated at each pixel, optionally seen through the
    /// inverse of `warp` so the second view shades consistently.
    pub fn shaded(
        width: usize,
        height: usize,
        background: &Background,
        warp: Option<&Homography>,
    ) -> Self {
        let inv = warp.and_then(|h| h.inverse());
        let pixels = Array2::from_shape_fn((height, width), |(y, x)| {
            let (mut sx, mut sy) = (x as f64, y as f64);
            if let Some(inv) = &inv {
                let p = inv.apply(sx, sy);
                sx = p.0;
                sy = p.1;
            }
            background.at(sx, sy, width as f64, height as f64)
        });
        Canvas { pixels }
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    /// Alpha-composite an anti-aliased line: coverage falls off linearly
    /// over one pixel at the stroke edge.
    pub fn draw_segment(&mut self, seg: &LineSegment, intensity: f64, thickness: f64) {
        let pad = thickness / 2.0 + 1.5;
        let x_min = (seg.x0.min(seg.x1) - pad).floor().max(0.0) as usize;
        let x_max = (seg.x0.max(seg.x1) + pad).ceil().min((self.width() - 1) as f64) as usize;
        let y_min = (seg.y0.min(seg.y1) - pad).floor().max(0.0) as usize;
        let y_max = (seg.y0.max(seg.y1) + pad).ceil().min((self.height() - 1) as f64) as usize;
        for y in y_min..=y_max {
            for x in x_min..=x_max {
                let d = distance_to_segment(x as f64, y as f64, seg);
                let coverage = (0.5 + thickness / 2.0 - d).clamp(0.0, 1.0);
                if coverage > 0.0 {
                    let p = &mut self.pixels[[y, x]];
                    *p += coverage * (intensity - *p);
                }
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
    fn distance_handles_interior_and_endpoints() {
        let seg = LineSegment {
            x0: 0.0,
            y0: 0.0,
            x1: 10.0,
            y1: 0.0,
        };
        assert!((distance_to_segment(5.0, 3.0, &seg) - 3.0).abs() < 1e-12);
        assert!((distance_to_segment(-4.0, 3.0, &seg) - 5.0).abs() < 1e-12);
        assert!((distance_to_segment(13.0, 4.0, &seg) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn drawn_segment_brightens_only_nearby_pixels() {
        let mut canvas = Canvas::new(32, 32, 0.1);
        let seg = LineSegment {
            x0: 4.0,
            y0: 16.0,
            x1: 28.0,
            y1: 16.0,
        };
        canvas.draw_segment(&seg, 0.9, 1.5);
        assert!(canvas.pixels[[16, 16]] > 0.8);
        assert!((canvas.pixels[[3, 16]] - 0.1).abs() < 1e-12);
        assert!((canvas.pixels[[30, 2]] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn coverage_fades_at_stroke_edges() {
        let mut canvas = Canvas::new(16, 16, 0.0);
        // off-center row so neighboring rows see fractional coverage
        let seg = LineSegment {
            x0: 2.0,
            y0: 8.3,
            x1: 14.0,
            y1: 8.3,
        };
        canvas.draw_segment(&seg, 1.0, 1.0);
        let on = canvas.pixels[[8, 8]];
        let edge = canvas.pixels[[9, 8]];
        let off = canvas.pixels[[10, 8]];
        assert!(on > edge && edge > off);
    }

    #[test]
    fn warped_background_tracks_the_inverse_warp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bg = Background::sample(&mut rng);
        let h = Homography::similarity_about(16.0, 16.0, 0.3, 1.1, 2.0, -1.0, 0.0, 0.0);
        let plain = Canvas::shaded(32, 32, &bg, None);
        let warped = Canvas::shaded(32, 32, &bg, Some(&h));
        // pick a pixel in B and compare with the A-space sample it shows
        let (bx, by) = (20usize, 12usize);
        let inv = h.inverse().unwrap();
        let (ax, ay) = inv.apply(bx as f64, by as f64);
        let direct = bg.at(ax, ay, 32.0, 32.0);
        assert!((warped.pixels[[by, bx]] - direct).abs() < 1e-12);
        // and the identity case reduces to the plain shading
        let ident = Canvas::shaded(32, 32, &bg, Some(&Homography::identity()));
        for (a, b) in ident.pixels.iter().zip(plain.pixels.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
