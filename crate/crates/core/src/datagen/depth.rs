//! Ground-truth labeling from depth: back-project each first-view line
//! through its depth samples, reproject into the second view, and match by
//! direction agreement and mutual extent overlap.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::{GroundTruth, LineSegment};

/// Pinhole camera with a world-to-camera pose and a per-pixel depth map.
/// Depth entries `<= 0` mean "no measurement".
#[derive(Debug, Clone)]
pub struct CameraModel {
    pub intrinsics: [[f64; 3]; 3],
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub depth: Array2<f64>,
}

fn matvec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn transpose3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut t = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            t[r][c] = m[c][r];
        }
    }
    t
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if k[1][0] != 0.0 || k[2][0] != 0.0 || k[2][1] != 0.0 || (k[2][2] - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("intrinsics must be upper-triangular with unit scale"));
        }
        if k[0][0] <= 0.0 || k[1][1] <= 0.0 {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|t| r[i][t] * r[j][t]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-6 {
                    return Err(Error::invalid("rotation must be orthonormal"));
                }
            }
        }
        Ok(())
    }

    fn inv_k(&self) -> [[f64; 3]; 3] {
        let k = &self.intrinsics;
        let (fx, s, cx) = (k[0][0], k[0][1], k[0][2]);
        let (fy, cy) = (k[1][1], k[1][2]);
        [
            [1.0 / fx, -s / (fx * fy), (s * cy - cx * fy) / (fx * fy)],
            [0.0, 1.0 / fy, -cy / fy],
            [0.0, 0.0, 1.0],
        ]
    }

    /// Depth at the nearest pixel, if measured.
    fn depth_at(&self, u: f64, v: f64) -> Option<f64> {
        let (h, w) = self.depth.dim();
        let x = u.round();
        let y = v.round();
        if x < 0.0 || y < 0.0 || x as usize >= w || y as usize >= h {
            return None;
        }
        let d = self.depth[[y as usize, x as usize]];
        (d > 0.0).then_some(d)
    }

    /// Pixel to world point through the depth map.
    pub fn back_project(&self, u: f64, v: f64) -> Option<[f64; 3]> {
        let d = self.depth_at(u, v)?;
        let ray = matvec(&self.inv_k(), [u, v, 1.0]);
        let cam = [ray[0] * d, ray[1] * d, ray[2] * d];
        let shifted = [
            cam[0] - self.translation[0],
            cam[1] - self.translation[1],
            cam[2] - self.translation[2],
        ];
        Some(matvec(&transpose3(&self.rotation), shifted))
    }

    /// World point to pixel; `None` behind the camera.
    pub fn project(&self, world: [f64; 3]) -> Option<(f64, f64)> {
        let rotated = matvec(&self.rotation, world);
        let cam = [
            rotated[0] + self.translation[0],
            rotated[1] + self.translation[1],
            rotated[2] + self.translation[2],
        ];
        if cam[2] <= 1e-9 {
            return None;
        }
        let pix = matvec(&self.intrinsics, [cam[0] / cam[2], cam[1] / cam[2], 1.0]);
        Some((pix[0], pix[1]))
    }
}

/// Diagnostics from one labeling run.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct DepthLabelStats {
    /// First-view lines with too few valid depth samples to reproject.
    pub lines_without_depth: usize,
}

/// Total-least-squares segment fit: principal direction through the
/// centroid, trimmed to the extent of the points.
fn fit_segment(points: &[(f64, f64)]) -> LineSegment {
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x, sy + y));
    let (mx, my) = (mx / n, my / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (dx, dy) = (theta.cos(), theta.sin());
    let mut t_min = f64::INFINITY;
    let mut t_max = f64::NEG_INFINITY;
    for &(x, y) in points {
        let t = (x - mx) * dx + (y - my) * dy;
        t_min = t_min.min(t);
        t_max = t_max.max(t);
    }
    LineSegment {
        x0: mx + t_min * dx,
        y0: my + t_min * dy,
        x1: mx + t_max * dx,
        y1: my + t_max * dy,
    }
}

/// Intersection length of the axis extents of `probe` and `reference`,
/// measured along `reference`'s direction, as a fraction of each.
fn mutual_overlap(reference: &LineSegment, probe: &LineSegment) -> f64 {
    let (dx, dy) = reference.direction();
    let project = |x: f64, y: f64| (x - reference.x0) * dx + (y - reference.y0) * dy;
    let ref_lo = 0.0f64;
    let ref_hi = reference.length();
    let (p0, p1) = (project(probe.x0, probe.y0), project(probe.x1, probe.y1));
    let (probe_lo, probe_hi) = (p0.min(p1), p0.max(p1));
    let inter = (ref_hi.min(probe_hi) - ref_lo.max(probe_lo)).max(0.0);
    let ref_len = ref_hi - ref_lo;
    let probe_len = probe_hi - probe_lo;
    if ref_len <= 0.0 || probe_len <= 0.0 {
        return 0.0;
    }
    (inter / ref_len).min(inter / probe_len)
}

const LINE_SAMPLES: usize = 16;

/// Largest perpendicular drift between a reprojected line and its
/// candidate partner. Extent overlap alone cannot separate parallel lines
/// at different offsets, so candidates further than this are rejected.
const MAX_PERP_DIST_PX: f64 = 3.0;

fn perpendicular_distance(reference: &LineSegment, probe: &LineSegment) -> f64 {
    let (dx, dy) = reference.direction();
    let offset = |x: f64, y: f64| ((x - reference.x0) * dy - (y - reference.y0) * dx).abs();
    offset(probe.x0, probe.y0).max(offset(probe.x1, probe.y1))
}

/// Label matches by reprojecting first-view lines through depth into the
/// second view. A pair matches when the direction difference stays under
/// `angle_thresh_deg` and the mutual extent overlap exceeds
/// `overlap_thresh`; conflicts resolve greedily by best overlap with
/// lower indices winning ties.
pub fn label_matches_from_depth(
    lines_a: &[LineSegment],
    lines_b: &[LineSegment],
    cam_a: &CameraModel,
    cam_b: &CameraModel,
    angle_thresh_deg: f64,
    overlap_thresh: f64,
) -> Result<(GroundTruth, DepthLabelStats)> {
    cam_a.validate()?;
    cam_b.validate()?;
    let mut stats = DepthLabelStats::default();
    let mut projected: Vec<Option<LineSegment>> = Vec::with_capacity(lines_a.len());
    for line in lines_a {
        let mut points = Vec::with_capacity(LINE_SAMPLES);
        for s in 0..LINE_SAMPLES {
            let t = s as f64 / (LINE_SAMPLES - 1) as f64;
            let u = line.x0 + t * (line.x1 - line.x0);
            let v = line.y0 + t * (line.y1 - line.y0);
            if let Some(world) = cam_a.back_project(u, v) {
                if let Some(pix) = cam_b.project(world) {
                    points.push(pix);
                }
            }
        }
        if points.len() < 2 {
            stats.lines_without_depth += 1;
            projected.push(None);
        } else {
            projected.push(Some(fit_segment(&points)));
        }
    }

    let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
    let angle_thresh = angle_thresh_deg.to_radians();
    for (i, proj) in projected.iter().enumerate() {
        let Some(proj) = proj else { continue };
        for (j, b) in lines_b.iter().enumerate() {
            if proj.angle_to(b) >= angle_thresh {
                continue;
            }
            if perpendicular_distance(proj, b) > MAX_PERP_DIST_PX {
                continue;
            }
            let overlap = mutual_overlap(proj, b);
            if overlap > overlap_thresh {
                candidates.push((i, j, overlap));
            }
        }
    }
    candidates.sort_by(|x, y| {
        y.2.partial_cmp(&x.2)
            .unwrap()
            .then(x.0.cmp(&y.0))
            .then(x.1.cmp(&y.1))
    });
    let mut used_a = vec![false; lines_a.len()];
    let mut used_b = vec![false; lines_b.len()];
    let mut pairs = Vec::new();
    for (i, j, _) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    let gt = GroundTruth {
        pairs,
        unmatched_a: (0..lines_a.len()).filter(|&i| !used_a[i]).collect(),
        unmatched_b: (0..lines_b.len()).filter(|&j| !used_b[j]).collect(),
    };
    Ok((gt, stats))
}
