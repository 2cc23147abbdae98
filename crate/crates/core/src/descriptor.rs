//! Line descriptors by Gaussian-weighted pooling of an oriented support
//! region, plus similarity-based exclusion and the learned unmatched sink.
//!
//! For each segment an `m x n` grid is laid over the feature map (`m`
//! samples along the line, `n` across it). Columns are averaged with
//! Gaussian weights across the width, the `m` positions are split into
//! groups that are max-pooled per channel, and group results are averaged.
//! The final descriptor concatenates the shallow and deep pools, each
//! l2-normalized, and normalizes once more overall.

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::backbone::FeatureTaps;
use crate::config::DescriptorConfig;
use crate::error::{Error, Result};
use crate::types::{GroundTruth, LineSegment};

/// Normalized Gaussian column weights, centered on the line.
pub fn gaussian_weights(n: usize, sigma: f64) -> Array1<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let mut w = Array1::from_iter(
        (0..n).map(|j| (-((j as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()),
    );
    let sum = w.sum();
    w /= sum;
    w
}

/// Number of samples along a segment on a map with the given stride.
pub fn sample_count(seg: &LineSegment, stride: usize) -> usize {
    ((seg.length() / stride as f64).round() as usize).max(1)
}

/// Split `m` positions into at most `w` contiguous groups; the remainder
/// goes to the leading groups. Fewer than `w` positions yield singleton
/// groups.
pub fn group_bounds(m: usize, w: usize) -> Vec<(usize, usize)> {
    let w_eff = w.min(m);
    let base = m / w_eff;
    let rem = m % w_eff;
    let mut bounds = Vec::with_capacity(w_eff);
    let mut start = 0;
    for g in 0..w_eff {
        let size = base + usize::from(g < rem);
        bounds.push((start, start + size));
        start += size;
    }
    bounds
}

/// Sample grid in feature-map coordinates, row-major `(along, across)`.
fn support_grid(seg: &LineSegment, stride: usize, m: usize, n: usize) -> Vec<(f64, f64)> {
    let s = stride as f64;
    let (p0x, p0y) = (seg.x0 / s, seg.y0 / s);
    let (p1x, p1y) = (seg.x1 / s, seg.y1 / s);
    let (nx, ny) = seg.normal();
    let c = (n as f64 - 1.0) / 2.0;
    let mut pts = Vec::with_capacity(m * n);
    for i in 0..m {
        let t = if m == 1 {
            0.5
        } else {
            i as f64 / (m as f64 - 1.0)
        };
        let cx = p0x + t * (p1x - p0x);
        let cy = p0y + t * (p1y - p0y);
        for j in 0..n {
            let off = j as f64 - c;
            pts.push((cx + off * nx, cy + off * ny));
        }
    }
    pts
}

/// Pool one segment's support region on one feature map into a length-`c`
/// descriptor (unnormalized). Differentiable in the map.
pub fn glpool(
    tape: &Tape,
    map: Var,
    stride: usize,
    seg: &LineSegment,
    cells: usize,
    groups: usize,
    sigma: f64,
) -> Var {
    let m = sample_count(seg, stride);
    let pts = support_grid(seg, stride, m, cells);
    let samples = tape.bilinear_sample(map, &pts); // (c, m*n)
    let c = tape.value(samples).shape()[0];
    let grid = tape.reshape(samples, &[c, m, cells]);
    let weights = gaussian_weights(cells, sigma);
    let along = tape.contract_last3(grid, &weights); // (c, m)
    let pooled = tape.group_max(along, &group_bounds(m, groups)); // (c, g)
    tape.mean_axis1(pooled) // (c)
}

/// Per-layer and joint descriptor matrices for one image's line set, all
/// row-normalized, dustbin not yet appended.
pub struct LineDescriptors {
    /// `(k, c_shallow)` unit rows.
    pub shallow: Var,
    /// `(k, c_deep)` unit rows.
    pub deep: Var,
    /// `(k, c_shallow + c_deep)` unit rows.
    pub joint: Var,
}

pub fn describe_lines(
    tape: &Tape,
    taps: &FeatureTaps,
    lines: &[LineSegment],
    cfg: &DescriptorConfig,
) -> Result<LineDescriptors> {
    cfg.validate()?;
    let sigma = cfg.sigma_value();
    let c3 = tape.value(taps.shallow).shape()[0];
    let c5 = tape.value(taps.deep).shape()[0];
    if lines.is_empty() {
        let empty = |c: usize| tape.constant(ArrayD::zeros(IxDyn(&[0, c])));
        return Ok(LineDescriptors {
            shallow: empty(c3),
            deep: empty(c5),
            joint: empty(c3 + c5),
        });
    }
    let mut shallow_rows = Vec::with_capacity(lines.len());
    let mut deep_rows = Vec::with_capacity(lines.len());
    for seg in lines {
        shallow_rows.push(glpool(
            tape,
            taps.shallow,
            taps.shallow_stride,
            seg,
            cfg.cells,
            cfg.groups,
            sigma,
        ));
        deep_rows.push(glpool(
            tape,
            taps.deep,
            taps.deep_stride,
            seg,
            cfg.cells,
            cfg.groups,
            sigma,
        ));
    }
    let shallow = tape.l2_normalize_rows(tape.stack_rows(&shallow_rows), 1e-12);
    let deep = tape.l2_normalize_rows(tape.stack_rows(&deep_rows), 1e-12);
    let joint = tape.l2_normalize_rows(tape.concat_cols(shallow, deep), 1e-12);
    Ok(LineDescriptors {
        shallow,
        deep,
        joint,
    })
}

/// Learned descriptor for the unmatched sink, shared by both images.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DustbinParam {
    pub u: ArrayD<f64>,
}

impl DustbinParam {
    /// Random unit vector of the joint descriptor width.
    pub fn init(dim: usize, rng: &mut impl Rng) -> Self {
        let mut u: Array1<f64> = Array1::from_shape_simple_fn(dim, || rng.random_range(-1.0..1.0));
        let norm = u.dot(&u).sqrt().max(1e-12);
        u /= norm;
        DustbinParam { u: u.into_dyn() }
    }
}

/// Append the dustbin as the last row of a `(k, d)` descriptor matrix.
pub fn append_dustbin(tape: &Tape, descriptors: Var, dustbin: Var) -> Var {
    let d = tape.value(dustbin).shape()[0];
    let row = tape.reshape(dustbin, &[1, d]);
    tape.concat_rows(descriptors, row)
}

/// Keep a line when its best similarity against the other image's set
/// reaches `threshold`. Inputs are row-normalized joint descriptors.
pub fn exclusion_keep(
    desc_a: &Array2<f64>,
    desc_b: &Array2<f64>,
    threshold: f64,
) -> (Vec<usize>, Vec<usize>) {
    if desc_a.nrows() == 0 || desc_b.nrows() == 0 {
        return (Vec::new(), Vec::new());
    }
    let sim = desc_a.dot(&desc_b.t());
    let keep_a = (0..sim.nrows())
        .filter(|&i| sim.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max) >= threshold)
        .collect();
    let keep_b = (0..sim.ncols())
        .filter(|&j| {
            sim.column(j)
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
                >= threshold
        })
        .collect();
    (keep_a, keep_b)
}

/// Re-index ground truth into the kept-line space. Pairs whose partner
/// was excluded degrade to unmatched; excluded lines vanish entirely.
pub fn relabel_after_exclusion(
    gt: &GroundTruth,
    keep_a: &[usize],
    keep_b: &[usize],
    n_a: usize,
    n_b: usize,
) -> Result<GroundTruth> {
    let pos = |keeps: &[usize], n: usize| -> Result<Vec<Option<usize>>> {
        let mut map = vec![None; n];
        for (new, &old) in keeps.iter().enumerate() {
            if old >= n {
                return Err(Error::invalid(format!("keep index {old} out of range")));
            }
            map[old] = Some(new);
        }
        Ok(map)
    };
    let pos_a = pos(keep_a, n_a)?;
    let pos_b = pos(keep_b, n_b)?;
    let mut out = GroundTruth::default();
    for &(i, j) in &gt.pairs {
        match (pos_a.get(i).copied().flatten(), pos_b.get(j).copied().flatten()) {
            (Some(a), Some(b)) => out.pairs.push((a, b)),
            (Some(a), None) => out.unmatched_a.push(a),
            (None, Some(b)) => out.unmatched_b.push(b),
            (None, None) => {}
        }
    }
    for &i in &gt.unmatched_a {
        if let Some(a) = pos_a.get(i).copied().flatten() {
            out.unmatched_a.push(a);
        }
    }
    for &j in &gt.unmatched_b {
        if let Some(b) = pos_b.get(j).copied().flatten() {
            out.unmatched_b.push(b);
        }
    }
    Ok(out)
}
