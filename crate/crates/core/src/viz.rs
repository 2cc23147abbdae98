//! Match visualization: side-by-side overlay of an image pair with
//! color-coded line strokes.
//!
//! Color semantics: without ground truth, matched lines are blue and
//! unmatched lines yellow; with ground truth, correct matches turn green
//! and incorrect ones red (unmatched stay yellow).

use std::collections::HashSet;
use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::datagen::scene::distance_to_segment;
use crate::error::Result;
use crate::types::{GroundTruth, LineSegment, MatchSet};

pub const MATCHED_COLOR: [u8; 3] = [66, 120, 216];
pub const UNMATCHED_COLOR: [u8; 3] = [232, 202, 44];
pub const CORRECT_COLOR: [u8; 3] = [46, 168, 66];
pub const INCORRECT_COLOR: [u8; 3] = [214, 58, 48];

/// Width of the separator column between the two panels.
const PANEL_GAP: u32 = 4;
/// Stroke thickness in pixels.
const STROKE: f64 = 2.0;

/// Alpha-blend a coverage fraction of `color` over one pixel.
fn blend(img: &mut RgbImage, x: i64, y: i64, color: [u8; 3], coverage: f64) {
    if x < 0 || y < 0 || x >= img.width() as i64 || y >= img.height() as i64 {
        return;
    }
    let p = img.get_pixel_mut(x as u32, y as u32);
    for c in 0..3 {
        let old = p.0[c] as f64;
        p.0[c] = (old + coverage * (color[c] as f64 - old)).round().clamp(0.0, 255.0) as u8;
    }
}

/// Draw an anti-aliased stroke of the given thickness; pixel coverage falls
/// off linearly at the stroke border.
pub fn draw_line_rgb(img: &mut RgbImage, seg: &LineSegment, color: [u8; 3], thickness: f64) {
    let pad = thickness / 2.0 + 1.5;
    let x_lo = (seg.x0.min(seg.x1) - pad).floor().max(0.0) as i64;
    let x_hi = (seg.x0.max(seg.x1) + pad).ceil().min(img.width() as f64 - 1.0) as i64;
    let y_lo = (seg.y0.min(seg.y1) - pad).floor().max(0.0) as i64;
    let y_hi = (seg.y0.max(seg.y1) + pad).ceil().min(img.height() as f64 - 1.0) as i64;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let d = distance_to_segment(x as f64, y as f64, seg);
            let coverage = (0.5 + thickness / 2.0 - d).clamp(0.0, 1.0);
            if coverage > 0.0 {
                blend(img, x, y, color, coverage);
            }
        }
    }
}

fn paste_gray(img: &mut RgbImage, gray: &Array2<f64>, x_off: u32) {
    let (h, w) = gray.dim();
    for y in 0..h {
        for x in 0..w {
            let v = (gray[[y, x]].clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(x as u32 + x_off, y as u32, Rgb([v, v, v]));
        }
    }
}

/// Stroke color for a line given its predicted pair and optional ground
/// truth.
fn side_color(
    matched: Option<(usize, usize)>,
    gt_pairs: Option<&HashSet<(usize, usize)>>,
) -> [u8; 3] {
    match matched {
        None => UNMATCHED_COLOR,
        Some(pair) => match gt_pairs {
            None => MATCHED_COLOR,
            Some(set) => {
                if set.contains(&pair) {
                    CORRECT_COLOR
                } else {
                    INCORRECT_COLOR
                }
            }
        },
    }
}

/// Render the side-by-side overlay. Both panels show their own lines;
/// matched lines share one color decided by correctness when ground truth
/// is given.
pub fn render_overlay(
    image_a: &Array2<f64>,
    image_b: &Array2<f64>,
    lines_a: &[LineSegment],
    lines_b: &[LineSegment],
    matches: &MatchSet,
    gt: Option<&GroundTruth>,
) -> RgbImage {
    let (ha, wa) = image_a.dim();
    let (hb, wb) = image_b.dim();
    let width = wa as u32 + PANEL_GAP + wb as u32;
    let height = ha.max(hb) as u32;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    paste_gray(&mut img, image_a, 0);
    paste_gray(&mut img, image_b, wa as u32 + PANEL_GAP);

    let gt_pairs: Option<HashSet<(usize, usize)>> =
        gt.map(|g| g.pairs.iter().copied().collect());
    let mut match_of_a = vec![None; lines_a.len()];
    let mut match_of_b = vec![None; lines_b.len()];
    for &(i, j, _) in &matches.matches {
        if i < lines_a.len() && j < lines_b.len() {
            match_of_a[i] = Some((i, j));
            match_of_b[j] = Some((i, j));
        }
    }
    for (i, seg) in lines_a.iter().enumerate() {
        let color = side_color(match_of_a[i], gt_pairs.as_ref());
        draw_line_rgb(&mut img, seg, color, STROKE);
    }
    let x_off = (wa as u32 + PANEL_GAP) as f64;
    for (j, seg) in lines_b.iter().enumerate() {
        let color = side_color(match_of_b[j], gt_pairs.as_ref());
        let shifted = LineSegment {
            x0: seg.x0 + x_off,
            y0: seg.y0,
            x1: seg.x1 + x_off,
            y1: seg.y1,
        };
        draw_line_rgb(&mut img, &shifted, color, STROKE);
    }
    img
}

/// Render and save the overlay as PNG.
#[allow(clippy::too_many_arguments)]
pub fn save_overlay(
    path: &Path,
    image_a: &Array2<f64>,
    image_b: &Array2<f64>,
    lines_a: &[LineSegment],
    lines_b: &[LineSegment],
    matches: &MatchSet,
    gt: Option<&GroundTruth>,
) -> Result<()> {
    let img = render_overlay(image_a, image_b, lines_a, lines_b, matches, gt);
    img.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Array2<f64>, Vec<LineSegment>, GroundTruth) {
        let img = Array2::from_elem((40, 40), 0.5);
        let lines = vec![
            LineSegment { x0: 5.0, y0: 10.0, x1: 30.0, y1: 12.0 },
            LineSegment { x0: 8.0, y0: 25.0, x1: 28.0, y1: 30.0 },
        ];
        let gt = GroundTruth { pairs: vec![(0, 0)], unmatched_a: vec![1], unmatched_b: vec![1] };
        (img, lines, gt)
    }

    fn colors_present(img: &RgbImage) -> HashSet<[u8; 3]> {
        let targets = [MATCHED_COLOR, UNMATCHED_COLOR, CORRECT_COLOR, INCORRECT_COLOR];
        img.pixels()
            .filter_map(|p| targets.iter().find(|&&t| t == p.0).copied())
            .collect()
    }

    #[test]
    fn all_correct_prediction_with_gt_uses_green_and_yellow_only() {
        let (img, lines, gt) = setup();
        let matches = MatchSet {
            matches: vec![(0, 0, 0.9)],
            unmatched_a: vec![1],
            unmatched_b: vec![1],
        };
        let overlay = render_overlay(&img, &img, &lines, &lines, &matches, Some(&gt));
        let present = colors_present(&overlay);
        assert!(present.contains(&CORRECT_COLOR));
        assert!(present.contains(&UNMATCHED_COLOR));
        assert!(!present.contains(&INCORRECT_COLOR));
        assert!(!present.contains(&MATCHED_COLOR));
    }

    #[test]
    fn without_gt_only_blue_and_yellow_appear() {
        let (img, lines, _) = setup();
        let matches = MatchSet {
            matches: vec![(0, 0, 0.9)],
            unmatched_a: vec![1],
            unmatched_b: vec![1],
        };
        let overlay = render_overlay(&img, &img, &lines, &lines, &matches, None);
        let present = colors_present(&overlay);
        assert!(present.contains(&MATCHED_COLOR));
        assert!(present.contains(&UNMATCHED_COLOR));
        assert!(!present.contains(&CORRECT_COLOR));
        assert!(!present.contains(&INCORRECT_COLOR));
    }

    #[test]
    fn wrong_match_with_gt_shows_red() {
        let (img, lines, gt) = setup();
        let matches = MatchSet {
            matches: vec![(0, 1, 0.8)],
            unmatched_a: vec![1],
            unmatched_b: vec![0],
        };
        let overlay = render_overlay(&img, &img, &lines, &lines, &matches, Some(&gt));
        assert!(colors_present(&overlay).contains(&INCORRECT_COLOR));
    }

    #[test]
    fn overlay_dimensions_cover_both_panels() {
        let a = Array2::from_elem((30, 40), 0.2);
        let b = Array2::from_elem((50, 20), 0.8);
        let matches = MatchSet { matches: vec![], unmatched_a: vec![], unmatched_b: vec![] };
        let overlay = render_overlay(&a, &b, &[], &[], &matches, None);
        assert_eq!(overlay.width(), 40 + 4 + 20);
        assert_eq!(overlay.height(), 50);
    }
}
