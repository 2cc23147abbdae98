//! Minimal PNG line charts for sweep results.
//!
//! Charts are 640x480 with a white background, light gridlines, and one
//! anti-aliased polyline per series. Precision is drawn red, recall blue,
//! F-measure green; data points get small filled markers. Text rendering is
//! intentionally out of scope; the CSV next to the chart carries the numbers.

use std::path::Path;

use image::{Rgb, RgbImage};

use super::SweepResult;
use crate::error::{Error, Result};
use crate::types::LineSegment;
use crate::viz::draw_line_rgb;

pub const CHART_WIDTH: u32 = 640;
pub const CHART_HEIGHT: u32 = 480;

pub const PRECISION_COLOR: [u8; 3] = [214, 69, 65];
pub const RECALL_COLOR: [u8; 3] = [31, 119, 180];
pub const F_MEASURE_COLOR: [u8; 3] = [44, 160, 44];

const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 50.0;

/// One polyline: (x, y) data points in axis units plus an RGB color.
/// Gaps (missing sweep points) are represented by separate Series entries.
#[derive(Debug, Clone)]
pub struct Series {
    pub points: Vec<(f64, f64)>,
    pub color: [u8; 3],
}

/// Filled square marker centered on a pixel position.
fn draw_marker(img: &mut RgbImage, x: f64, y: f64, color: [u8; 3]) {
    for dy in -2i64..=2 {
        for dx in -2i64..=2 {
            let (px, py) = (x.round() as i64 + dx, y.round() as i64 + dy);
            if px >= 0 && py >= 0 && px < img.width() as i64 && py < img.height() as i64 {
                img.put_pixel(px as u32, py as u32, Rgb(color));
            }
        }
    }
}

/// Render a line chart to PNG. Axis ranges are in data units; series points
/// outside the ranges are clamped to the plot border.
pub fn line_chart(
    path: &Path,
    x_range: (f64, f64),
    y_range: (f64, f64),
    series: &[Series],
) -> Result<()> {
    if !(x_range.1 > x_range.0) || !(y_range.1 > y_range.0) {
        return Err(Error::invalid("chart ranges must be non-empty and increasing"));
    }
    let mut img = RgbImage::from_pixel(CHART_WIDTH, CHART_HEIGHT, Rgb([255, 255, 255]));
    let plot_w = CHART_WIDTH as f64 - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = CHART_HEIGHT as f64 - MARGIN_TOP - MARGIN_BOTTOM;
    let to_px = |x: f64, y: f64| {
        let fx = ((x - x_range.0) / (x_range.1 - x_range.0)).clamp(0.0, 1.0);
        let fy = ((y - y_range.0) / (y_range.1 - y_range.0)).clamp(0.0, 1.0);
        (MARGIN_LEFT + fx * plot_w, MARGIN_TOP + (1.0 - fy) * plot_h)
    };

    // Gridlines at quarter intervals, then the two axis lines.
    let grid = [230, 230, 230];
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let gx = MARGIN_LEFT + f * plot_w;
        let gy = MARGIN_TOP + f * plot_h;
        draw_line_rgb(
            &mut img,
            &LineSegment { x0: gx, y0: MARGIN_TOP, x1: gx, y1: MARGIN_TOP + plot_h },
            grid,
            1.0,
        );
        draw_line_rgb(
            &mut img,
            &LineSegment { x0: MARGIN_LEFT, y0: gy, x1: MARGIN_LEFT + plot_w, y1: gy },
            grid,
            1.0,
        );
    }
    let axis = [20, 20, 20];
    draw_line_rgb(
        &mut img,
        &LineSegment {
            x0: MARGIN_LEFT,
            y0: MARGIN_TOP,
            x1: MARGIN_LEFT,
            y1: MARGIN_TOP + plot_h,
        },
        axis,
        1.4,
    );
    draw_line_rgb(
        &mut img,
        &LineSegment {
            x0: MARGIN_LEFT,
            y0: MARGIN_TOP + plot_h,
            x1: MARGIN_LEFT + plot_w,
            y1: MARGIN_TOP + plot_h,
        },
        axis,
        1.4,
    );

    for s in series {
        for w in s.points.windows(2) {
            let (x0, y0) = to_px(w[0].0, w[0].1);
            let (x1, y1) = to_px(w[1].0, w[1].1);
            draw_line_rgb(&mut img, &LineSegment { x0, y0, x1, y1 }, s.color, 2.0);
        }
        for &(x, y) in &s.points {
            let (px, py) = to_px(x, y);
            draw_marker(&mut img, px, py, s.color);
        }
    }

    img.save(path)?;
    Ok(())
}

/// Split sweep metric values into contiguous runs, breaking at undefined
/// points so the polyline shows a gap there.
fn metric_runs(sweep: &SweepResult, pick: impl Fn(&super::MatchMetrics) -> f64) -> Vec<Vec<(f64, f64)>> {
    let mut runs = vec![Vec::new()];
    for p in &sweep.points {
        match &p.metrics {
            Some(m) => runs.last_mut().unwrap().push((p.value, pick(m))),
            None => {
                if !runs.last().unwrap().is_empty() {
                    runs.push(Vec::new());
                }
            }
        }
    }
    runs.retain(|r| !r.is_empty());
    runs
}

/// Chart a sweep's precision, recall, and F-measure curves on a 0..100 axis.
pub fn sweep_chart(path: &Path, sweep: &SweepResult) -> Result<()> {
    if sweep.points.is_empty() {
        return Err(Error::invalid("cannot chart an empty sweep"));
    }
    let x_min = sweep.points.first().unwrap().value;
    let x_max = sweep.points.last().unwrap().value;
    let x_range = if x_max > x_min { (x_min, x_max) } else { (x_min - 0.5, x_min + 0.5) };
    let mut series = Vec::new();
    for (color, pick) in [
        (PRECISION_COLOR, Box::new(|m: &super::MatchMetrics| m.precision) as Box<dyn Fn(&super::MatchMetrics) -> f64>),
        (RECALL_COLOR, Box::new(|m: &super::MatchMetrics| m.recall)),
        (F_MEASURE_COLOR, Box::new(|m: &super::MatchMetrics| m.f_measure)),
    ] {
        for run in metric_runs(sweep, &pick) {
            series.push(Series { points: run, color });
        }
    }
    line_chart(path, x_range, (0.0, 100.0), &series)
}
