//! Standalone SVG renderings of spectra and convergence traces.

use std::path::Path;

use anyhow::{anyhow, Context};
use plotters::prelude::*;

const SIZE: (u32, u32) = (720, 440);
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(23, 190, 207),
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Padded bounds of the data, `[0, 1]` on an axis without finite data.
fn bounds(values: impl Iterator<Item = f64>, floor_zero: bool) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if floor_zero {
        lo = lo.min(0.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * hi.abs().max(1.0) };
    (lo - pad, hi + pad)
}

fn draw_err<E: std::error::Error + Send + Sync + 'static>(e: DrawingAreaErrorKind<E>) -> anyhow::Error {
    anyhow!("svg rendering failed: {e}")
}

/// One vertical stem per `(x, height)`.
pub fn stem_plot(path: &Path, title: &str, x_desc: &str, stems: &[(f64, f64)]) -> anyhow::Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let (x0, x1) = bounds(stems.iter().map(|s| s.0), false);
    let (_, y1) = bounds(stems.iter().map(|s| s.1), true);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, 0.0..y1)
        .map_err(draw_err)?;
    chart.configure_mesh().x_desc(x_desc).y_desc("|amplitude|").draw().map_err(draw_err)?;
    chart
        .draw_series(stems.iter().map(|&(x, y)| PathElement::new(vec![(x, 0.0), (x, y)], PALETTE[0].stroke_width(2))))
        .map_err(draw_err)?;
    chart.draw_series(stems.iter().map(|&(x, y)| Circle::new((x, y), 3, PALETTE[0].filled()))).map_err(draw_err)?;
    root.present().map_err(draw_err).with_context(|| format!("writing {}", path.display()))
}

/// Polylines with markers, one color per series.
pub fn line_plot(path: &Path, title: &str, x_desc: &str, y_desc: &str, series: &[Series]) -> anyhow::Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = bounds(all().map(|p| p.0), false);
    let (y0, y1) = bounds(all().map(|p| p.1), false);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(64)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(draw_err)?;
    chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw().map_err(draw_err)?;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
            .map_err(draw_err)?
            .label(s.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        chart.draw_series(s.points.iter().map(|&p| Circle::new(p, 3, color.filled()))).map_err(draw_err)?;
    }
    if series.iter().any(|s| !s.label.is_empty()) {
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(draw_err)?;
    }
    root.present().map_err(draw_err).with_context(|| format!("writing {}", path.display()))
}
