//! SVG figures. The CSV written next to each plot holds the same numbers.

use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;

use crate::analysis::MatchingReport;
use crate::compression::CompressionResult;
use crate::error::{Error, Result};
use crate::io;

const SIZE: (u32, u32) = (720, 480);

fn plot_error(e: impl std::fmt::Display) -> Error {
    Error::Output(format!("plot: {e}"))
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Matching rate against `T`, one line per pair and kind, with the chance
/// rate as a dashed horizontal line.
pub fn matching_vs_t(path: &Path, reports: &[MatchingReport], chance: f64) -> Result<()> {
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in reports {
        series
            .entry(format!("{} ({})", r.pair, r.kind))
            .or_default()
            .push((r.t_a as f64, r.rate));
    }
    let t_min = reports.iter().map(|r| r.t_a as f64).fold(f64::INFINITY, f64::min);
    let t_max = reports.iter().map(|r| r.t_a as f64).fold(f64::NEG_INFINITY, f64::max);
    let (x0, x1) = padded(t_min.min(t_max), t_max.max(t_min));
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_error)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Matching rate of easy/hard sets", ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(x0..x1, 0f64..1f64)
            .map_err(plot_error)?;
        chart
            .configure_mesh()
            .x_desc("T (updates)")
            .y_desc("matching rate")
            .draw()
            .map_err(plot_error)?;
        for (i, (label, mut points)) in series.into_iter().enumerate() {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(points.clone(), color.stroke_width(2)))
                .map_err(plot_error)?
                .label(label)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
            chart
                .draw_series(points.into_iter().map(|p| Circle::new(p, 3, color.filled())))
                .map_err(plot_error)?;
        }
        let dashes: Vec<_> = (0..40)
            .map(|k| {
                let a = x0 + (x1 - x0) * k as f64 / 40.0;
                let b = a + (x1 - x0) / 80.0;
                PathElement::new(vec![(a, chance), (b, chance)], BLACK)
            })
            .collect();
        chart
            .draw_series(dashes)
            .map_err(plot_error)?
            .label(format!("random ({chance})"))
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], BLACK));
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .draw()
            .map_err(plot_error)?;
        root.present().map_err(plot_error)?;
    }
    io::write_atomic(path, svg.as_bytes())
}

/// Test accuracy against ablation ratio: per-seed points and a mean line for
/// every strategy.
pub fn accuracy_vs_ratio(path: &Path, results: &[CompressionResult]) -> Result<()> {
    let mut by_strategy: BTreeMap<&str, Vec<&CompressionResult>> = BTreeMap::new();
    for r in results {
        by_strategy.entry(&r.plan.strategy).or_default().push(r);
    }
    let accs: Vec<f64> = results.iter().flat_map(|r| r.test_accuracy.iter().copied()).collect();
    let (y0, y1) = padded(
        accs.iter().copied().fold(f64::INFINITY, f64::min),
        accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    let r_max = results.iter().map(|r| r.plan.target_ratio).fold(0.0, f64::max);
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_error)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Test accuracy after ablation", ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(56)
            .build_cartesian_2d(-0.02..r_max + 0.05, y0.max(0.0)..y1.min(1.0))
            .map_err(plot_error)?;
        chart
            .configure_mesh()
            .x_desc("ablation ratio")
            .y_desc("test accuracy")
            .draw()
            .map_err(plot_error)?;
        for (i, (name, rows)) in by_strategy.into_iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            let mut means: Vec<(f64, f64)> = rows
                .iter()
                .map(|r| (r.plan.target_ratio, r.mean_accuracy()))
                .collect();
            means.sort_by(|a, b| a.0.total_cmp(&b.0));
            chart
                .draw_series(LineSeries::new(means, color.stroke_width(2)))
                .map_err(plot_error)?
                .label(name.to_owned())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
            let points = rows.iter().flat_map(|r| {
                r.test_accuracy
                    .iter()
                    .map(move |&a| Circle::new((r.plan.target_ratio, a), 3, color.filled()))
            });
            chart.draw_series(points).map_err(plot_error)?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .draw()
            .map_err(plot_error)?;
        root.present().map_err(plot_error)?;
    }
    io::write_atomic(path, svg.as_bytes())
}
