//! Static SVG renderings of run and sweep outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use plotters::prelude::*;
use rtm_core::experiment::{AggregateRow, MetricRow, PER_RUN_METRICS, PER_TIME_METRICS};
use rtm_core::io::{self, FrontRow, METRICS_FILE, SUMMARIES_FILE, TRUTH_FILE, FRONTS_FILE};

const SIZE: (u32, u32) = (900, 540);
const PALETTE: [RGBColor; 7] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
];

fn colour(i: usize) -> RGBColor {
    PALETTE[i % PALETTE.len()]
}

fn draw_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow!("drawing failed: {e:?}")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

/// Renders every plot the files in `input` support; returns the written paths.
pub fn plot_dir(input: &Path, out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::new();
    if input.join(SUMMARIES_FILE).exists() {
        written.extend(plot_percentiles(input, out)?);
    }
    if input.join(METRICS_FILE).exists() {
        written.push(plot_errors(input, out)?);
    }
    for metric in PER_TIME_METRICS.iter().chain(&PER_RUN_METRICS) {
        let file = input.join(io::sweep_file(metric));
        if file.exists() {
            written.push(plot_sweep(&file, metric, out)?);
        }
    }
    if written.is_empty() {
        bail!("{} holds no run or sweep CSVs", input.display());
    }
    Ok(written)
}

fn plot_percentiles(input: &Path, out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let summaries = io::read_summaries(&input.join(SUMMARIES_FILE), 0)?;
    let truth = io::read_field(&input.join(TRUTH_FILE), "inversion").ok();
    let fronts: Vec<FrontRow> = io::read_csv(&input.join(FRONTS_FILE)).unwrap_or_default();
    let rows: Vec<io::SummaryRow> = io::read_csv(&input.join(SUMMARIES_FILE))?;
    let mut xs: BTreeMap<usize, f64> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.repeat == 0 && r.n == 0) {
        xs.insert(r.cell, r.x);
    }
    let xs: Vec<f64> = xs.into_values().collect();
    let (y0, y1) = range(
        summaries
            .iter()
            .flat_map(|s| s.percentiles.iter().flatten().copied())
            .chain(truth.iter().flatten().copied()),
    );
    let length = xs.last().copied().unwrap_or(1.0) + xs.first().copied().unwrap_or(0.0);
    let mut written = Vec::new();
    for (n, s) in summaries.iter().enumerate() {
        let path = out.join(format!("percentiles_n{n}.svg"));
        let target = path.clone();
        let root = SVGBackend::new(&target, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(draw_err)?;
        let title = if n == 0 { "prior".to_string() } else { format!("posterior after {n} observation times") };
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d(0.0..length, y0..y1)
            .map_err(draw_err)?;
        chart
            .configure_mesh()
            .x_desc("x")
            .y_desc("log-permeability")
            .draw()
            .map_err(draw_err)?;
        let band = |lo: &[f64], hi: &[f64]| -> Vec<(f64, f64)> {
            xs.iter()
                .zip(lo)
                .map(|(&x, &y)| (x, y))
                .chain(xs.iter().zip(hi).rev().map(|(&x, &y)| (x, y)))
                .collect()
        };
        let blue = colour(0);
        chart
            .draw_series(std::iter::once(Polygon::new(band(&s.percentiles[0], &s.percentiles[4]), blue.mix(0.15))))
            .map_err(draw_err)?
            .label("2-98%")
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 20, y + 5)], blue.mix(0.15).filled()));
        chart
            .draw_series(std::iter::once(Polygon::new(band(&s.percentiles[1], &s.percentiles[3]), blue.mix(0.35))))
            .map_err(draw_err)?
            .label("25-75%")
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 20, y + 5)], blue.mix(0.35).filled()));
        chart
            .draw_series(LineSeries::new(xs.iter().copied().zip(s.percentiles[2].iter().copied()), blue.stroke_width(2)))
            .map_err(draw_err)?
            .label("median")
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], blue.stroke_width(2)));
        if let Some(t) = &truth {
            let red = colour(3);
            chart
                .draw_series(LineSeries::new(xs.iter().copied().zip(t.iter().copied()), red.stroke_width(2)))
                .map_err(draw_err)?
                .label("truth")
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], red.stroke_width(2)));
        }
        if let Some(f) = n.checked_sub(1).and_then(|i| fronts.get(i)) {
            chart
                .draw_series(LineSeries::new(vec![(f.front, y0), (f.front, y1)], BLACK.stroke_width(1)))
                .map_err(draw_err)?
                .label("true front")
                .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLACK));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .draw()
            .map_err(draw_err)?;
        root.present().map_err(draw_err)?;
        written.push(path);
    }
    Ok(written)
}

fn plot_errors(input: &Path, out: &Path) -> anyhow::Result<PathBuf> {
    let rows: Vec<MetricRow> = io::read_csv(&input.join(METRICS_FILE))?;
    let mut by_n: BTreeMap<usize, Vec<&MetricRow>> = BTreeMap::new();
    for r in &rows {
        by_n.entry(r.n).or_default().push(r);
    }
    type Metric = fn(&MetricRow) -> f64;
    let series: [(&str, Metric); 3] = [
        ("relative error to truth", |r| r.truth_error),
        ("error on the true moving domain", |r| r.moving_error),
        ("variance ratio to prior", |r| r.variance_ratio),
    ];
    let means: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|(_, f)| {
            by_n.iter()
                .map(|(&n, rs)| (n as f64, rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64))
                .collect()
        })
        .collect();
    let n_max = by_n.keys().last().copied().unwrap_or(1) as f64;
    let (_, y1) = range(means.iter().flatten().map(|p| p.1));
    let path = out.join("errors.svg");
    let target = path.clone();
    let root = SVGBackend::new(&target, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("metrics averaged over repeats", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.5..n_max + 0.5, 0.0..y1)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("observation time index n")
        .draw()
        .map_err(draw_err)?;
    for (i, ((label, _), points)) in series.iter().zip(&means).enumerate() {
        let c = colour(i);
        chart
            .draw_series(LineSeries::new(points.clone(), c.stroke_width(2)))
            .map_err(draw_err)?
            .label(*label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], c.stroke_width(2)));
        chart
            .draw_series(points.iter().map(|&p| Circle::new(p, 4, c.filled())))
            .map_err(draw_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(path)
}

fn plot_sweep(file: &Path, metric: &str, out: &Path) -> anyhow::Result<PathBuf> {
    let rows: Vec<AggregateRow> = io::read_csv(file)?;
    let mut variants: Vec<String> = Vec::new();
    for r in &rows {
        if !variants.contains(&r.variant) {
            variants.push(r.variant.clone());
        }
    }
    let per_run = rows.iter().all(|r| r.n == 0);
    let (_, y1) = range(rows.iter().map(|r| r.mean + r.std));
    let path = out.join(format!("sweep_{metric}.svg"));
    let target = path.clone();
    let root = SVGBackend::new(&target, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let x_max = if per_run {
        variants.len() as f64
    } else {
        rows.iter().map(|r| r.n).max().unwrap_or(1) as f64 + 0.5
    };
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{metric}, mean over repeats"), ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(if per_run { -0.5..x_max - 0.5 } else { 0.5..x_max }, 0.0..y1.max(1e-9))
        .map_err(draw_err)?;
    let label = |x: &f64| {
        let i = x.round();
        if (x - i).abs() < 1e-6 && i >= 0.0 {
            variants.get(i as usize).cloned().unwrap_or_default()
        } else {
            String::new()
        }
    };
    let mut mesh = chart.configure_mesh();
    if per_run {
        mesh.x_desc("configuration")
            .x_labels(variants.len())
            .x_label_formatter(&label);
    } else {
        mesh.x_desc("observation time index n");
    }
    mesh.draw().map_err(draw_err)?;
    for (i, v) in variants.iter().enumerate() {
        let c = colour(i);
        let points: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| &r.variant == v)
            .map(|r| (if per_run { i as f64 } else { r.n as f64 }, r.mean))
            .collect();
        if !per_run {
            chart
                .draw_series(LineSeries::new(points.clone(), c.stroke_width(2)))
                .map_err(draw_err)?;
        }
        chart
            .draw_series(points.iter().map(|&p| Circle::new(p, 4, c.filled())))
            .map_err(draw_err)?
            .label(v.as_str())
            .legend(move |(x, y)| Circle::new((x + 10, y), 4, c.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(path)
}
