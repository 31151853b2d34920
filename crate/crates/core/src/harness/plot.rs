//! Static SVG figures: gap vs epoch, gap vs time and variance vs epoch, all
//! with a log₁₀ y axis and one series per winning method.
//!
//! Output depends only on the numbers plotted and the labels, so figures
//! rebuilt from the CSV files match the ones written from memory byte for
//! byte. Non-positive values cannot sit on a log axis and are skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::csv::{read_index, read_run_csv};
use super::{HarnessError, ResultTable};
use crate::optimizer::EpochRecord;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Per-epoch means over the seeds of one winning grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub label: String,
    pub epoch: Vec<f64>,
    pub time: Vec<f64>,
    pub gap: Vec<f64>,
    pub variance: Vec<f64>,
}

impl PlotSeries {
    /// Averages runs epoch by epoch over the runs that reached that epoch.
    pub fn from_runs(label: impl Into<String>, runs: &[&[EpochRecord]]) -> Self {
        let len = runs.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut s = PlotSeries { label: label.into(), epoch: vec![], time: vec![], gap: vec![], variance: vec![] };
        for e in 0..len {
            let present: Vec<&EpochRecord> = runs.iter().filter_map(|r| r.get(e)).collect();
            let mean = |f: &dyn Fn(&EpochRecord) -> f64| present.iter().map(|r| f(r)).sum::<f64>() / present.len() as f64;
            s.epoch.push(present[0].epoch as f64);
            s.time.push(mean(&|r| r.wall_time_sec));
            s.gap.push(mean(&|r| r.gap.unwrap_or(f64::NAN)));
            s.variance.push(mean(&|r| r.variance.unwrap_or(f64::NAN)));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlotReport {
    pub files: Vec<PathBuf>,
    /// Set when nothing was drawn.
    pub notice: Option<String>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let frac = raw / mag;
    let nice = if frac <= 1.0 {
        1.0
    } else if frac <= 2.0 {
        2.0
    } else if frac <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn tick_label(v: f64) -> String {
    if v == v.round() && v.abs() < 1e6 {
        format!("{}", v as i64)
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Axis ranges `(x_min, x_max, y_min_decade, y_max_decade)` covering every
/// finite plotted point.
fn ranges(series: &[(String, Vec<(f64, f64)>)]) -> (f64, f64, i32, i32) {
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        let ly = y.log10();
        y0 = y0.min(ly);
        y1 = y1.max(ly);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0, 1);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let d0 = y0.floor() as i32;
    let d1 = (y1.ceil() as i32).max(d0 + 1);
    (x0, x1, d0, d1)
}

/// One log-y line chart. `series` holds `(label, raw points)`; points with a
/// non-finite x or a y that is not positive and finite are dropped.
pub fn render_svg(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let kept: Vec<(String, Vec<(f64, f64)>)> = series
        .iter()
        .map(|(l, p)| {
            (l.clone(), p.iter().copied().filter(|&(x, y)| x.is_finite() && y.is_finite() && y > 0.0).collect())
        })
        .collect();
    let (x0, x1, d0, d1) = ranges(&kept);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (d1 as f64 - y.log10()) / (d1 - d0) as f64 * ph;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="13">{}</text>"#, LEFT + pw / 2.0, escape(title))
        .unwrap();

    let dstep = ((d1 - d0) as f64 / 8.0).ceil().max(1.0) as i32;
    let mut d = d0;
    while d <= d1 {
        let y = TOP + (d1 - d) as f64 / (d1 - d0) as f64 * ph;
        writeln!(s, r##"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##, LEFT + pw).unwrap();
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"#, LEFT - 6.0, y + 4.0).unwrap();
        d += dstep;
    }
    let step = nice_step(x1 - x0, 6.0);
    let mut t = (x0 / step).ceil() * step;
    while t <= x1 + 1e-9 * step {
        let x = sx(t);
        writeln!(s, r##"<line x1="{x:.2}" y1="{TOP:.2}" x2="{x:.2}" y2="{:.2}" stroke="#eeeeee"/>"##, TOP + ph).unwrap();
        writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 16.0, tick_label(t))
            .unwrap();
        t += step;
    }
    writeln!(s, r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#)
        .unwrap();
    writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 12.0, escape(x_label))
        .unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    )
    .unwrap();

    for (i, (label, pts)) in kept.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !pts.is_empty() {
            let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "))
                .unwrap();
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 12.0;
        writeln!(s, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0)
            .unwrap();
        writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, ly + 4.0, escape(label)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

/// Writes the three figures for one `(dataset, λ)` group.
fn write_group(
    dir: &Path,
    dataset: &str,
    model: &str,
    lambda: f64,
    series: &[PlotSeries],
) -> Result<Vec<PathBuf>, HarnessError> {
    let stem = format!("{}_{}_lam{:e}", sanitize(dataset), sanitize(model), lambda);
    let title = format!("{dataset} ({model}, lambda = {lambda:e})");
    let pick = |x: &dyn Fn(&PlotSeries) -> &Vec<f64>, y: &dyn Fn(&PlotSeries) -> &Vec<f64>| {
        series
            .iter()
            .map(|s| (s.label.clone(), x(s).iter().copied().zip(y(s).iter().copied()).collect()))
            .collect::<Vec<_>>()
    };
    let figures = [
        ("gap_epoch", "epoch", "optimality gap", pick(&|s| &s.epoch, &|s| &s.gap)),
        ("gap_time", "wall time (s)", "optimality gap", pick(&|s| &s.time, &|s| &s.gap)),
        ("variance_epoch", "epoch", "variance", pick(&|s| &s.epoch, &|s| &s.variance)),
    ];
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (suffix, xl, yl, data) in figures {
        let path = dir.join(format!("{stem}_{suffix}.svg"));
        fs::write(&path, render_svg(&title, xl, yl, &data))?;
        files.push(path);
    }
    Ok(files)
}

fn empty_notice() -> PlotReport {
    PlotReport { files: Vec::new(), notice: Some("no winning methods to plot; no figures written".into()) }
}

/// Figures for every λ in `table`, written under `dir`.
pub fn emit_plots(table: &ResultTable, dir: &Path) -> Result<PlotReport, HarnessError> {
    if table.winners.is_empty() {
        return Ok(empty_notice());
    }
    let mut lambdas: Vec<f64> = Vec::new();
    for w in &table.winners {
        if !lambdas.contains(&w.lambda) {
            lambdas.push(w.lambda);
        }
    }
    let mut report = PlotReport::default();
    for lambda in lambdas {
        let series: Vec<PlotSeries> = table
            .winners
            .iter()
            .filter(|w| w.lambda == lambda)
            .map(|w| {
                let runs: Vec<&[EpochRecord]> =
                    table.winner_rows(w.method, lambda).iter().map(|r| r.records.as_slice()).collect();
                PlotSeries::from_runs(w.method.name(), &runs)
            })
            .collect();
        report.files.extend(write_group(dir, &table.dataset, table.model.name(), lambda, &series)?);
    }
    Ok(report)
}

/// Rebuilds the figures from `<from>/index.csv` and the run CSVs it lists.
pub fn plots_from_dir(from: &Path, dir: &Path) -> Result<PlotReport, HarnessError> {
    let index = read_index(from)?;
    if index.is_empty() {
        return Ok(empty_notice());
    }
    let mut groups: Vec<(String, String, f64)> = Vec::new();
    for e in &index {
        let key = (e.dataset.clone(), e.model.clone(), e.lambda);
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    let mut report = PlotReport::default();
    for (dataset, model, lambda) in groups {
        let mut series = Vec::new();
        for e in index.iter().filter(|e| e.dataset == dataset && e.model == model && e.lambda == lambda) {
            let runs = e.run_files.iter().map(|f| read_run_csv(&from.join(f))).collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&[EpochRecord]> = runs.iter().map(Vec::as_slice).collect();
            series.push(PlotSeries::from_runs(e.method.clone(), &refs));
        }
        report.files.extend(write_group(dir, &dataset, &model, lambda, &series)?);
    }
    Ok(report)
}
