//! Report rendering: aggregates round-log CSVs into per-strategy learning
//! curves, emitted as a static SVG chart (mean over seeds with a min-max
//! band) and a plain-text comparison table. Output bytes are a pure
//! function of the input CSVs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::simulator::parse_round_log_csv;

/// Aggregated test-Dice values at one labeling budget.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub n_labeled: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Per-strategy learning curves, keyed by strategy name.
pub type CurveSeries = BTreeMap<String, Vec<CurvePoint>>;

/// Reads every `*.csv` in `dir` and groups test Dice by strategy and budget.
pub fn collect_series(dir: &Path) -> Result<CurveSeries> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "csv").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyReportInput(dir.to_path_buf()));
    }

    let mut raw: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for path in &paths {
        for record in parse_round_log_csv(path)? {
            raw.entry(record.strategy)
                .or_default()
                .entry(record.n_labeled)
                .or_default()
                .push(record.dice_test);
        }
    }

    let mut series = CurveSeries::new();
    for (strategy, budgets) in raw {
        let points = budgets
            .into_iter()
            .map(|(n_labeled, values)| CurvePoint {
                n_labeled,
                mean: values.iter().sum::<f64>() / values.len() as f64,
                min: values.iter().copied().fold(f64::INFINITY, f64::min),
                max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
            .collect();
        series.insert(strategy, points);
    }
    Ok(series)
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 24.0;
const MARGIN_BOTTOM: f64 = 48.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// Renders the Dice-vs-labels chart. One line per strategy (mean over
/// seeds), a translucent min-max band, and a legend.
pub fn render_svg(series: &CurveSeries) -> String {
    let x_min = series
        .values()
        .flat_map(|pts| pts.iter().map(|p| p.n_labeled))
        .min()
        .unwrap_or(0) as f64;
    let x_max = series
        .values()
        .flat_map(|pts| pts.iter().map(|p| p.n_labeled))
        .max()
        .unwrap_or(1) as f64;
    let x_span = (x_max - x_min).max(1.0);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_of = |n: f64| MARGIN_LEFT + (n - x_min) / x_span * plot_w;
    let y_of = |d: f64| MARGIN_TOP + (1.0 - d.clamp(0.0, 1.0)) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // axes and grid
    for i in 0..=4 {
        let d = i as f64 * 0.25;
        let y = y_of(d);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\"/>\n",
            fmt(MARGIN_LEFT),
            fmt(y),
            fmt(WIDTH - MARGIN_RIGHT),
            fmt(y)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\" fill=\"#333333\">{}</text>\n",
            fmt(MARGIN_LEFT - 8.0),
            fmt(y + 4.0),
            fmt(d)
        ));
    }
    for i in 0..=5 {
        let n = x_min + x_span * i as f64 / 5.0;
        let x = x_of(n);
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" fill=\"#333333\">{}</text>\n",
            fmt(x),
            fmt(HEIGHT - MARGIN_BOTTOM + 20.0),
            n.round() as i64
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\"/>\n",
        fmt(MARGIN_LEFT),
        fmt(HEIGHT - MARGIN_BOTTOM),
        fmt(WIDTH - MARGIN_RIGHT),
        fmt(HEIGHT - MARGIN_BOTTOM)
    ));
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\"/>\n",
        fmt(MARGIN_LEFT),
        fmt(MARGIN_TOP),
        fmt(MARGIN_LEFT),
        fmt(HEIGHT - MARGIN_BOTTOM)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" fill=\"#333333\">labeled samples</text>\n",
        fmt(MARGIN_LEFT + plot_w / 2.0),
        fmt(HEIGHT - 8.0)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" fill=\"#333333\" transform=\"rotate(-90 16 {})\">test dice</text>\n",
        fmt(MARGIN_TOP + plot_h / 2.0),
        fmt(MARGIN_TOP + plot_h / 2.0)
    ));

    for (idx, (strategy, points)) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        // min-max band
        let mut band = String::new();
        for p in points {
            band.push_str(&format!("{},{} ", fmt(x_of(p.n_labeled as f64)), fmt(y_of(p.max))));
        }
        for p in points.iter().rev() {
            band.push_str(&format!("{},{} ", fmt(x_of(p.n_labeled as f64)), fmt(y_of(p.min))));
        }
        svg.push_str(&format!(
            "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n",
            band.trim_end()
        ));
        let line: Vec<String> = points
            .iter()
            .map(|p| format!("{},{}", fmt(x_of(p.n_labeled as f64)), fmt(y_of(p.mean))))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            line.join(" ")
        ));
        // legend entry
        let ly = MARGIN_TOP + 12.0 + idx as f64 * 18.0;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            fmt(WIDTH - MARGIN_RIGHT - 180.0),
            fmt(ly),
            fmt(WIDTH - MARGIN_RIGHT - 156.0),
            fmt(ly)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"#333333\">{strategy}</text>\n",
            fmt(WIDTH - MARGIN_RIGHT - 150.0),
            fmt(ly + 4.0)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Plain-text comparison table: mean test Dice per budget and the highest
/// mean Dice per strategy.
pub fn render_table(series: &CurveSeries) -> String {
    let mut budgets: Vec<usize> = series
        .values()
        .flat_map(|pts| pts.iter().map(|p| p.n_labeled))
        .collect();
    budgets.sort();
    budgets.dedup();

    let mut out = format!("{:<28}", "strategy");
    for &b in &budgets {
        out.push_str(&format!("{:>10}", b));
    }
    out.push_str(&format!("{:>12}\n", "highest"));
    for (strategy, points) in series {
        out.push_str(&format!("{:<28}", strategy));
        for &b in &budgets {
            match points.iter().find(|p| p.n_labeled == b) {
                Some(p) => out.push_str(&format!("{:>10.4}", p.mean)),
                None => out.push_str(&format!("{:>10}", "-")),
            }
        }
        let highest = points.iter().map(|p| p.mean).fold(f64::MIN, f64::max);
        out.push_str(&format!("{:>12.4}\n", highest));
    }
    out
}

/// Renders both report artifacts from the CSVs in `csv_dir`, returning the
/// SVG and table paths.
pub fn write_report(csv_dir: &Path, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let series = collect_series(csv_dir)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let svg_path = out_dir.join("learning_curves.svg");
    fs::write(&svg_path, render_svg(&series)).map_err(|e| Error::io(&svg_path, e))?;
    let table_path = out_dir.join("comparison.txt");
    fs::write(&table_path, render_table(&series)).map_err(|e| Error::io(&table_path, e))?;
    Ok((svg_path, table_path))
}
