//! Report rendering: parses a run's `metrics.csv` and produces per-metric
//! line charts (SVG or pivoted CSV) plus a cross-variant summary table.
//!
//! The SVG output is a pure function of the parsed rows — every coordinate
//! is formatted with two decimals and elements are emitted in a fixed
//! order — so identical CSV input yields byte-identical charts.

use std::collections::BTreeMap;

use medqa_core::crossval::{CVSummary, METRICS_CSV_HEADER};
use medqa_core::metrics::MetricSet;

use crate::error::{runtime, CliError};

/// The four charted validation metrics, in column order.
pub const METRIC_NAMES: [&str; 4] = ["accuracy", "precision", "recall", "f1"];

/// One parsed `metrics.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub variant: String,
    pub fold: usize,
    pub epoch: usize,
    pub train_loss: f64,
    /// accuracy, precision, recall, f1 — indexed like [`METRIC_NAMES`].
    pub values: [f64; 4],
    pub wall_time_s: f64,
}

/// Strict parser for the pinned column layout. Any deviation (wrong
/// header, wrong field count, non-numeric cell) is an error naming the line.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>, CliError> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or("");
    if header != METRICS_CSV_HEADER {
        return Err(runtime(format!(
            "corrupt metrics CSV: expected header {METRICS_CSV_HEADER:?}, found {header:?}"
        )));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(runtime(format!(
                "corrupt metrics CSV: line {lineno} has {} fields, expected 9",
                fields.len()
            )));
        }
        let num = |field: &str, name: &str| -> Result<f64, CliError> {
            field.parse::<f64>().map_err(|_| {
                runtime(format!(
                    "corrupt metrics CSV: line {lineno}: {name} is not a number: {field:?}"
                ))
            })
        };
        let int = |field: &str, name: &str| -> Result<usize, CliError> {
            field.parse::<usize>().map_err(|_| {
                runtime(format!(
                    "corrupt metrics CSV: line {lineno}: {name} is not an integer: {field:?}"
                ))
            })
        };
        rows.push(MetricRow {
            variant: fields[0].to_string(),
            fold: int(fields[1], "fold")?,
            epoch: int(fields[2], "epoch")?,
            train_loss: num(fields[3], "train_loss")?,
            values: [
                num(fields[4], "accuracy")?,
                num(fields[5], "precision")?,
                num(fields[6], "recall")?,
                num(fields[7], "f1")?,
            ],
            wall_time_s: num(fields[8], "wall_time_s")?,
        });
    }
    if rows.is_empty() {
        return Err(runtime("corrupt metrics CSV: no data rows"));
    }
    Ok(rows)
}

/// Groups rows into per-(variant, fold) series sorted by epoch; the series
/// themselves are ordered by variant then fold id, which fixes drawing
/// order and colors.
fn series_of(rows: &[MetricRow]) -> Vec<((String, usize), Vec<MetricRow>)> {
    let mut grouped: BTreeMap<(String, usize), Vec<MetricRow>> = BTreeMap::new();
    for row in rows {
        grouped.entry((row.variant.clone(), row.fold)).or_default().push(row.clone());
    }
    grouped
        .into_iter()
        .map(|(key, mut series)| {
            series.sort_by_key(|r| r.epoch);
            (key, series)
        })
        .collect()
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 620.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 440.0;

const PALETTE: [&str; 8] = [
    "#1b6ca8", "#d1495b", "#2e933c", "#e07a1f", "#7c3aed", "#0891b2", "#b45309", "#64748b",
];

fn escape_xml(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders one metric as a line chart: x spans the epochs present, y is
/// the fixed [0, 1] metric range, one polyline per (variant, fold) series.
/// A value of exactly 1.0 sits on the top gridline.
pub fn render_svg(metric_idx: usize, rows: &[MetricRow]) -> String {
    let series = series_of(rows);
    let epochs: Vec<usize> =
        rows.iter().map(|r| r.epoch).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let (e_min, e_max) = (*epochs.first().unwrap_or(&1), *epochs.last().unwrap_or(&1));

    let x_of = |epoch: usize| -> f64 {
        if e_max == e_min {
            (LEFT + RIGHT) / 2.0
        } else {
            LEFT + (epoch - e_min) as f64 / (e_max - e_min) as f64 * (RIGHT - LEFT)
        }
    };
    let y_of = |value: f64| -> f64 { BOTTOM - value * (BOTTOM - TOP) };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH:.0}\" height=\"{HEIGHT:.0}\" \
         viewBox=\"0 0 {WIDTH:.0} {HEIGHT:.0}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{WIDTH:.0}\" height=\"{HEIGHT:.0}\" fill=\"#ffffff\"/>\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"14.00\" text-anchor=\"middle\" font-family=\"monospace\" \
         font-size=\"13\">{}</text>\n",
        (LEFT + RIGHT) / 2.0,
        escape_xml(METRIC_NAMES[metric_idx])
    ));

    // Horizontal gridlines every 0.25; the top one marks a perfect 1.0.
    for i in 0..=4 {
        let v = i as f64 * 0.25;
        let y = y_of(v);
        svg.push_str(&format!(
            "  <line x1=\"{LEFT:.2}\" y1=\"{y:.2}\" x2=\"{RIGHT:.2}\" y2=\"{y:.2}\" \
             stroke=\"#cccccc\" stroke-width=\"1\"/>\n"
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"monospace\" \
             font-size=\"11\">{v:.2}</text>\n",
            LEFT - 6.0,
            y + 4.0
        ));
    }

    // X ticks: label at most ~10 epochs, evenly strided.
    let stride = ((e_max - e_min) / 10).max(1);
    let mut epoch = e_min;
    while epoch <= e_max {
        let x = x_of(epoch);
        svg.push_str(&format!(
            "  <line x1=\"{x:.2}\" y1=\"{BOTTOM:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" \
             stroke=\"#000000\" stroke-width=\"1\"/>\n",
            BOTTOM + 5.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"monospace\" \
             font-size=\"11\">{epoch}</text>\n",
            BOTTOM + 18.0
        ));
        epoch += stride;
    }
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"monospace\" \
         font-size=\"11\">epoch</text>\n",
        (LEFT + RIGHT) / 2.0,
        BOTTOM + 34.0
    ));

    // Axes.
    svg.push_str(&format!(
        "  <line x1=\"{LEFT:.2}\" y1=\"{TOP:.2}\" x2=\"{LEFT:.2}\" y2=\"{BOTTOM:.2}\" \
         stroke=\"#000000\" stroke-width=\"1\"/>\n"
    ));
    svg.push_str(&format!(
        "  <line x1=\"{LEFT:.2}\" y1=\"{BOTTOM:.2}\" x2=\"{RIGHT:.2}\" y2=\"{BOTTOM:.2}\" \
         stroke=\"#000000\" stroke-width=\"1\"/>\n"
    ));

    for (idx, ((variant, fold), points)) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let coords: Vec<String> = points
            .iter()
            .map(|row| format!("{:.2},{:.2}", x_of(row.epoch), y_of(row.values[metric_idx])))
            .collect();
        svg.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" \
             data-label=\"{}/fold{fold}\" points=\"{}\"/>\n",
            escape_xml(variant),
            coords.join(" ")
        ));
    }

    svg.push_str("</svg>\n");
    svg
}

/// Pivots one metric into a fold-per-row, epoch-per-column CSV. Cells keep
/// the shortest round-trip float form; epochs a series lacks stay empty.
pub fn render_pivot_csv(metric_idx: usize, rows: &[MetricRow]) -> String {
    let series = series_of(rows);
    let epochs: Vec<usize> =
        rows.iter().map(|r| r.epoch).collect::<std::collections::BTreeSet<_>>().into_iter().collect();

    let mut out = String::from("variant,fold");
    for epoch in &epochs {
        out.push_str(&format!(",epoch_{epoch}"));
    }
    out.push('\n');

    for ((variant, fold), points) in &series {
        let by_epoch: BTreeMap<usize, f64> =
            points.iter().map(|r| (r.epoch, r.values[metric_idx])).collect();
        out.push_str(&format!("{variant},{fold}"));
        for epoch in &epochs {
            match by_epoch.get(epoch) {
                Some(v) => out.push_str(&format!(",{v}")),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Rebuilds one summary per variant from raw rows: each fold contributes
/// its final epoch's validation metrics, and the variant's total time is
/// the sum of per-fold wall clocks (`wall_time_s` accumulates within a
/// fold, so a fold's total is its last row).
pub fn summaries_from_rows(rows: &[MetricRow]) -> Vec<CVSummary> {
    let mut variants: BTreeMap<String, BTreeMap<usize, MetricRow>> = BTreeMap::new();
    for row in rows {
        let folds = variants.entry(row.variant.clone()).or_default();
        match folds.get(&row.fold) {
            Some(last) if last.epoch >= row.epoch => {}
            _ => {
                folds.insert(row.fold, row.clone());
            }
        }
    }
    variants
        .into_iter()
        .map(|(variant_name, folds)| {
            let per_fold: Vec<MetricSet> = folds
                .values()
                .map(|row| MetricSet {
                    accuracy: row.values[0],
                    precision: row.values[1],
                    recall: row.values[2],
                    f1: row.values[3],
                })
                .collect();
            let mean = MetricSet::mean(&per_fold);
            let total_wall_time_s = folds.values().map(|row| row.wall_time_s).sum();
            CVSummary { variant_name, per_fold, mean, total_wall_time_s, histories: Vec::new() }
        })
        .collect()
}

/// Fixed-width text table from pre-formatted summary rows.
pub fn format_summary_table(rows: &[medqa_core::crossval::SummaryRow]) -> String {
    let headers = ["variant", "accuracy%", "precision%", "recall%", "f1%", "time_s"];
    let cells: Vec<[&str; 6]> = rows
        .iter()
        .map(|r| {
            [r.variant.as_str(), r.accuracy.as_str(), r.precision.as_str(), r.recall.as_str(),
             r.f1.as_str(), r.time_s.as_str()]
        })
        .collect();
    let mut widths = headers.map(str::len);
    for row in &cells {
        for (w, cell) in widths.iter_mut().zip(row.iter()) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut push_row = |row: &[&str; 6]| {
        let line: Vec<String> =
            row.iter().zip(widths.iter()).map(|(cell, w)| format!("{cell:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    };
    push_row(&headers);
    for row in &cells {
        push_row(row);
    }
    out
}
