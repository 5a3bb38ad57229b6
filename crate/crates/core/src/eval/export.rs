//! CSV and SVG result files. Every CSV starts with a `# manifest: <path>` line.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::evaluate::EvalTable;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    /// A horizon length, or `avg` for the mean row.
    pub horizon: String,
    pub mse: f64,
    pub mae: f64,
    pub model: String,
    pub seed: u64,
}

impl MetricRow {
    /// One row per evaluated horizon plus the average row.
    pub fn from_table(table: &EvalTable, dataset: &str, model: &str, seed: u64) -> Vec<MetricRow> {
        let row = |horizon: String, m: super::Metrics| MetricRow {
            dataset: dataset.to_string(),
            horizon,
            mse: m.mse,
            mae: m.mae,
            model: model.to_string(),
            seed,
        };
        let mut rows: Vec<MetricRow> = table
            .rows
            .iter()
            .filter_map(|r| r.metrics.map(|m| row(r.horizon.to_string(), m)))
            .collect();
        if let Some(avg) = table.average {
            rows.push(row("avg".into(), avg));
        }
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub timestamp: String,
    pub variate: String,
    pub y_true: Option<f64>,
    pub y_pred: f64,
}

impl ForecastRow {
    pub fn format_timestamp(t: &NaiveDateTime) -> String {
        t.format("%Y-%m-%d %H:%M:%S").to_string()
    }
}

fn csv_writer(path: &Path, manifest: Option<&Path>) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut file = BufWriter::new(File::create(path)?);
    if let Some(m) = manifest {
        writeln!(file, "# manifest: {}", m.display())?;
    }
    Ok(csv::Writer::from_writer(file))
}

fn write_rows<S: Serialize>(path: &Path, manifest: Option<&Path>, rows: &[S]) -> Result<()> {
    let mut w = csv_writer(path, manifest)?;
    for r in rows {
        w.serialize(r).map_err(std::io::Error::other)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_csv(path: &Path, manifest: Option<&Path>, rows: &[MetricRow]) -> Result<()> {
    write_rows(path, manifest, rows)
}

pub fn write_forecast_csv(path: &Path, manifest: Option<&Path>, rows: &[ForecastRow]) -> Result<()> {
    write_rows(path, manifest, rows)
}

/// Reads a CSV written by this module, skipping the manifest comment.
pub fn read_csv<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<D>> {
    let text = std::fs::read_to_string(path)?;
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    r.deserialize()
        .map(|row| row.map_err(|e| std::io::Error::other(e).into()))
        .collect()
}

/// Line plot of ground truth (if any) and prediction for one variate.
pub fn svg_plot(title: &str, history: &[f64], truth: Option<&[f64]>, pred: &[f64]) -> String {
    let (w, h, pad) = (800.0, 300.0, 30.0);
    let n = history.len() + pred.len();
    let all = history.iter().chain(pred).chain(truth.into_iter().flatten());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x = |i: usize| pad + (w - 2.0 * pad) * i as f64 / (n.max(2) - 1) as f64;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / span;
    let line = |offset: usize, values: &[f64], color: &str| {
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.1},{:.1}", x(offset + i), y(v)))
            .collect();
        format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        )
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{pad}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>");
    s.push_str(&line(0, history, "#555555"));
    if let Some(t) = truth {
        s.push_str(&line(history.len(), t, "#1f77b4"));
    }
    s.push_str(&line(history.len(), pred, "#d62728"));
    s.push_str("</svg>\n");
    s
}
