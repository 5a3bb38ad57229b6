//! Benchmark evaluation over the test segment.

use serde::{Deserialize, Serialize};

use super::metrics::{MetricSum, Metrics};
use super::rollout::{rollout_batch, Renorm};
use crate::data::{Dataset, Segment};
use crate::error::Result;
use crate::model::MoHets;
use crate::tensor::Element;

pub const BENCHMARK_HORIZONS: [usize; 4] = [96, 192, 336, 720];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOptions {
    pub horizons: Vec<usize>,
    /// Distance between consecutive test windows; `None` uses H_o.
    pub stride: Option<usize>,
    pub renorm: Renorm,
    /// Windows forecast together.
    pub batch_windows: usize,
    /// Evenly thins the test windows to at most this many.
    pub max_windows: Option<usize>,
    pub segment: Segment,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            horizons: BENCHMARK_HORIZONS.to_vec(),
            stride: None,
            renorm: Renorm::PerChunk,
            batch_windows: 32,
            max_windows: None,
            segment: Segment::Test,
        }
    }
}

/// Metrics for one horizon, or the reason it was skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonResult {
    pub horizon: usize,
    pub windows: usize,
    pub metrics: Option<Metrics>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalTable {
    pub rows: Vec<HorizonResult>,
    /// Mean over evaluated horizons.
    pub average: Option<Metrics>,
}

impl EvalTable {
    pub fn get(&self, horizon: usize) -> Option<Metrics> {
        self.rows.iter().find(|r| r.horizon == horizon).and_then(|r| r.metrics)
    }

    fn from_rows(rows: Vec<HorizonResult>) -> Self {
        let done: Vec<Metrics> = rows.iter().filter_map(|r| r.metrics).collect();
        let average = (!done.is_empty()).then(|| Metrics::mean(&done));
        Self { rows, average }
    }
}

fn thin(starts: Vec<usize>, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(c) if c > 0 && starts.len() > c => (0..c).map(|i| starts[i * starts.len() / c]).collect(),
        _ => starts,
    }
}

/// Windows of `segment` with room for `horizon` targets, or a skip reason.
fn windows_for(ds: &Dataset, horizon: usize, stride: usize, opts: &EvalOptions) -> std::result::Result<Vec<usize>, String> {
    match ds.starts_for(opts.segment, horizon, stride) {
        Ok(s) if !s.is_empty() => Ok(thin(s, opts.max_windows)),
        Ok(_) => Err(format!("no {:?} window fits horizon {horizon}", opts.segment)),
        Err(e) => Err(e.to_string()),
    }
}

fn evaluate_with(
    ds: &Dataset,
    opts: &EvalOptions,
    stride: usize,
    mut forecast: impl FnMut(&[usize], usize) -> Result<Vec<f64>>,
) -> Result<EvalTable> {
    let l = ds.lookback;
    let mut rows = Vec::new();
    for &h in &opts.horizons {
        let starts = match windows_for(ds, h, stride, opts) {
            Ok(s) => s,
            Err(reason) => {
                log::warn!("horizon {h} skipped: {reason}");
                rows.push(HorizonResult {
                    horizon: h,
                    windows: 0,
                    metrics: None,
                    skipped: Some(reason),
                });
                continue;
            }
        };
        let mut sum = MetricSum::default();
        for chunk in starts.chunks(opts.batch_windows.max(1)) {
            let pred = forecast(chunk, h)?;
            let mut row = 0;
            for &s in chunk {
                for col in &ds.series {
                    sum.add(&col[s + l..s + l + h], &pred[row * h..(row + 1) * h]);
                    row += 1;
                }
            }
        }
        rows.push(HorizonResult {
            horizon: h,
            windows: starts.len(),
            metrics: Some(sum.finish()),
            skipped: None,
        });
    }
    Ok(EvalTable::from_rows(rows))
}

/// Rolling-forecast metrics on the standardized scale for each horizon.
pub fn evaluate_horizons<T: Element>(model: &MoHets<T>, ds: &Dataset, opts: &EvalOptions) -> Result<EvalTable> {
    let stride = opts.stride.unwrap_or(model.config.horizon);
    evaluate_with(ds, opts, stride, |starts, h| {
        Ok(rollout_batch(model, &ds.series, starts, ds.covariates.as_ref(), h, opts.renorm)?.predictions)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// Repeats the last observed value.
    RepeatLast,
    /// Repeats the last observed season of the given period.
    Seasonal(usize),
}

impl Baseline {
    pub fn name(self) -> String {
        match self {
            Baseline::RepeatLast => "naive-last".into(),
            Baseline::Seasonal(p) => format!("naive-seasonal-{p}"),
        }
    }

    /// Forecast of `horizon` points following `history`.
    pub fn forecast(self, history: &[f64], horizon: usize) -> Vec<f64> {
        let n = history.len();
        match self {
            Baseline::RepeatLast => vec![history[n - 1]; horizon],
            Baseline::Seasonal(p) => {
                let p = p.clamp(1, n);
                (0..horizon).map(|t| history[n - p + t % p]).collect()
            }
        }
    }
}

/// Baseline metrics over the same windows and pipeline as [`evaluate_horizons`].
pub fn naive_baseline(ds: &Dataset, baseline: Baseline, stride: usize, opts: &EvalOptions) -> Result<EvalTable> {
    let l = ds.lookback;
    evaluate_with(ds, opts, stride, |starts, h| {
        Ok(starts
            .iter()
            .flat_map(|&s| ds.series.iter().flat_map(move |col| baseline.forecast(&col[s..s + l], h)))
            .collect())
    })
}
