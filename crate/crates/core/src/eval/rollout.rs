//! Autoregressive rolling forecasts beyond the model's output resolution.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use crate::data::{CovariateSource, NormStats, WindowBatch, NORM_EPS};
use crate::error::{Error, Result};
use crate::model::MoHets;
use crate::tensor::Element;

/// How each chunk's input buffer is instance-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Renorm {
    /// Statistics recomputed on every updated buffer.
    #[default]
    PerChunk,
    /// Statistics of the initial window reused for every chunk.
    Frozen,
}

/// Number of forward passes needed for `horizon` steps.
pub fn iterations(horizon: usize, chunk: usize) -> usize {
    horizon.div_ceil(chunk)
}

/// Rolling forecasts of several windows at once.
#[derive(Debug, Clone)]
pub struct BatchRollout {
    /// `[windows·D, horizon]`, window-major rows.
    pub predictions: Vec<f64>,
    pub rows: usize,
    pub horizon: usize,
    pub iterations: usize,
}

/// Forecasts `horizon` steps after each window of `series` (`[D][T]`) starting at `starts`.
pub fn rollout_batch<T: Element>(
    model: &MoHets<T>,
    series: &[Vec<f64>],
    starts: &[usize],
    covariates: Option<&CovariateSource>,
    horizon: usize,
    renorm: Renorm,
) -> Result<BatchRollout> {
    let cfg = &model.config;
    let (l, h_o) = (cfg.lookback, cfg.horizon);
    let d = series.len();
    let len = series.first().map_or(0, Vec::len);
    let n_iter = iterations(horizon, h_o);
    let cov = if cfg.uses_covariates() { covariates } else { None };
    if cfg.uses_covariates() && cov.is_none() {
        return Err(Error::config("model uses covariates but no covariate source was given"));
    }
    for &s in starts {
        if s + l > len {
            return Err(Error::Dataset(format!("window at {s} needs {l} points, series has {len}")));
        }
        if let Some(available) = cov.and_then(|c| c.available) {
            if s + l + horizon > available {
                return Err(Error::CovariatesExhausted {
                    needed: s + l + horizon - 1,
                    available,
                });
            }
        }
    }
    let rows = starts.len() * d;
    // Buffers are window-major, one row of L per variate.
    let mut buffers: Vec<Vec<f64>> = starts
        .iter()
        .flat_map(|&s| series.iter().map(move |col| col[s..s + l].to_vec()))
        .collect();
    let mut out = vec![Vec::with_capacity(n_iter * h_o); rows];
    let mut frozen: Option<Vec<NormStats>> = None;
    for it in 0..n_iter {
        let raw: Vec<f64> = buffers.concat();
        let mut covs = Vec::new();
        if let Some(src) = cov {
            for &s in starts {
                covs.extend(src.window(s + it * h_o, l)?);
            }
        }
        let c = cov.map_or(0, CovariateSource::channels);
        let shifted: Vec<usize> = starts.iter().map(|s| s + it * h_o).collect();
        let mut batch = WindowBatch::assemble(&raw, Vec::new(), covs, starts.len(), d, l, 0, c, shifted)?;
        if renorm == Renorm::Frozen {
            let stats = frozen.get_or_insert_with(|| batch.stats.clone());
            for (r, st) in stats.iter().enumerate() {
                for (dst, &x) in batch.inputs[r * l..(r + 1) * l].iter_mut().zip(&buffers[r]) {
                    *dst = (x - st.mean) / (st.std + NORM_EPS);
                }
            }
            batch.stats = stats.clone();
        }
        let pred = model.predict(&batch)?;
        for (r, chunk) in pred.chunks(h_o).enumerate() {
            out[r].extend_from_slice(chunk);
            let buf = &mut buffers[r];
            buf.drain(..h_o.min(l));
            buf.extend_from_slice(&chunk[chunk.len().saturating_sub(l)..]);
        }
    }
    let predictions = out.into_iter().flat_map(|mut row| {
        row.truncate(horizon);
        row
    });
    Ok(BatchRollout {
        predictions: predictions.collect(),
        rows,
        horizon,
        iterations: n_iter,
    })
}

/// A single forecast of every variate.
#[derive(Debug, Clone)]
pub struct ForecastResult {
    /// `[D][H]`
    pub predictions: Vec<Vec<f64>>,
    /// `[D][H]` when the future is known.
    pub truth: Option<Vec<Vec<f64>>>,
    pub metrics: Option<Metrics>,
    pub per_variate: Vec<Metrics>,
    pub iterations: usize,
    pub elapsed: Duration,
}

/// Forecasts `horizon` steps after the window starting at `start`; attaches metrics
/// when `series` extends far enough to provide ground truth.
pub fn rollout<T: Element>(
    model: &MoHets<T>,
    series: &[Vec<f64>],
    start: usize,
    covariates: Option<&CovariateSource>,
    horizon: usize,
    renorm: Renorm,
) -> Result<ForecastResult> {
    let t0 = Instant::now();
    let r = rollout_batch(model, series, &[start], covariates, horizon, renorm)?;
    let predictions: Vec<Vec<f64>> = r.predictions.chunks(horizon.max(1)).map(<[f64]>::to_vec).collect();
    let origin = start + model.config.lookback;
    let len = series.first().map_or(0, Vec::len);
    let truth = (origin + horizon <= len).then(|| {
        series
            .iter()
            .map(|col| col[origin..origin + horizon].to_vec())
            .collect::<Vec<_>>()
    });
    let per_variate = match &truth {
        Some(t) => t
            .iter()
            .zip(&predictions)
            .map(|(y, p)| Metrics::rows(y, p, horizon))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let metrics = truth.as_ref().map(|_| Metrics::mean(&per_variate));
    Ok(ForecastResult {
        predictions,
        truth,
        metrics,
        per_variate,
        iterations: r.iterations,
        elapsed: t0.elapsed(),
    })
}
