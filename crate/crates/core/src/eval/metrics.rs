//! Point-forecast error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

fn check(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::shape(
            "metric",
            format!("truth has {} points, prediction {}", y.len(), yhat.len()),
        ));
    }
    Ok(())
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len().max(1) as f64)
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len().max(1) as f64)
}

impl Metrics {
    /// Mean over each row of `horizon` points, then over rows.
    pub fn rows(y: &[f64], yhat: &[f64], horizon: usize) -> Result<Self> {
        check(y, yhat)?;
        if horizon == 0 || y.len() % horizon != 0 {
            return Err(Error::shape("metric", format!("{} points do not split into rows of {horizon}", y.len())));
        }
        let n = y.len() / horizon;
        let mut acc = Metrics::default();
        for (a, b) in y.chunks(horizon).zip(yhat.chunks(horizon)) {
            acc.mse += mse(a, b)?;
            acc.mae += mae(a, b)?;
        }
        Ok(Metrics {
            mse: acc.mse / n as f64,
            mae: acc.mae / n as f64,
        })
    }

    pub fn mean(items: &[Metrics]) -> Metrics {
        let n = items.len().max(1) as f64;
        Metrics {
            mse: items.iter().map(|m| m.mse).sum::<f64>() / n,
            mae: items.iter().map(|m| m.mae).sum::<f64>() / n,
        }
    }
}

/// Running sums for metrics over many rows of equal length.
#[derive(Debug, Clone, Default)]
pub(crate) struct MetricSum {
    sq: f64,
    abs: f64,
    count: usize,
}

impl MetricSum {
    pub fn add(&mut self, y: &[f64], yhat: &[f64]) {
        for (a, b) in y.iter().zip(yhat) {
            self.sq += (a - b).powi(2);
            self.abs += (a - b).abs();
        }
        self.count += y.len();
    }

    pub fn finish(&self) -> Metrics {
        let n = self.count.max(1) as f64;
        Metrics {
            mse: self.sq / n,
            mae: self.abs / n,
        }
    }
}
