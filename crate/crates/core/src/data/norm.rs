use serde::{Deserialize, Serialize};

/// Stabilizer added to the instance standard deviation.
pub const NORM_EPS: f64 = 1e-5;

/// Mean and population standard deviation of one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

/// `(x - mean) / (std + eps)` with statistics of `x` itself.
pub fn instance_normalize(x: &[f64]) -> (Vec<f64>, NormStats) {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let stats = NormStats { mean, std: var.sqrt() };
    let denom = stats.std + NORM_EPS;
    (x.iter().map(|v| (v - mean) / denom).collect(), stats)
}

/// Exact inverse of [`instance_normalize`].
pub fn instance_denormalize(y: &[f64], stats: NormStats) -> Vec<f64> {
    y.iter().map(|v| v * (stats.std + NORM_EPS) + stats.mean).collect()
}

/// Per-variate z-scoring fit on a training range, applied to the whole series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(values: &[Vec<f64>], range: std::ops::Range<usize>) -> Self {
        let (mean, std) = values
            .iter()
            .map(|col| {
                let seg = &col[range.clone()];
                let n = seg.len().max(1) as f64;
                let m = seg.iter().sum::<f64>() / n;
                let s = (seg.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
                (m, if s > 1e-12 { s } else { 1.0 })
            })
            .unzip();
        Self { mean, std }
    }

    pub fn identity(variates: usize) -> Self {
        Self {
            mean: vec![0.0; variates],
            std: vec![1.0; variates],
        }
    }

    pub fn apply(&self, variate: usize, x: f64) -> f64 {
        (x - self.mean[variate]) / self.std[variate]
    }

    pub fn invert(&self, variate: usize, x: f64) -> f64 {
        x * self.std[variate] + self.mean[variate]
    }
}
