//! Rolling inference, benchmark metrics and result export.

pub mod evaluate;
pub mod export;
pub mod metrics;
pub mod rollout;

pub use evaluate::{evaluate_horizons, naive_baseline, Baseline, EvalOptions, EvalTable, HorizonResult, BENCHMARK_HORIZONS};
pub use metrics::{mae, mse, Metrics};
pub use rollout::{iterations, rollout, rollout_batch, BatchRollout, ForecastResult, Renorm};
