//! Long-horizon multivariate forecasting with a sparse mixture of heterogeneous experts.

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
