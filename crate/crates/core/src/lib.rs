pub mod approx_hw;
pub mod cli;
pub mod distributions;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod mrf;

pub use error::{Error, Result};
