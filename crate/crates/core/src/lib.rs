//! Quantile-based return-distribution forecasting.

pub mod dataset;
pub mod dist;
pub mod error;
pub mod evalrep;
pub mod features;
pub mod ingest;
pub mod manifest;
pub mod pipeline;
pub mod plot;
pub mod quantmodels;
pub mod stats;
pub mod synth;
pub mod train;
pub mod vol;

pub use error::{QuantError, Result};
