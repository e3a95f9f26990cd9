//! Quantile forecasters: the two-stage network (qLSTM, qDense), the linear
//! quantile regression baseline, losses and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod grid;
pub mod loss;
pub mod lqr;
pub mod network;

pub use checkpoint::{Checkpoint, ModelArtifact};
pub use config::{preset, ModelConfig, ModelKind, Preset, SearchRanges, StageConfig, DENSE_LOOKBACK, EVAL_HORIZON};
pub use grid::{monotone_repair, ForecastKind, QuantileForecast, QuantileGrid, TAUS};
pub use loss::{loss_multistep, loss_single, pinball};
pub use lqr::{fit_lqr, LqrModel, LqrOptions};
pub use network::{Batch, Prediction, TwoStageModel};
