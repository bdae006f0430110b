//! Walk-forward training, evaluation and the artifact pipeline.
//!
//! - [`stats`]: MSE and paired significance tests.
//! - [`trainer`]: grid search with parameter-count matching and early
//!   stopping, one round at a time.
//! - [`pipeline`]: tradability, universes, graphs, training, prediction,
//!   backtests and reports.
//! - [`artifacts`]: run-directory files and the end-to-end run.
//! - [`config`]: the TOML run configuration.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod stats;
pub mod trainer;

pub use config::PipelineConfig;
pub use error::{PipelineError, Result};
