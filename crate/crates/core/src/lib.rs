//! Core market algebra and trading machinery for put-call-parity arbitrage.
//!
//! The crate is organised bottom-up:
//!
//! - [`time`], [`asset`] and [`pricing`]: the trading-date time axis, instrument
//!   identifiers, present values, Black-Scholes and the discount-factor based
//!   arbitrage target.
//! - [`chain`], [`synthetic`], [`splits`] and [`scaler`]: option-chain ingestion,
//!   a seeded synthetic market, walk-forward splits and quantile feature scaling.
//! - [`tradability`] and [`universe`]: the radius-neighbour tradability model and
//!   the per-date binary universe program with its branch-and-bound solver.
//! - [`graph`]: per-date strike/maturity neighbour graphs and node features.
//! - [`slsa`]: constraint matrices, null-space projection and cash-flow accounting.
//! - [`backtest`]: the hold-to-maturity daily loop and performance metrics.

pub mod asset;
pub mod backtest;
pub mod chain;
pub mod error;
pub mod graph;
pub mod pricing;
pub mod scaler;
pub mod slsa;
pub mod splits;
pub mod synthetic;
pub mod time;
pub mod tradability;
pub mod universe;

pub use error::{CoreError, Result};
