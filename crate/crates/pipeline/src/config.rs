//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use pcparb_core::backtest::{BacktestConfig, ReturnBase};
use pcparb_core::chain::ChainSchema;
use pcparb_core::slsa::PositionKind;
use pcparb_core::synthetic::SyntheticConfig;
use pcparb_core::time::IntradayClock;
use pcparb_neural::Arch;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::trainer::TrainConfig;

/// The bundled desk-scale synthetic configuration.
pub const BUNDLED_CONFIG: &str = include_str!("../configs/synthetic.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Chain file to read instead of the simulated one.
    pub path: Option<PathBuf>,
    pub schema: ChainSchema,
    /// Risk-free rate for implied volatilities of file data.
    pub rate: f64,
    /// Intraday marks of file data.
    pub clock: IntradayClock,
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            schema: ChainSchema::default(),
            rate: 0.03,
            clock: IntradayClock::default(),
            synthetic: SyntheticConfig {
                n_dates: 600,
                arb_noise_scale: 0.002,
                arb_ar1: 0.9,
                ..SyntheticConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// First fit date `t_1`.
    pub first_fit: u32,
    /// Trading days between consecutive fit dates.
    pub fit_every: u32,
    pub p_val: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            first_fit: 300,
            fit_every: 150,
            p_val: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UniverseConfig {
    pub p_univ: usize,
    /// Maximum same-maturity strike gap; twice the strike grid step when unset.
    pub dk_max: Option<f64>,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        Self {
            p_univ: 12,
            dk_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub p_dg: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { p_dg: 1.0 / 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestSection {
    pub cost_rate: f64,
    pub return_base: ReturnBase,
    pub strategies: Vec<PositionKind>,
    /// Architecture whose predictions are traded.
    pub model: Arch,
    pub cosine_window: usize,
    /// Window of the rolling MSE series.
    pub mse_window: usize,
}

impl Default for BacktestSection {
    fn default() -> Self {
        Self {
            cost_rate: 0.0009,
            return_base: ReturnBase::Gross,
            strategies: vec![PositionKind::SA, PositionKind::BM1, PositionKind::BM2],
            model: Arch::Rnconv,
            cosine_window: 63,
            mse_window: 63,
        }
    }
}

impl BacktestSection {
    pub fn config(&self) -> BacktestConfig {
        BacktestConfig {
            cost_rate: self.cost_rate,
            return_base: self.return_base,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Run seed; it replaces the seeds of the synthetic market, the splits
    /// and training.
    pub seed: u64,
    pub data: DataConfig,
    pub splits: SplitConfig,
    pub universe: UniverseConfig,
    pub graphs: GraphConfig,
    pub train: TrainConfig,
    pub backtest: BacktestSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 7,
            data: DataConfig::default(),
            splits: SplitConfig::default(),
            universe: UniverseConfig::default(),
            graphs: GraphConfig::default(),
            train: TrainConfig::default(),
            backtest: BacktestSection::default(),
        };
        cfg.set_seed(cfg.seed);
        cfg
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text)?;
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn bundled() -> Self {
        Self::from_toml(BUNDLED_CONFIG).expect("bundled configuration parses")
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.data.synthetic.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.universe.p_univ < 2 {
            return bad(format!("p_univ must be at least 2, got {}", self.universe.p_univ));
        }
        if !(0.0..=1.0).contains(&self.graphs.p_dg) {
            return bad(format!("p_dg must lie in [0, 1], got {}", self.graphs.p_dg));
        }
        if self.splits.fit_every == 0 {
            return bad("fit_every must be positive".into());
        }
        if !(self.backtest.cost_rate >= 0.0) {
            return bad("cost_rate must be non-negative".into());
        }
        if self.backtest.strategies.contains(&PositionKind::LS) {
            return bad("LS is not a tradable strategy".into());
        }
        if self.data.path.is_none() {
            self.data.synthetic.validate()?;
        }
        self.train.validate()
    }

    /// Fit dates `first_fit, first_fit + fit_every, ...` before `last`.
    pub fn fit_dates(&self, last: u32) -> Vec<u32> {
        let s = &self.splits;
        (0..)
            .map(|i| s.first_fit + i * s.fit_every)
            .take_while(|d| *d < last)
            .collect()
    }

    /// Rate and intraday clock used for features.
    pub fn market_conventions(&self) -> (f64, IntradayClock) {
        match self.data.path {
            Some(_) => (self.data.rate, self.data.clock),
            None => (self.data.synthetic.rate, self.data.synthetic.clock()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_parses_and_seeds_propagate() {
        let cfg = PipelineConfig::bundled();
        assert_eq!(cfg.data.synthetic.seed, cfg.seed);
        assert_eq!(cfg.train.seed, cfg.seed);
        assert_eq!(cfg.fit_dates(600), vec![300, 450]);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(PipelineConfig::from_toml("[universe]\np_univ = 1").is_err());
        assert!(PipelineConfig::from_toml("[backtest]\nstrategies = [\"LS\"]").is_err());
        assert!(PipelineConfig::from_toml("[graphs]\np_dg = 2.0").is_err());
    }
}
