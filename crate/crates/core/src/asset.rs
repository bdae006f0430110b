//! Instrument identifiers.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::time::TradingDate;

/// Asset classes handled by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AssetKind {
    /// Underlying instrument.
    UI,
    /// European put.
    PT,
    /// European call.
    CL,
    /// Synthetic long: one long call, one short put at the same maturity and strike.
    SL,
    /// Synthetic long-short combination.
    LS,
    /// Synthetic long-short arbitrage combination.
    SA,
    /// Risk-free asset.
    RF,
}

impl AssetKind {
    pub fn code(self) -> &'static str {
        match self {
            AssetKind::UI => "UI",
            AssetKind::PT => "PT",
            AssetKind::CL => "CL",
            AssetKind::SL => "SL",
            AssetKind::LS => "LS",
            AssetKind::SA => "SA",
            AssetKind::RF => "RF",
        }
    }

    pub fn parse(code: &str) -> Result<Self> {
        Ok(match code.trim() {
            "UI" => AssetKind::UI,
            "PT" | "P" | "put" => AssetKind::PT,
            "CL" | "C" | "call" => AssetKind::CL,
            "SL" => AssetKind::SL,
            "LS" => AssetKind::LS,
            "SA" => AssetKind::SA,
            "RF" => AssetKind::RF,
            other => return Err(CoreError::Domain(format!("unknown asset type `{other}`"))),
        })
    }

    /// Whether this kind is parameterised by a maturity and a strike.
    pub fn has_contract(self) -> bool {
        matches!(self, AssetKind::PT | AssetKind::CL | AssetKind::SL)
    }
}

/// Strike price with a total order, so it can key maps.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Strike(f64);

impl Strike {
    pub fn new(value: f64) -> Result<Self> {
        if !(value.is_finite() && value > 0.0) {
            return Err(CoreError::Domain(format!("strike must be positive, got {value}")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl PartialEq for Strike {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}

impl Eq for Strike {}

impl PartialOrd for Strike {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Strike {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Hash for Strike {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

impl fmt::Display for Strike {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An option series: expiry date and strike. Orders lexicographically by
/// `(expiry, strike)`, which is the node and position ordering everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeriesKey {
    pub expiry: TradingDate,
    pub strike: Strike,
}

impl SeriesKey {
    pub fn new(expiry: TradingDate, strike: f64) -> Result<Self> {
        Ok(Self {
            expiry,
            strike: Strike::new(strike)?,
        })
    }

    pub fn k(&self) -> f64 {
        self.strike.value()
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(M={}, K={})", self.expiry, self.strike)
    }
}

/// A typed asset. Options and synthetic longs carry a series; the other
/// kinds do not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AssetId {
    pub kind: AssetKind,
    pub series: Option<SeriesKey>,
}

impl AssetId {
    pub fn new(kind: AssetKind, series: Option<SeriesKey>) -> Result<Self> {
        if kind.has_contract() != series.is_some() {
            return Err(CoreError::Domain(format!(
                "asset kind {} {} a (maturity, strike) pair",
                kind.code(),
                if kind.has_contract() { "requires" } else { "does not take" }
            )));
        }
        Ok(Self { kind, series })
    }

    pub fn underlying() -> Self {
        Self {
            kind: AssetKind::UI,
            series: None,
        }
    }

    pub fn option(kind: OptionType, series: SeriesKey) -> Self {
        Self {
            kind: kind.asset_kind(),
            series: Some(series),
        }
    }

    pub fn synthetic_long(series: SeriesKey) -> Self {
        Self {
            kind: AssetKind::SL,
            series: Some(series),
        }
    }
}

impl fmt::Display for AssetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.series {
            Some(s) => write!(f, "({}; {}, {})", self.kind.code(), s.expiry, s.strike),
            None => write!(f, "({})", self.kind.code()),
        }
    }
}

/// Put or call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OptionType {
    Put,
    Call,
}

impl OptionType {
    pub fn asset_kind(self) -> AssetKind {
        match self {
            OptionType::Put => AssetKind::PT,
            OptionType::Call => AssetKind::CL,
        }
    }

    /// Payoff at maturity for one contract.
    pub fn payoff(self, spot: f64, strike: f64) -> f64 {
        match self {
            OptionType::Put => (strike - spot).max(0.0),
            OptionType::Call => (spot - strike).max(0.0),
        }
    }
}
