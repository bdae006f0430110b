//! Hold-to-maturity daily backtest and performance metrics.
//!
//! Each morning the predictions `v_a = K_a * y_hat_a` over the day's universe
//! are projected onto the strategy's constraint set, scaled to one long and
//! one short contract and opened in the opening auction. The inception flow
//! is booked immediately, a proportional cost is charged on the open
//! premiums of both legs, and maturity flows are booked on each expiry. Flows
//! due after the last date of data are booked on that date using its close
//! as the settlement spot and flagged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::asset::{OptionType, SeriesKey};
use crate::chain::ChainTable;
use crate::error::{CoreError, Result};
use crate::slsa::{
    bm_inception, bm_project, build_constraints, maturity_flows, normalize_one_long_one_short,
    settlement_spot, slsa_inception, slsa_project, FlowKind, Position, PositionKind,
};
use crate::time::{Mark, TradingDate};

/// Denominator of the daily P&L-per-contract return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReturnBase {
    /// Gross contracts `sum |n|` opened that day.
    Gross,
    /// The normalised two contracts (one long, one short).
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub cost_rate: f64,
    pub return_base: ReturnBase,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            cost_rate: 0.0009,
            return_base: ReturnBase::Gross,
        }
    }
}

/// One dated flow with its originating position date.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerFlow {
    pub opened: TradingDate,
    pub paid: TradingDate,
    pub kind: FlowKind,
    pub amount: f64,
    /// Settled at the last close of the data rather than at maturity.
    pub proxied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub date: TradingDate,
    pub position: Option<Position>,
    pub inception: f64,
    pub maturity: f64,
    pub cost: f64,
    pub pnl: f64,
    pub cumulative: f64,
    pub contracts: f64,
    pub cosine: Option<f64>,
    pub hhi: Option<f64>,
    /// `sum |n_a| |S_o(t) - K_a|`.
    pub moneyness_exposure: f64,
    /// `sum |n_a| (M_a - t)`.
    pub maturity_exposure: f64,
    /// The projection left nothing to trade.
    pub zero_position: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestLedger {
    pub strategy: PositionKind,
    pub config: BacktestConfig,
    pub days: Vec<DayRecord>,
    pub flows: Vec<LedgerFlow>,
}

impl BacktestLedger {
    pub fn total_pnl(&self) -> f64 {
        self.days.iter().map(|d| d.pnl).sum()
    }

    /// Daily P&L-per-contract returns on days a position was opened.
    pub fn returns(&self) -> Vec<f64> {
        self.days
            .iter()
            .filter(|d| d.contracts > 0.0)
            .map(|d| match self.config.return_base {
                ReturnBase::Gross => d.pnl / d.contracts,
                ReturnBase::Normalized => d.pnl / 2.0,
            })
            .collect()
    }

    /// Maturity flows booked per date, including zero SA flows.
    pub fn maturity_flows(&self) -> Vec<&LedgerFlow> {
        self.flows.iter().filter(|f| f.kind == FlowKind::Maturity).collect()
    }
}

/// Run the daily loop. `universes` and `predictions` are keyed by decision
/// date; prediction vectors follow the sorted universe order.
pub fn run_backtest(
    chain: &ChainTable,
    universes: &BTreeMap<TradingDate, Vec<SeriesKey>>,
    predictions: &BTreeMap<TradingDate, Vec<f64>>,
    strategy: PositionKind,
    config: BacktestConfig,
) -> Result<BacktestLedger> {
    if !(config.cost_rate >= 0.0) {
        return Err(CoreError::Config("cost rate must be non-negative".into()));
    }
    let last = chain
        .last_date()
        .ok_or_else(|| CoreError::Empty("chain has no dates".into()))?;
    let Some(&first) = predictions.keys().next() else {
        return Ok(BacktestLedger {
            strategy,
            config,
            days: Vec::new(),
            flows: Vec::new(),
        });
    };

    let mut flows = Vec::new();
    let mut opened: BTreeMap<TradingDate, (Position, f64, f64, Option<f64>)> = BTreeMap::new();
    for (&t, y_hat) in predictions {
        let universe = universes
            .get(&t)
            .ok_or_else(|| CoreError::MissingQuote(format!("universe for date {t}")))?;
        if universe.len() != y_hat.len() {
            return Err(CoreError::DimensionMismatch {
                expected: universe.len(),
                actual: y_hat.len(),
            });
        }
        if universe.is_empty() {
            continue;
        }
        let v_hat: Vec<f64> = universe.iter().zip(y_hat).map(|(s, y)| s.k() * y).collect();
        let raw = match strategy {
            PositionKind::SA => slsa_project(&v_hat, &build_constraints(universe)?)?,
            PositionKind::BM1 | PositionKind::BM2 => bm_project(&v_hat, universe, strategy)?,
            PositionKind::LS => {
                return Err(CoreError::Config("LS is not a tradable strategy".into()));
            }
        };
        let (pos, ok) = normalize_one_long_one_short(&raw);
        if !ok {
            log::debug!("date {t}: projection left no position");
            opened.insert(t, (Position::zero(universe.clone(), strategy), 0.0, 0.0, None));
            continue;
        }
        let inception = match strategy {
            PositionKind::SA => slsa_inception(&pos, chain, t)?,
            _ => bm_inception(&pos, chain, t)?,
        };
        let mut premium = 0.0;
        for (s, n) in pos.universe.iter().zip(&pos.n) {
            for kind in [OptionType::Put, OptionType::Call] {
                let q = chain
                    .quote(t, kind, s)
                    .ok_or_else(|| CoreError::MissingQuote(format!("{kind:?} {s} on {t}")))?;
                premium += n.abs() * q.prices.open;
            }
        }
        let cost = config.cost_rate * premium;
        flows.push(LedgerFlow {
            opened: t,
            paid: t,
            kind: FlowKind::Inception,
            amount: inception,
            proxied: false,
        });
        let settle = |m: TradingDate| settlement_spot(chain, m).map_or(f64::NAN, |x| x.0);
        for f in maturity_flows(&pos, settle) {
            let proxied = f.date > last;
            flows.push(LedgerFlow {
                opened: t,
                paid: f.date.min(last),
                kind: FlowKind::Maturity,
                amount: f.amount,
                proxied,
            });
        }
        let cosine = cosine(&v_hat, &pos.n);
        opened.insert(t, (pos, inception, cost, cosine));
    }

    let mut days = Vec::new();
    let mut cumulative = 0.0;
    let mut by_paid: BTreeMap<TradingDate, f64> = BTreeMap::new();
    for f in &flows {
        if f.kind == FlowKind::Maturity {
            *by_paid.entry(f.paid).or_default() += f.amount;
        }
    }
    for t in chain.dates().into_iter().filter(|d| *d >= first) {
        let maturity = by_paid.get(&t).copied().unwrap_or(0.0);
        let (position, inception, cost, cos) = match opened.remove(&t) {
            Some((p, i, c, cos)) => (Some(p), i, c, cos),
            None => (None, 0.0, 0.0, None),
        };
        let pnl = inception + maturity - cost;
        cumulative += pnl;
        let spot = chain.spot(t, Mark::Open).unwrap_or(f64::NAN);
        let (contracts, hhi, mon, ttm, zero) = match &position {
            Some(p) => {
                let mon = p.universe.iter().zip(&p.n).map(|(s, n)| n.abs() * (spot - s.k()).abs()).sum();
                let ttm = p
                    .universe
                    .iter()
                    .zip(&p.n)
                    .map(|(s, n)| n.abs() * (s.expiry as f64 - t as f64))
                    .sum();
                (p.gross(), p.hhi(), mon, ttm, p.is_zero())
            }
            None => (0.0, None, 0.0, 0.0, false),
        };
        days.push(DayRecord {
            date: t,
            position,
            inception,
            maturity,
            cost,
            pnl,
            cumulative,
            contracts,
            cosine: cos,
            hhi,
            moneyness_exposure: mon,
            maturity_exposure: ttm,
            zero_position: zero,
        });
    }
    Ok(BacktestLedger {
        strategy,
        config,
        days,
        flows,
    })
}

/// Cosine similarity; `None` when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
}

/// Trailing rolling mean of per-date cosines over `window` observations.
/// Dates without a defined cosine are skipped; early dates average over the
/// observations available so far.
pub fn cosine_series(
    days: &[(TradingDate, Option<f64>)],
    window: usize,
) -> Vec<(TradingDate, f64, f64)> {
    let window = window.max(1);
    let mut buf: std::collections::VecDeque<f64> = Default::default();
    let mut out = Vec::new();
    for (d, c) in days {
        let Some(c) = c else { continue };
        buf.push_back(*c);
        if buf.len() > window {
            buf.pop_front();
        }
        out.push((*d, *c, buf.iter().sum::<f64>() / buf.len() as f64));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `None` when undefined (fewer than two returns or zero variance).
    pub information_ratio: Option<f64>,
    /// `None` when there is no downside.
    pub sortino_ratio: Option<f64>,
    pub hhi_mean: Option<f64>,
    pub effective_n: Option<f64>,
    /// Mean over position dates of `sum |n| |S - K| / sum |n|`.
    pub avg_abs_moneyness: Option<f64>,
    /// Mean over position dates of `sum |n| (M - t) / sum |n|`.
    pub avg_days_to_maturity: Option<f64>,
    pub total_pnl: f64,
    pub n_return_days: usize,
    pub mean_return: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn information_ratio(r: &[f64]) -> Option<f64> {
    if r.len() < 2 {
        return None;
    }
    let m = mean(r)?;
    let var = r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (r.len() - 1) as f64;
    (var > 0.0).then(|| m / var.sqrt())
}

/// Mean over downside deviation `sqrt(mean(min(r, 0)^2))`.
pub fn sortino_ratio(r: &[f64]) -> Option<f64> {
    let m = mean(r)?;
    let dd = (r.iter().map(|x| x.min(0.0).powi(2)).sum::<f64>() / r.len() as f64).sqrt();
    (dd > 0.0).then(|| m / dd)
}

pub fn compute_metrics(ledger: &BacktestLedger) -> Result<MetricsReport> {
    if ledger.days.len() < 2 {
        return Err(CoreError::Empty("metrics need at least two ledger dates".into()));
    }
    let r = ledger.returns();
    let hhis: Vec<f64> = ledger.days.iter().filter_map(|d| d.hhi).collect();
    let hhi_mean = mean(&hhis);
    let active: Vec<&DayRecord> = ledger.days.iter().filter(|d| d.contracts > 0.0).collect();
    let mon: Vec<f64> = active.iter().map(|d| d.moneyness_exposure / d.contracts).collect();
    let ttm: Vec<f64> = active.iter().map(|d| d.maturity_exposure / d.contracts).collect();
    Ok(MetricsReport {
        information_ratio: information_ratio(&r),
        sortino_ratio: sortino_ratio(&r),
        effective_n: hhi_mean.filter(|h| *h > 0.0).map(|h| 1.0 / h),
        hhi_mean,
        avg_abs_moneyness: mean(&mon),
        avg_days_to_maturity: mean(&ttm),
        total_pnl: ledger.total_pnl(),
        n_return_days: r.len(),
        mean_return: mean(&r),
    })
}
