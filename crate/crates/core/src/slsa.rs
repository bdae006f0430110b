//! Synthetic-long-short positions, their constraint algebra and cash flows.
//!
//! A position holds `n_a` synthetic longs per universe asset and `m` units of
//! the underlying with `m + sum(n) = 0`. An arbitrage position (SA)
//! additionally has, for every maturity `M`, `sum n_a = 0` and
//! `sum K_a n_a = 0` over the assets of maturity `M`. The SA position closest
//! to a prediction vector is its orthogonal projection onto the null space of
//! the matrix stacking those two rows per maturity.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::asset::SeriesKey;
use crate::chain::ChainTable;
use crate::error::{CoreError, Result};
use crate::graph::open_deltas;
use crate::time::{Mark, TradingDate};

/// Relative singular-value cutoff below which a direction is treated as null.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PositionKind {
    LS,
    SA,
    BM1,
    BM2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub universe: Vec<SeriesKey>,
    pub n: Vec<f64>,
    pub m: f64,
    pub kind: PositionKind,
}

impl Position {
    pub fn zero(universe: Vec<SeriesKey>, kind: PositionKind) -> Self {
        let n = vec![0.0; universe.len()];
        Self { universe, n, m: 0.0, kind }
    }

    pub fn gross(&self) -> f64 {
        self.n.iter().map(|x| x.abs()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.n.iter().all(|x| *x == 0.0)
    }

    /// Largest absolute per-maturity contract sum and strike-weighted sum.
    pub fn maturity_residuals(&self) -> (f64, f64) {
        let mut sums: BTreeMap<TradingDate, (f64, f64)> = BTreeMap::new();
        for (s, n) in self.universe.iter().zip(&self.n) {
            let e = sums.entry(s.expiry).or_default();
            e.0 += n;
            e.1 += s.k() * n;
        }
        sums.values()
            .fold((0.0, 0.0), |(a, b), (x, y)| (f64::max(a, x.abs()), f64::max(b, y.abs())))
    }

    /// Concentration `sum (|n_a| / sum |n|)^2`; `None` for the zero position.
    pub fn hhi(&self) -> Option<f64> {
        let g = self.gross();
        (g > 0.0).then(|| self.n.iter().map(|x| (x.abs() / g).powi(2)).sum())
    }
}

/// Constraint rows and an orthonormal null-space basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMatrix {
    pub universe: Vec<SeriesKey>,
    /// `2 |maturities| x |universe|`: per maturity an indicator row followed
    /// by a strike-weighted row.
    pub a: DMatrix<f64>,
    /// `|universe| x dim Null(A)` with orthonormal columns.
    pub null_basis: DMatrix<f64>,
}

fn check_sorted(universe: &[SeriesKey]) -> Result<()> {
    if universe.is_empty() {
        return Err(CoreError::Empty("universe".into()));
    }
    if universe.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CoreError::Domain("universe must be strictly (maturity, strike) ordered".into()));
    }
    Ok(())
}

pub fn build_constraints(universe: &[SeriesKey]) -> Result<ConstraintMatrix> {
    check_sorted(universe)?;
    let mut maturities: Vec<TradingDate> = universe.iter().map(|s| s.expiry).collect();
    maturities.dedup();
    let n = universe.len();
    let mut a = DMatrix::zeros(2 * maturities.len(), n);
    for (j, s) in universe.iter().enumerate() {
        let g = maturities.binary_search(&s.expiry).unwrap();
        a[(2 * g, j)] = 1.0;
        a[(2 * g + 1, j)] = s.k();
    }
    let null_basis = null_space(&a);
    Ok(ConstraintMatrix {
        universe: universe.to_vec(),
        a,
        null_basis,
    })
}

/// Orthonormal basis of `Null(a)`: the row space comes from the SVD of `a^T`,
/// and the complement from the unit eigenvalues of `I - Q Q^T`.
fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    let svd = a.transpose().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > RANK_TOL * smax)
        .map(|(i, _)| i)
        .collect();
    let q = u.select_columns(&keep);
    let comp = DMatrix::identity(n, n) - &q * q.transpose();
    let eig = SymmetricEigen::new(comp);
    let mut cols: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    cols.sort_unstable();
    let mut basis = eig.eigenvectors.select_columns(&cols);
    // fix signs for reproducibility: first non-negligible entry positive
    for mut c in basis.column_iter_mut() {
        if let Some(x) = c.iter().find(|x| x.abs() > 1e-12).copied() {
            if x < 0.0 {
                c.neg_mut();
            }
        }
    }
    basis
}

fn check_len(v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(CoreError::DimensionMismatch {
            expected: n,
            actual: v.len(),
        });
    }
    Ok(())
}

/// Project a prediction vector onto the SA constraint set.
pub fn slsa_project(v_hat: &[f64], cm: &ConstraintMatrix) -> Result<Position> {
    check_len(v_hat, cm.universe.len())?;
    let nb = &cm.null_basis;
    let n = if nb.ncols() == 0 {
        vec![0.0; v_hat.len()]
    } else {
        let v = DVector::from_column_slice(v_hat);
        let gram = nb.transpose() * nb;
        let coef = gram
            .cholesky()
            .ok_or_else(|| CoreError::Domain("singular null-space Gram matrix".into()))?
            .solve(&(nb.transpose() * v));
        (nb * coef).iter().copied().collect()
    };
    Ok(Position {
        universe: cm.universe.clone(),
        n,
        m: 0.0,
        kind: PositionKind::SA,
    })
}

/// Benchmark projections: BM1 demeans each maturity block, BM2 the whole vector.
pub fn bm_project(v_hat: &[f64], universe: &[SeriesKey], kind: PositionKind) -> Result<Position> {
    check_len(v_hat, universe.len())?;
    let n = match kind {
        PositionKind::BM1 => {
            let mut sums: BTreeMap<TradingDate, (f64, usize)> = BTreeMap::new();
            for (s, v) in universe.iter().zip(v_hat) {
                let e = sums.entry(s.expiry).or_default();
                e.0 += v;
                e.1 += 1;
            }
            universe
                .iter()
                .zip(v_hat)
                .map(|(s, v)| {
                    let (sum, c) = sums[&s.expiry];
                    v - sum / c as f64
                })
                .collect()
        }
        PositionKind::BM2 => {
            let mean = v_hat.iter().sum::<f64>() / v_hat.len().max(1) as f64;
            v_hat.iter().map(|v| v - mean).collect()
        }
        other => {
            return Err(CoreError::Domain(format!("{other:?} is not a benchmark projection")));
        }
    };
    Ok(Position {
        universe: universe.to_vec(),
        n,
        m: 0.0,
        kind,
    })
}

/// Scale so the long side totals one contract. Returns the position and
/// whether scaling was possible (false for a position without longs).
pub fn normalize_one_long_one_short(position: &Position) -> (Position, bool) {
    let longs: f64 = position.n.iter().filter(|x| **x > 0.0).sum();
    if !(longs > 0.0) {
        return (position.clone(), false);
    }
    let mut out = position.clone();
    for x in &mut out.n {
        *x /= longs;
    }
    out.m /= longs;
    (out, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    Inception,
    Maturity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CashFlow {
    pub date: TradingDate,
    pub kind: FlowKind,
    pub amount: f64,
}

/// Inception flow `sum n_a K_a y_a` at the open of `t` for an SA position.
pub fn slsa_inception(position: &Position, chain: &ChainTable, t: TradingDate) -> Result<f64> {
    let od = open_deltas(chain, &position.universe, t);
    let mut flow = 0.0;
    for ((s, n), d) in position.universe.iter().zip(&position.n).zip(od) {
        let (delta, delta_bar) =
            d.ok_or_else(|| CoreError::MissingQuote(format!("{s} at the open of {t}")))?;
        flow += n * s.k() * (delta - delta_bar);
    }
    Ok(flow)
}

/// Inception flow `sum n_a K_a (y_a + delta_bar) = sum n_a K_a delta_a`.
pub fn bm_inception(position: &Position, chain: &ChainTable, t: TradingDate) -> Result<f64> {
    let mut flow = 0.0;
    for (s, n) in position.universe.iter().zip(&position.n) {
        let delta = chain
            .delta(t, s, Mark::Open)
            .ok_or_else(|| CoreError::MissingQuote(format!("{s} at the open of {t}")))?;
        flow += n * s.k() * delta;
    }
    Ok(flow)
}

/// Maturity flows per expiry for a position. SA positions pay nothing;
/// BM1 pays `-sum n_a K_a`; BM2 and LS pay `sum n_a (S_M - K_a)`.
pub fn maturity_flows(position: &Position, settle: impl Fn(TradingDate) -> f64) -> Vec<CashFlow> {
    let mut by_m: BTreeMap<TradingDate, Vec<(f64, f64)>> = BTreeMap::new();
    for (s, n) in position.universe.iter().zip(&position.n) {
        by_m.entry(s.expiry).or_default().push((*n, s.k()));
    }
    by_m.into_iter()
        .map(|(m, legs)| {
            let amount = match position.kind {
                PositionKind::SA => 0.0,
                PositionKind::BM1 => legs.iter().map(|(n, k)| -n * k).sum(),
                PositionKind::BM2 | PositionKind::LS => {
                    let s_m = settle(m);
                    legs.iter().map(|(n, k)| n * (s_m - k)).sum()
                }
            };
            CashFlow {
                date: m,
                kind: FlowKind::Maturity,
                amount,
            }
        })
        .collect()
}

/// Underlying close on `expiry`, or the last available close when the data
/// ends earlier (flagged by the boolean).
pub fn settlement_spot(chain: &ChainTable, expiry: TradingDate) -> Option<(f64, bool)> {
    if let Some(s) = chain.spot(expiry, Mark::Close) {
        return Some((s, false));
    }
    let last = chain.last_date()?;
    (last < expiry).then(|| (chain.spot(last, Mark::Close).unwrap(), true))
}

fn settle_fn(chain: &ChainTable) -> impl Fn(TradingDate) -> f64 + '_ {
    move |m| settlement_spot(chain, m).map_or(f64::NAN, |x| x.0)
}

/// All flows of an SA position opened at the open of `t`.
pub fn slsa_cashflows(position: &Position, chain: &ChainTable, t: TradingDate) -> Result<Vec<CashFlow>> {
    let mut flows = vec![CashFlow {
        date: t,
        kind: FlowKind::Inception,
        amount: slsa_inception(position, chain, t)?,
    }];
    flows.extend(maturity_flows(position, settle_fn(chain)));
    Ok(flows)
}

/// All flows of a benchmark position opened at the open of `t`.
pub fn bm_cashflows(position: &Position, chain: &ChainTable, t: TradingDate) -> Result<Vec<CashFlow>> {
    let mut flows = vec![CashFlow {
        date: t,
        kind: FlowKind::Inception,
        amount: bm_inception(position, chain, t)?,
    }];
    flows.extend(maturity_flows(position, settle_fn(chain)));
    Ok(flows)
}

/// Market value `m S + sum n_a P(SL)` at a daily mark.
pub fn position_price(position: &Position, chain: &ChainTable, date: TradingDate, mark: Mark) -> Option<f64> {
    let mut v = position.m * chain.spot(date, mark)?;
    for (s, n) in position.universe.iter().zip(&position.n) {
        v += n * chain.sl_price(date, s, mark)?;
    }
    Some(v)
}
