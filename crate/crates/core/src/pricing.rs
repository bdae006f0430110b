//! Pricing identities: present values, synthetic longs, implied discount
//! factors, the arbitrage target and Black-Scholes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::asset::{OptionType, SeriesKey};
use crate::error::{CoreError, Result};
use crate::time::{year_fraction, TimePoint, TradingDate};

/// Value at `tau` of `face` paid at `maturity` under a constant continuously
/// compounded `rate` (per 252-day year).
pub fn present_value(face: f64, maturity: TimePoint, tau: TimePoint, rate: f64) -> Result<f64> {
    if maturity < tau {
        return Err(CoreError::Domain(format!(
            "maturity {} precedes valuation time {}",
            maturity.value(),
            tau.value()
        )));
    }
    Ok(face * (-rate * year_fraction(tau, maturity)).exp())
}

/// Price of one call long plus one put short.
pub fn synthetic_long_price(put_price: f64, call_price: f64) -> f64 {
    call_price - put_price
}

/// Cost of `1/K` underlying units minus `1/K` synthetic longs: the implied
/// price of a unit zero-coupon bond maturing with the option series.
pub fn discount_factor(spot: f64, sl_price: f64, strike: f64) -> Result<f64> {
    if !(strike > 0.0) {
        return Err(CoreError::Domain(format!("strike must be positive, got {strike}")));
    }
    Ok((spot - sl_price) / strike)
}

/// One synthetic long's discount factor against its maturity-group mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountObservation {
    pub series: SeriesKey,
    pub tau: TimePoint,
    pub delta: f64,
    pub delta_bar: f64,
    pub y: f64,
}

/// Arbitrage target `y = delta - mean(delta of the same maturity)`.
///
/// Each map entry holds the group over which the mean is taken; callers
/// restrict it to the universe assets traded on the prior date.
pub fn arbitrage_target(
    tau: TimePoint,
    deltas_by_maturity: &BTreeMap<TradingDate, Vec<(SeriesKey, f64)>>,
) -> Result<Vec<DiscountObservation>> {
    let mut out = Vec::new();
    for (expiry, group) in deltas_by_maturity {
        if group.is_empty() {
            return Err(CoreError::Empty(format!("maturity group {expiry} has no assets")));
        }
        let mean = group.iter().map(|(_, d)| d).sum::<f64>() / group.len() as f64;
        for &(series, delta) in group {
            out.push(DiscountObservation {
                series,
                tau,
                delta,
                delta_bar: mean,
                y: delta - mean,
            });
        }
    }
    out.sort_by(|a, b| a.series.cmp(&b.series));
    Ok(out)
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Black-Scholes price of a European option; `years` is time to maturity.
pub fn black_scholes(
    kind: OptionType,
    spot: f64,
    strike: f64,
    years: f64,
    rate: f64,
    vol: f64,
) -> f64 {
    let df = (-rate * years).exp();
    if years <= 0.0 || vol <= 0.0 {
        let fwd_intrinsic = match kind {
            OptionType::Call => spot - strike * df,
            OptionType::Put => strike * df - spot,
        };
        return fwd_intrinsic.max(0.0);
    }
    let sqrt_t = years.sqrt();
    let d1 = ((spot / strike).ln() + (rate + 0.5 * vol * vol) * years) / (vol * sqrt_t);
    let d2 = d1 - vol * sqrt_t;
    match kind {
        OptionType::Call => spot * norm_cdf(d1) - strike * df * norm_cdf(d2),
        OptionType::Put => strike * df * norm_cdf(-d2) - spot * norm_cdf(-d1),
    }
}

pub const IV_LOWER: f64 = 1e-4;
pub const IV_UPPER: f64 = 5.0;

/// Black-Scholes implied volatility by bisection on `[1e-4, 5]`.
///
/// Fails when the price is not strictly inside the no-arbitrage band or is
/// not attainable by a volatility in the bracket.
pub fn implied_vol_years(
    kind: OptionType,
    price: f64,
    spot: f64,
    strike: f64,
    years: f64,
    rate: f64,
) -> Result<f64> {
    if !(years > 0.0) {
        return Err(CoreError::ImpliedVol("non-positive time to maturity".into()));
    }
    if !(spot > 0.0 && strike > 0.0 && price.is_finite()) {
        return Err(CoreError::ImpliedVol("non-positive spot or strike".into()));
    }
    let df = (-rate * years).exp();
    let (lower, upper) = match kind {
        OptionType::Call => ((spot - strike * df).max(0.0), spot),
        OptionType::Put => ((strike * df - spot).max(0.0), strike * df),
    };
    if price <= lower || price >= upper {
        return Err(CoreError::ImpliedVol(format!(
            "price {price} outside ({lower}, {upper})"
        )));
    }
    let f = |v: f64| black_scholes(kind, spot, strike, years, rate, v) - price;
    let (mut lo, mut hi) = (IV_LOWER, IV_UPPER);
    if f(lo) > 0.0 || f(hi) < 0.0 {
        return Err(CoreError::ImpliedVol(format!(
            "price {price} not attained for vol in [{IV_LOWER}, {IV_UPPER}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Implied volatility between two time points on the trading-date axis.
pub fn implied_volatility(
    kind: OptionType,
    price: f64,
    spot: f64,
    strike: f64,
    tau: TimePoint,
    maturity: TimePoint,
    rate: f64,
) -> Result<f64> {
    if maturity <= tau {
        return Err(CoreError::ImpliedVol("option has expired".into()));
    }
    implied_vol_years(kind, price, spot, strike, year_fraction(tau, maturity), rate)
}
