//! Seeded synthetic option market.
//!
//! The underlying follows a lognormal random walk with a few intraday steps
//! per day. Every listed put and call is priced by Black-Scholes at a single
//! pricing instant per date, evaluated at the day's open, high, low and close
//! underlying prices. Arbitrage enters through the put leg only: each series
//! carries a persistent AR(1) log-mispricing `eps` and its put prices are
//! multiplied by `exp(eps)`. With zero noise the market satisfies put-call
//! parity exactly.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::asset::{AssetId, OptionType, SeriesKey};
use crate::chain::{ChainTable, Ohlc, OptionQuote};
use crate::error::{CoreError, Result};
use crate::pricing::black_scholes;
use crate::time::{ClockTime, IntradayClock, TradingDate};

/// Prices below this floor are lifted to it so every quote stays positive.
const PRICE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_dates: u32,
    pub s0: f64,
    /// Annual drift of the underlying.
    pub drift: f64,
    /// Annual volatility, used both for the path and for option pricing.
    pub vol: f64,
    /// Continuously compounded annual risk-free rate.
    pub rate: f64,
    pub strike_step: f64,
    /// Strikes are listed within `spot * (1 +/- strike_range)`.
    pub strike_range: f64,
    /// Trading days between consecutive expiries.
    pub expiry_spacing: u32,
    /// Number of expiries listed at any date.
    pub n_maturities: u32,
    /// Intraday steps used to form highs and lows.
    pub intraday_steps: u32,
    /// Stationary standard deviation of the put log-mispricing.
    pub arb_noise_scale: f64,
    /// AR(1) persistence of the put log-mispricing.
    pub arb_ar1: f64,
    /// Moneyness `|S-K|/S` at which a leg trades with probability one half.
    pub traded_center: f64,
    /// Logistic width of the trading probability in moneyness.
    pub traded_width: f64,
    /// Wall-clock pricing instant shared by all four daily marks.
    pub pricing_time: ClockTime,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_dates: 300,
            s0: 100.0,
            drift: 0.05,
            vol: 0.2,
            rate: 0.03,
            strike_step: 2.5,
            strike_range: 0.15,
            expiry_spacing: 21,
            n_maturities: 2,
            intraday_steps: 6,
            arb_noise_scale: 0.0,
            arb_ar1: 0.9,
            traded_center: 0.06,
            traded_width: 0.015,
            pricing_time: ClockTime::new(9, 0, 0),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(m.to_string()));
        if self.n_dates < 2 {
            return bad("n_dates must be at least 2");
        }
        if !(self.s0 > 0.0 && self.vol > 0.0 && self.strike_step > 0.0 && self.strike_range > 0.0) {
            return bad("s0, vol, strike_step and strike_range must be positive");
        }
        if self.expiry_spacing == 0 || self.n_maturities == 0 {
            return bad("expiry_spacing and n_maturities must be positive");
        }
        if !(self.arb_noise_scale >= 0.0) {
            return bad("arb_noise_scale must be non-negative");
        }
        if !(self.arb_ar1 > -1.0 && self.arb_ar1 < 1.0) {
            return bad("arb_ar1 must lie in (-1, 1)");
        }
        if !(self.traded_width > 0.0) {
            return bad("traded_width must be positive");
        }
        Ok(())
    }

    /// The intraday clock matching the generator's pricing convention.
    pub fn clock(&self) -> IntradayClock {
        IntradayClock::single_mark(self.pricing_time)
    }

    /// Expiries listed on `date`: the next `n_maturities` expiry dates strictly
    /// after `date`.
    pub fn listed_expiries(&self, date: TradingDate) -> Vec<TradingDate> {
        let first = date / self.expiry_spacing + 1;
        (first..first + self.n_maturities)
            .map(|j| j * self.expiry_spacing)
            .collect()
    }

    fn trade_probability(&self, spot: f64, strike: f64) -> f64 {
        let m = (spot - strike).abs() / spot;
        1.0 / (1.0 + ((m - self.traded_center) / self.traded_width).exp())
    }
}

/// Generate a chain table. Deterministic given the configuration.
pub fn generate_synthetic_market(cfg: &SyntheticConfig) -> Result<ChainTable> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps = cfg.intraday_steps.max(1);
    let dt = 1.0 / 252.0 / (steps + 1) as f64;
    let step_drift = (cfg.drift - 0.5 * cfg.vol * cfg.vol) * dt;
    let step_vol = cfg.vol * dt.sqrt();
    let innovation = cfg.arb_noise_scale * (1.0 - cfg.arb_ar1 * cfg.arb_ar1).sqrt();

    let mut table = ChainTable::new();
    let mut strikes: BTreeMap<TradingDate, BTreeSet<i64>> = BTreeMap::new();
    let mut eps: BTreeMap<SeriesKey, f64> = BTreeMap::new();
    let mut prev_close = cfg.s0;

    for date in 1..=cfg.n_dates {
        // overnight move, then intraday steps
        let mut s = if date == 1 {
            cfg.s0
        } else {
            let z: f64 = rng.sample(StandardNormal);
            prev_close * (step_drift + step_vol * z).exp()
        };
        let open = s;
        let (mut high, mut low) = (s, s);
        for _ in 0..steps {
            let z: f64 = rng.sample(StandardNormal);
            s *= (step_drift + step_vol * z).exp();
            high = high.max(s);
            low = low.min(s);
        }
        let spot = Ohlc {
            open,
            high,
            low,
            close: s,
        };
        prev_close = s;
        table.insert_underlying(date, spot)?;

        let expiries = cfg.listed_expiries(date);
        strikes.retain(|e, _| *e > date);
        let lo_idx = (open * (1.0 - cfg.strike_range) / cfg.strike_step).ceil() as i64;
        let hi_idx = (open * (1.0 + cfg.strike_range) / cfg.strike_step).floor() as i64;
        for &e in &expiries {
            let set = strikes.entry(e).or_default();
            set.extend(lo_idx.max(1)..=hi_idx);
        }
        eps.retain(|k, _| k.expiry > date);

        for (&expiry, set) in &strikes {
            let years = (expiry - date) as f64 / 252.0;
            for &idx in set {
                let strike = idx as f64 * cfg.strike_step;
                let series = SeriesKey::new(expiry, strike)?;
                let e = match eps.get(&series) {
                    Some(&prev) => {
                        let z: f64 = rng.sample(StandardNormal);
                        cfg.arb_ar1 * prev + innovation * z
                    }
                    None => {
                        let z: f64 = rng.sample(StandardNormal);
                        cfg.arb_noise_scale * z
                    }
                };
                eps.insert(series, e);
                let put_mult = e.exp();
                let price = |kind: OptionType, s: f64| {
                    black_scholes(kind, s, strike, years, cfg.rate, cfg.vol).max(PRICE_FLOOR)
                };
                let put = Ohlc {
                    open: price(OptionType::Put, spot.open) * put_mult,
                    high: price(OptionType::Put, spot.low) * put_mult,
                    low: price(OptionType::Put, spot.high) * put_mult,
                    close: price(OptionType::Put, spot.close) * put_mult,
                };
                let call = Ohlc {
                    open: price(OptionType::Call, spot.open),
                    high: price(OptionType::Call, spot.high),
                    low: price(OptionType::Call, spot.low),
                    close: price(OptionType::Call, spot.close),
                };
                let p_trade = cfg.trade_probability(spot.close, strike);
                for (kind, prices) in [(OptionType::Put, put), (OptionType::Call, call)] {
                    let traded = rng.random::<f64>() < p_trade;
                    table.insert_quote(OptionQuote {
                        asset: AssetId::option(kind, series),
                        date,
                        prices,
                        traded,
                    })?;
                }
            }
        }
    }
    Ok(table)
}
