//! Trading-date time axis.
//!
//! Trading dates are consecutive positive integers. A wall-clock time
//! `HH:MM:SS` on date `t` maps to `t + (HH*3600 + MM*60 + SS) / 86400`, so every
//! intraday mark of date `t` lies in `[t, t + 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Trading-date index, starting at 1.
pub type TradingDate = u32;

const SECONDS_PER_DAY: f64 = 86_400.0;

/// A point on the continuous trading-date axis.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct TimePoint(f64);

impl TimePoint {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || value < 1.0 {
            return Err(CoreError::Domain(format!(
                "time point must be finite and >= 1, got {value}"
            )));
        }
        Ok(Self(value))
    }

    /// Time point of `HH:MM:SS` on trading date `date`.
    pub fn at(date: TradingDate, hh: u32, mm: u32, ss: u32) -> Result<Self> {
        let secs = hh * 3600 + mm * 60 + ss;
        if date == 0 || secs >= 86_400 {
            return Err(CoreError::Domain(format!(
                "invalid wall-clock time {hh:02}:{mm:02}:{ss:02} on date {date}"
            )));
        }
        Ok(Self(date as f64 + secs as f64 / SECONDS_PER_DAY))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The trading date containing this time point (`floor(tau)`).
    pub fn date(self) -> TradingDate {
        self.0.floor() as TradingDate
    }

    pub fn intraday_fraction(self) -> f64 {
        self.0 - self.0.floor()
    }

    /// Signed distance `self - earlier` in trading days.
    pub fn days_since(self, earlier: TimePoint) -> f64 {
        self.0 - earlier.0
    }
}

/// Wall-clock time as seconds after midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockTime {
    pub hh: u32,
    pub mm: u32,
    pub ss: u32,
}

impl ClockTime {
    pub const fn new(hh: u32, mm: u32, ss: u32) -> Self {
        Self { hh, mm, ss }
    }

    fn fraction(self) -> f64 {
        (self.hh * 3600 + self.mm * 60 + self.ss) as f64 / SECONDS_PER_DAY
    }

    fn validate(self) -> Result<()> {
        if self.hh >= 24 || self.mm >= 60 || self.ss >= 60 {
            return Err(CoreError::Config(format!(
                "invalid clock time {:02}:{:02}:{:02}",
                self.hh, self.mm, self.ss
            )));
        }
        Ok(())
    }
}

/// Which daily price mark a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mark {
    Open,
    High,
    Low,
    Close,
}

/// Maps trading dates to the open/high/low/close time points `o(t)`, `h(t)`,
/// `l(t)`, `c(t)`.
///
/// Daily OHLC data does not record when the high and low happened, so their
/// wall-clock times are configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntradayClock {
    pub open: ClockTime,
    pub high: ClockTime,
    pub low: ClockTime,
    pub close: ClockTime,
}

impl Default for IntradayClock {
    fn default() -> Self {
        Self {
            open: ClockTime::new(9, 0, 0),
            high: ClockTime::new(12, 0, 0),
            low: ClockTime::new(12, 0, 0),
            close: ClockTime::new(15, 45, 0),
        }
    }
}

impl IntradayClock {
    /// A clock whose four marks coincide. Useful for markets that are priced
    /// at a single instant per day.
    pub fn single_mark(at: ClockTime) -> Self {
        Self {
            open: at,
            high: at,
            low: at,
            close: at,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in [self.open, self.high, self.low, self.close] {
            c.validate()?;
        }
        Ok(())
    }

    pub fn mark(&self, date: TradingDate, mark: Mark) -> TimePoint {
        let c = match mark {
            Mark::Open => self.open,
            Mark::High => self.high,
            Mark::Low => self.low,
            Mark::Close => self.close,
        };
        TimePoint(date as f64 + c.fraction())
    }

    pub fn open(&self, date: TradingDate) -> TimePoint {
        self.mark(date, Mark::Open)
    }

    pub fn close(&self, date: TradingDate) -> TimePoint {
        self.mark(date, Mark::Close)
    }

    pub fn high(&self, date: TradingDate) -> TimePoint {
        self.mark(date, Mark::High)
    }

    pub fn low(&self, date: TradingDate) -> TimePoint {
        self.mark(date, Mark::Low)
    }

    /// Maturity time point of an option expiring on `expiry` (its close).
    pub fn maturity(&self, expiry: TradingDate) -> TimePoint {
        self.close(expiry)
    }
}

/// Year fraction between two time points on a 252-trading-day year.
pub fn year_fraction(from: TimePoint, to: TimePoint) -> f64 {
    (to.0 - from.0) / 252.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wall_clock_mapping() {
        let tp = TimePoint::at(7, 8, 30, 0).unwrap();
        assert!((tp.value() - (7.0 + (8.0 * 3600.0 + 30.0 * 60.0) / 86400.0)).abs() < 1e-15);
        assert_eq!(tp.date(), 7);
        assert!(TimePoint::at(7, 24, 0, 0).is_err());
        assert!(TimePoint::new(0.5).is_err());
    }

    proptest! {
        #[test]
        fn marks_stay_inside_their_date(
            t in 1u32..100_000,
            hh in 0u32..24, mm in 0u32..60, ss in 0u32..60,
        ) {
            let c = ClockTime::new(hh, mm, ss);
            let clock = IntradayClock { open: c, high: c, low: c, close: c };
            for m in [Mark::Open, Mark::High, Mark::Low, Mark::Close] {
                let tp = clock.mark(t, m);
                prop_assert!(tp.value() >= t as f64 && tp.value() < t as f64 + 1.0);
                prop_assert_eq!(tp.date(), t);
            }
        }
    }
}
