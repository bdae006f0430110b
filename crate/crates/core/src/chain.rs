//! Daily option-chain tables and their comma-separated file format.
//!
//! One row per `(date, asset)`. Underlying rows have type `UI` and leave
//! `maturity` and `strike` empty; option rows have type `PT` or `CL` and carry
//! the expiry trading date and the strike.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::asset::{AssetId, AssetKind, OptionType, SeriesKey};
use crate::error::{CoreError, Result};
use crate::pricing::{discount_factor, synthetic_long_price};
use crate::time::{Mark, TradingDate};

/// Open, high, low and close prices of one day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ohlc {
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

impl Ohlc {
    pub fn flat(price: f64) -> Self {
        Self {
            open: price,
            high: price,
            low: price,
            close: price,
        }
    }

    pub fn at(&self, mark: Mark) -> f64 {
        match mark {
            Mark::Open => self.open,
            Mark::High => self.high,
            Mark::Low => self.low,
            Mark::Close => self.close,
        }
    }

    /// `low <= min(open, close) <= max(open, close) <= high`, all positive.
    pub fn is_consistent(&self) -> bool {
        let vals = [self.open, self.high, self.low, self.close];
        vals.iter().all(|v| v.is_finite() && *v > 0.0)
            && self.low <= self.open.min(self.close)
            && self.open.max(self.close) <= self.high
    }
}

/// Daily prices of one option contract.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionQuote {
    pub asset: AssetId,
    pub date: TradingDate,
    pub prices: Ohlc,
    pub traded: bool,
}

/// Put and call quotes of one series on one date.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SeriesQuotes {
    pub put: Option<OptionQuote>,
    pub call: Option<OptionQuote>,
}

impl SeriesQuotes {
    pub fn leg(&self, kind: OptionType) -> Option<&OptionQuote> {
        match kind {
            OptionType::Put => self.put.as_ref(),
            OptionType::Call => self.call.as_ref(),
        }
    }

    /// Both legs listed.
    pub fn is_complete(&self) -> bool {
        self.put.is_some() && self.call.is_some()
    }

    /// A synthetic long counts as traded when both of its legs traded.
    pub fn traded(&self) -> bool {
        matches!((self.put, self.call), (Some(p), Some(c)) if p.traded && c.traded)
    }
}

/// Option chain plus underlying prices, keyed by trading date.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainTable {
    underlying: BTreeMap<TradingDate, Ohlc>,
    options: BTreeMap<TradingDate, BTreeMap<SeriesKey, SeriesQuotes>>,
}

impl ChainTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_underlying(&mut self, date: TradingDate, prices: Ohlc) -> Result<()> {
        if self.underlying.insert(date, prices).is_some() {
            return Err(CoreError::DuplicateKey(format!("(UI) on date {date}")));
        }
        Ok(())
    }

    pub fn insert_quote(&mut self, quote: OptionQuote) -> Result<()> {
        let series = quote
            .asset
            .series
            .ok_or_else(|| CoreError::Domain(format!("{} is not an option", quote.asset)))?;
        let slot = self
            .options
            .entry(quote.date)
            .or_default()
            .entry(series)
            .or_default();
        let leg = match quote.asset.kind {
            AssetKind::PT => &mut slot.put,
            AssetKind::CL => &mut slot.call,
            _ => return Err(CoreError::Domain(format!("{} is not an option", quote.asset))),
        };
        if leg.is_some() {
            return Err(CoreError::DuplicateKey(format!(
                "{} on date {}",
                quote.asset, quote.date
            )));
        }
        *leg = Some(quote);
        Ok(())
    }

    /// Dates with underlying prices, ascending.
    pub fn dates(&self) -> Vec<TradingDate> {
        self.underlying.keys().copied().collect()
    }

    pub fn first_date(&self) -> Option<TradingDate> {
        self.underlying.keys().next().copied()
    }

    pub fn last_date(&self) -> Option<TradingDate> {
        self.underlying.keys().next_back().copied()
    }

    pub fn underlying(&self, date: TradingDate) -> Option<&Ohlc> {
        self.underlying.get(&date)
    }

    pub fn spot(&self, date: TradingDate, mark: Mark) -> Option<f64> {
        self.underlying.get(&date).map(|o| o.at(mark))
    }

    /// All series quoted on `date`, in `(maturity, strike)` order.
    pub fn series_on(&self, date: TradingDate) -> impl Iterator<Item = (&SeriesKey, &SeriesQuotes)> {
        self.options.get(&date).into_iter().flat_map(|m| m.iter())
    }

    pub fn quotes(&self, date: TradingDate, series: &SeriesKey) -> Option<&SeriesQuotes> {
        self.options.get(&date).and_then(|m| m.get(series))
    }

    pub fn quote(&self, date: TradingDate, kind: OptionType, series: &SeriesKey) -> Option<&OptionQuote> {
        self.quotes(date, series).and_then(|q| q.leg(kind))
    }

    pub fn sl_traded(&self, date: TradingDate, series: &SeriesKey) -> bool {
        self.quotes(date, series).is_some_and(|q| q.traded())
    }

    /// Synthetic-long price at a daily mark; `None` unless both legs are listed.
    pub fn sl_price(&self, date: TradingDate, series: &SeriesKey, mark: Mark) -> Option<f64> {
        let q = self.quotes(date, series)?;
        Some(synthetic_long_price(
            q.put?.prices.at(mark),
            q.call?.prices.at(mark),
        ))
    }

    /// Discount factor `delta` at a daily mark.
    pub fn delta(&self, date: TradingDate, series: &SeriesKey, mark: Mark) -> Option<f64> {
        let s = self.spot(date, mark)?;
        let sl = self.sl_price(date, series, mark)?;
        discount_factor(s, sl, series.k()).ok()
    }

    /// Extreme discount-factor estimates from daily highs and lows.
    ///
    /// The high estimate pairs the put high with the call low and the
    /// underlying low; the low estimate pairs the put low with the call high
    /// and the underlying high. Puts fall and calls rise with the underlying,
    /// so in a parity-consistent market both estimates equal the bond price.
    pub fn delta_extremes(&self, date: TradingDate, series: &SeriesKey) -> Option<(f64, f64)> {
        let q = self.quotes(date, series)?;
        let (p, c) = (q.put?.prices, q.call?.prices);
        let u = self.underlying.get(&date)?;
        let hi = discount_factor(u.low, c.low - p.high, series.k()).ok()?;
        let lo = discount_factor(u.high, c.high - p.low, series.k()).ok()?;
        Some((hi, lo))
    }

    /// Number of option quotes (legs) in the table.
    pub fn n_quotes(&self) -> usize {
        self.options
            .values()
            .flat_map(|m| m.values())
            .map(|q| q.put.is_some() as usize + q.call.is_some() as usize)
            .sum()
    }

    /// Restrict to dates `<= last`.
    pub fn truncated(&self, last: TradingDate) -> ChainTable {
        ChainTable {
            underlying: self.underlying.range(..=last).map(|(k, v)| (*k, *v)).collect(),
            options: self.options.range(..=last).map(|(k, v)| (*k, v.clone())).collect(),
        }
    }
}

/// Header names of the chain file columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainSchema {
    pub date: String,
    pub kind: String,
    pub maturity: String,
    pub strike: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
    pub traded: String,
}

impl Default for ChainSchema {
    fn default() -> Self {
        Self {
            date: "date".into(),
            kind: "type".into(),
            maturity: "maturity".into(),
            strike: "strike".into(),
            open: "open".into(),
            high: "high".into(),
            low: "low".into(),
            close: "close".into(),
            traded: "traded".into(),
        }
    }
}

impl ChainSchema {
    fn columns(&self) -> [&str; 9] {
        [
            &self.date,
            &self.kind,
            &self.maturity,
            &self.strike,
            &self.open,
            &self.high,
            &self.low,
            &self.close,
            &self.traded,
        ]
    }
}

pub fn load_chain(path: impl AsRef<Path>, schema: &ChainSchema) -> Result<ChainTable> {
    read_chain(std::fs::File::open(path)?, schema)
}

/// Parse a chain file. Row numbers in errors are file line numbers (the
/// header is line 1).
pub fn read_chain<R: Read>(reader: R, schema: &ChainSchema) -> Result<ChainTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 9];
    for (slot, name) in idx.iter_mut().zip(schema.columns()) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CoreError::MissingColumn(name.to_string()))?;
    }
    let mut table = ChainTable::new();
    let mut bad_ohlc = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let field = |j: usize| rec.get(idx[j]).unwrap_or("");
        let bad = |message: String| CoreError::BadRow { row, message };
        let num = |j: usize| -> Result<f64> {
            field(j)
                .parse::<f64>()
                .map_err(|_| bad(format!("cannot parse `{}` as a number", field(j))))
        };
        let date: TradingDate = field(0)
            .parse()
            .map_err(|_| bad(format!("cannot parse date `{}`", field(0))))?;
        if date == 0 {
            return Err(bad("trading dates start at 1".into()));
        }
        let kind = AssetKind::parse(field(1)).map_err(|e| bad(e.to_string()))?;
        let prices = Ohlc {
            open: num(4)?,
            high: num(5)?,
            low: num(6)?,
            close: num(7)?,
        };
        if !prices.is_consistent() {
            bad_ohlc.push(row);
            continue;
        }
        match kind {
            AssetKind::UI => table.insert_underlying(date, prices)?,
            AssetKind::PT | AssetKind::CL => {
                let expiry: TradingDate = field(2)
                    .parse()
                    .map_err(|_| bad(format!("cannot parse maturity `{}`", field(2))))?;
                let series = SeriesKey::new(expiry, num(3)?).map_err(|e| bad(e.to_string()))?;
                let traded = parse_bool(field(8)).ok_or_else(|| {
                    bad(format!("cannot parse traded flag `{}`", field(8)))
                })?;
                table.insert_quote(OptionQuote {
                    asset: AssetId::new(kind, Some(series))?,
                    date,
                    prices,
                    traded,
                })?;
            }
            other => return Err(bad(format!("unsupported asset type {}", other.code()))),
        }
    }
    if !bad_ohlc.is_empty() {
        return Err(CoreError::OhlcViolation { rows: bad_ohlc });
    }
    Ok(table)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" | "y" => Some(true),
        "0" | "false" | "f" | "no" | "n" | "" => Some(false),
        _ => None,
    }
}

pub fn save_chain(path: impl AsRef<Path>, table: &ChainTable, schema: &ChainSchema) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_chain(std::io::BufWriter::new(f), table, schema)
}

/// Write a chain in date order: the underlying row first, then series in
/// `(maturity, strike)` order with the put before the call.
pub fn write_chain<W: Write>(writer: W, table: &ChainTable, schema: &ChainSchema) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(schema.columns())?;
    let mut dates: Vec<TradingDate> = table.underlying.keys().copied().collect();
    dates.extend(table.options.keys().copied());
    dates.sort_unstable();
    dates.dedup();
    for date in dates {
        if let Some(u) = table.underlying.get(&date) {
            w.write_record([
                date.to_string(),
                "UI".into(),
                String::new(),
                String::new(),
                u.open.to_string(),
                u.high.to_string(),
                u.low.to_string(),
                u.close.to_string(),
                String::new(),
            ])?;
        }
        for (series, q) in table.series_on(date) {
            for leg in [q.put, q.call].into_iter().flatten() {
                w.write_record([
                    date.to_string(),
                    leg.asset.kind.code().into(),
                    series.expiry.to_string(),
                    series.strike.to_string(),
                    leg.prices.open.to_string(),
                    leg.prices.high.to_string(),
                    leg.prices.low.to_string(),
                    leg.prices.close.to_string(),
                    (leg.traded as u8).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
