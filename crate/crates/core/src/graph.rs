//! Per-date prediction graphs over the universe.
//!
//! Nodes are the universe synthetic longs in `(maturity, strike)` order. An
//! edge `(a, b)` means `a` is one of the `k'` nearest same-maturity strikes of
//! `b`, or one of the `k'` nearest same-strike maturities of `b`; messages
//! flow from `a` to `b`. "Nearest `k'`" includes every node whose distance is
//! no larger than the `k'`-th smallest distance, so ties are kept.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::asset::{OptionType, SeriesKey};
use crate::chain::ChainTable;
use crate::pricing::implied_volatility;
use crate::time::{IntradayClock, Mark, TradingDate};

pub const N_FEATURES: usize = 9;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "spot_minus_strike",
    "days_to_maturity",
    "y_close",
    "y_open",
    "y_high",
    "y_low",
    "y_close_change",
    "iv_put",
    "iv_call",
];

/// `2 * round(x / 2)` with halves rounded up, or 1 when that is zero.
pub fn neighbour_count(p_dg: f64, group_size: usize) -> usize {
    let x = p_dg * group_size as f64;
    let k = 2 * ((x / 2.0 + 0.5).floor() as usize);
    if k == 0 {
        1
    } else {
        k
    }
}

/// Indices `j != i` in `members` within the `k`-nearest by `pos`, ties included.
fn nearest_with_ties(members: &[usize], i: usize, k: usize, pos: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut d: Vec<f64> = members
        .iter()
        .filter(|&&j| j != i)
        .map(|&j| (pos(j) - pos(i)).abs())
        .collect();
    if d.is_empty() {
        return Vec::new();
    }
    d.sort_by(f64::total_cmp);
    let cutoff = d[k.min(d.len()) - 1];
    members
        .iter()
        .copied()
        .filter(|&j| j != i && (pos(j) - pos(i)).abs() <= cutoff)
        .collect()
}

/// Directed edge list `(source, target)` for nodes in `(maturity, strike)` order.
pub fn build_graph(nodes: &[SeriesKey], p_dg: f64) -> Vec<(usize, usize)> {
    let mut by_maturity: BTreeMap<TradingDate, Vec<usize>> = BTreeMap::new();
    let mut by_strike: BTreeMap<crate::asset::Strike, Vec<usize>> = BTreeMap::new();
    for (i, s) in nodes.iter().enumerate() {
        by_maturity.entry(s.expiry).or_default().push(i);
        by_strike.entry(s.strike).or_default().push(i);
    }
    let mut edges = Vec::new();
    for members in by_maturity.values() {
        let k = neighbour_count(p_dg, members.len());
        for &b in members {
            for a in nearest_with_ties(members, b, k, |j| nodes[j].k()) {
                edges.push((a, b));
            }
        }
    }
    for members in by_strike.values() {
        let k = neighbour_count(p_dg, members.len());
        for &b in members {
            for a in nearest_with_ties(members, b, k, |j| nodes[j].expiry as f64) {
                edges.push((a, b));
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// Settings used when computing node features and targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSettings {
    pub rate: f64,
    pub clock: IntradayClock,
}

/// One day's graph: nodes, edges, features and (when quoted) targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbGraph {
    pub date: TradingDate,
    pub nodes: Vec<SeriesKey>,
    pub edges: Vec<(usize, usize)>,
    pub features: Vec<[f64; N_FEATURES]>,
    /// `y` at the open of `date`; `None` when a leg is not quoted.
    pub targets: Vec<Option<f64>>,
}

impl ArbGraph {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Incoming neighbours of every node.
    pub fn in_neighbours(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            nb[b].push(a);
        }
        nb
    }
}

/// `y` at one daily mark for every node: discount factor minus the mean over
/// same-maturity nodes in `group_date`'s traded set. Nodes without a quote
/// at the mark get `None`.
fn y_at(
    chain: &ChainTable,
    nodes: &[SeriesKey],
    group_date: TradingDate,
    value: impl Fn(&SeriesKey) -> Option<f64>,
) -> Vec<Option<f64>> {
    let vals: Vec<Option<f64>> = nodes.iter().map(&value).collect();
    let mut sums: BTreeMap<TradingDate, (f64, usize)> = BTreeMap::new();
    let mut fallback: BTreeMap<TradingDate, (f64, usize)> = BTreeMap::new();
    for (s, v) in nodes.iter().zip(&vals) {
        let Some(v) = v else { continue };
        let f = fallback.entry(s.expiry).or_default();
        f.0 += v;
        f.1 += 1;
        if chain.sl_traded(group_date, s) {
            let e = sums.entry(s.expiry).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    nodes
        .iter()
        .zip(&vals)
        .map(|(s, v)| {
            let v = (*v)?;
            let (sum, n) = sums
                .get(&s.expiry)
                .or_else(|| fallback.get(&s.expiry))
                .copied()?;
            Some(v - sum / n as f64)
        })
        .collect()
}

/// Targets `y_{a,o(t)}`: open discount factors minus the mean over universe
/// assets of the same maturity that traded on `t - 1` (all same-maturity
/// universe assets when none did).
pub fn targets(chain: &ChainTable, nodes: &[SeriesKey], t: TradingDate) -> Vec<Option<f64>> {
    let prior = t.saturating_sub(1);
    y_at(chain, nodes, prior, |s| chain.delta(t, s, Mark::Open))
}

/// Open discount factors and the same-maturity means used for the targets.
pub fn open_deltas(chain: &ChainTable, nodes: &[SeriesKey], t: TradingDate) -> Vec<Option<(f64, f64)>> {
    let ys = targets(chain, nodes, t);
    nodes
        .iter()
        .zip(ys)
        .map(|(s, y)| {
            let d = chain.delta(t, s, Mark::Open)?;
            let y = y?;
            Some((d, d - y))
        })
        .collect()
}

/// Observed `y` at a mark of `date`, only for nodes that traded that date;
/// the mean runs over traded same-maturity nodes.
fn observed_y(
    chain: &ChainTable,
    nodes: &[SeriesKey],
    date: TradingDate,
    value: impl Fn(&SeriesKey) -> Option<f64>,
) -> Vec<Option<f64>> {
    let traded: Vec<SeriesKey> = nodes.iter().copied().filter(|s| chain.sl_traded(date, s)).collect();
    let ys = y_at(chain, &traded, date, value);
    let map: BTreeMap<SeriesKey, Option<f64>> = traded.into_iter().zip(ys).collect();
    nodes.iter().map(|s| map.get(s).copied().flatten()).collect()
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Node features for decision date `t`, built from data up to the close of
/// `t - 1`. Missing `y` values are set to 0; missing implied volatilities to
/// the same-maturity median of that date.
pub fn node_features(
    chain: &ChainTable,
    nodes: &[SeriesKey],
    t: TradingDate,
    settings: &FeatureSettings,
) -> Vec<[f64; N_FEATURES]> {
    let prev = t.saturating_sub(1);
    let prev2 = t.saturating_sub(2);
    let spot_close = chain.spot(prev, Mark::Close);
    let y_close = observed_y(chain, nodes, prev, |s| chain.delta(prev, s, Mark::Close));
    let y_open = observed_y(chain, nodes, prev, |s| chain.delta(prev, s, Mark::Open));
    let y_high = observed_y(chain, nodes, prev, |s| chain.delta_extremes(prev, s).map(|x| x.0));
    let y_low = observed_y(chain, nodes, prev, |s| chain.delta_extremes(prev, s).map(|x| x.1));
    let y_close2 = if prev2 >= 1 {
        observed_y(chain, nodes, prev2, |s| chain.delta(prev2, s, Mark::Close))
    } else {
        vec![None; nodes.len()]
    };

    let iv = |kind: OptionType, s: &SeriesKey| -> Option<f64> {
        let q = chain.quote(prev, kind, s)?;
        let spot = spot_close?;
        implied_volatility(
            kind,
            q.prices.close,
            spot,
            s.k(),
            settings.clock.close(prev),
            settings.clock.maturity(s.expiry),
            settings.rate,
        )
        .ok()
    };
    let mut iv_put: Vec<Option<f64>> = nodes.iter().map(|s| iv(OptionType::Put, s)).collect();
    let mut iv_call: Vec<Option<f64>> = nodes.iter().map(|s| iv(OptionType::Call, s)).collect();
    for ivs in [&mut iv_put, &mut iv_call] {
        let mut by_m: BTreeMap<TradingDate, Vec<f64>> = BTreeMap::new();
        let mut all = Vec::new();
        for (s, v) in nodes.iter().zip(ivs.iter()) {
            if let Some(v) = v {
                by_m.entry(s.expiry).or_default().push(*v);
                all.push(*v);
            }
        }
        let overall = median(&mut all).unwrap_or(0.0);
        let med: BTreeMap<TradingDate, f64> = by_m
            .into_iter()
            .map(|(m, mut v)| (m, median(&mut v).unwrap_or(overall)))
            .collect();
        for (s, v) in nodes.iter().zip(ivs.iter_mut()) {
            if v.is_none() {
                *v = Some(med.get(&s.expiry).copied().unwrap_or(overall));
            }
        }
    }

    nodes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let yc = y_close[i].unwrap_or(0.0);
            let change = match (y_close[i], y_close2[i]) {
                (Some(a), Some(b)) => a - b,
                _ => 0.0,
            };
            [
                spot_close.map_or(0.0, |sp| sp - s.k()),
                s.expiry as f64 - t as f64,
                yc,
                y_open[i].unwrap_or(0.0),
                y_high[i].unwrap_or(0.0),
                y_low[i].unwrap_or(0.0),
                change,
                iv_put[i].unwrap_or(0.0),
                iv_call[i].unwrap_or(0.0),
            ]
        })
        .collect()
}

/// Assemble the graph for decision date `t` over a universe.
pub fn assemble_graph(
    chain: &ChainTable,
    universe: &[SeriesKey],
    t: TradingDate,
    p_dg: f64,
    settings: &FeatureSettings,
) -> ArbGraph {
    let mut nodes = universe.to_vec();
    nodes.sort();
    nodes.dedup();
    ArbGraph {
        date: t,
        edges: build_graph(&nodes, p_dg),
        features: node_features(chain, &nodes, t, settings),
        targets: targets(chain, &nodes, t),
        nodes,
    }
}
