//! Pipeline stages: data, tradability and universes, graphs, training,
//! prediction, backtests and reports.

use std::collections::BTreeMap;
use std::path::Path;

use pcparb_core::asset::SeriesKey;
use pcparb_core::backtest::{compute_metrics, cosine_series, information_ratio, run_backtest, BacktestLedger, MetricsReport};
use pcparb_core::chain::ChainTable;
use pcparb_core::graph::{assemble_graph, ArbGraph, FeatureSettings};
use pcparb_core::slsa::{FlowKind, PositionKind};
use pcparb_core::splits::{make_splits, SplitPlan};
use pcparb_core::synthetic::generate_synthetic_market;
use pcparb_core::time::{Mark, TradingDate};
use pcparb_core::tradability::{default_radii, fit_tradability, TradabilityModel, TradePoint};
use pcparb_core::universe::{build_problem, solve_universe, Candidate};
use pcparb_neural::Arch;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::stats::{mse, paired_tests, sign_test_p, PairedTests};
use crate::trainer::{train_round, RoundData, RoundResult};

pub fn simulate(cfg: &PipelineConfig) -> Result<ChainTable> {
    Ok(generate_synthetic_market(&cfg.data.synthetic)?)
}

/// Walk-forward splits over the chain's dates.
pub fn plan_splits(cfg: &PipelineConfig, chain: &ChainTable) -> Result<SplitPlan> {
    let first = chain.first_date().ok_or_else(|| PipelineError::EmptySplit("chain has no dates".into()))?;
    let last = chain.last_date().expect("non-empty chain");
    let fit = cfg.fit_dates(last);
    Ok(make_splits(&fit, first, last, cfg.splits.p_val, cfg.seed)?)
}

/// Candidates for decision date `t`: series complete on `t - 1`, listed on
/// `t` and expiring after `t`.
pub fn candidate_series(chain: &ChainTable, t: TradingDate) -> Vec<SeriesKey> {
    let prev = t.saturating_sub(1);
    chain
        .series_on(prev)
        .filter(|(s, q)| q.is_complete() && s.expiry > t)
        .filter(|(s, _)| chain.quotes(t, s).is_some_and(|q| q.is_complete()))
        .map(|(s, _)| *s)
        .collect()
}

/// Moneyness `K / S_c(t-1)` and days to maturity `M - t` of a candidate.
fn trade_features(chain: &ChainTable, s: &SeriesKey, t: TradingDate) -> Option<(f64, f64)> {
    let spot = chain.spot(t.saturating_sub(1), Mark::Close)?;
    Some((s.k() / spot, (s.expiry - t) as f64))
}

/// Labelled tradability points: candidates of `t` and whether their
/// synthetic long (both legs) traded on `t`.
pub fn trade_points(chain: &ChainTable, dates: &[TradingDate]) -> Vec<TradePoint> {
    let mut out = Vec::new();
    for &t in dates {
        for s in candidate_series(chain, t) {
            if let Some((m, d)) = trade_features(chain, &s, t) {
                out.push(TradePoint {
                    moneyness: m,
                    days_to_maturity: d,
                    traded: chain.sl_traded(t, &s),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradabilitySummary {
    pub round: usize,
    pub radius: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub val_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniverseDay {
    pub date: TradingDate,
    /// Round whose tradability model scored the candidates.
    pub round: usize,
    pub n_candidates: usize,
    pub dk_max: f64,
    pub selected: Vec<SeriesKey>,
    pub cardinality: usize,
    pub objective: f64,
    pub trace: Vec<usize>,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniverseArtifact {
    pub p_univ: usize,
    pub plan: SplitPlan,
    pub tradability: Vec<TradabilitySummary>,
    pub days: Vec<UniverseDay>,
}

/// Twice the smallest positive same-expiry strike gap.
fn default_dk_max(candidates: &[SeriesKey]) -> f64 {
    let mut gap = f64::INFINITY;
    for a in candidates {
        for b in candidates {
            if a.expiry == b.expiry && b.k() > a.k() {
                gap = gap.min(b.k() - a.k());
            }
        }
    }
    if gap.is_finite() {
        2.0 * gap
    } else {
        0.0
    }
}

/// Fit one tradability model per round and solve every decision date.
/// Dates before the first fit date use the first round's model; later dates
/// use the model of the round whose test window contains them.
pub fn select_universes(cfg: &PipelineConfig, chain: &ChainTable) -> Result<UniverseArtifact> {
    let plan = plan_splits(cfg, chain)?;
    let radii = default_radii();
    let mut models: Vec<TradabilityModel> = Vec::new();
    let mut summaries = Vec::new();
    for r in &plan.rounds {
        let train = trade_points(chain, &r.train);
        let val = trade_points(chain, &r.val);
        let model = fit_tradability(&train, &val, &radii)?;
        let val_error = model
            .val_errors
            .iter()
            .find(|(rad, _)| *rad == model.radius)
            .map(|(_, e)| *e);
        log::info!("round {}: tradability radius {:.3} on {} points", r.index, model.radius, train.len());
        summaries.push(TradabilitySummary {
            round: r.index,
            radius: model.radius,
            n_train: train.len(),
            n_val: val.len(),
            val_error,
        });
        models.push(model);
    }
    let first = plan.first_date;
    let mut days = Vec::new();
    for t in chain.dates().into_iter().filter(|t| *t > first) {
        let round = plan.round_of(t).map_or(1, |r| r.index);
        let model = &models[round - 1];
        let series = candidate_series(chain, t);
        let spot = chain.spot(t - 1, Mark::Close).unwrap_or(f64::NAN);
        let dk_max = cfg.universe.dk_max.unwrap_or_else(|| default_dk_max(&series));
        let candidates: Vec<Candidate> = series
            .iter()
            .filter_map(|s| {
                let (m, d) = trade_features(chain, s, t)?;
                Some(Candidate {
                    series: *s,
                    mu: model.predict(m, d),
                })
            })
            .collect();
        let n_candidates = candidates.len();
        let sol = if candidates.is_empty() {
            None
        } else {
            Some(solve_universe(&build_problem(candidates, cfg.universe.p_univ, dk_max, spot)))
        };
        let day = match sol {
            Some(sol) => UniverseDay {
                date: t,
                round,
                n_candidates,
                dk_max,
                selected: sol.selected,
                cardinality: sol.cardinality,
                objective: sol.objective,
                trace: sol.trace,
                feasible: sol.feasible,
            },
            None => UniverseDay {
                date: t,
                round,
                n_candidates,
                dk_max,
                selected: Vec::new(),
                cardinality: 0,
                objective: 0.0,
                trace: Vec::new(),
                feasible: false,
            },
        };
        if !day.feasible {
            log::warn!("date {t}: no feasible universe among {n_candidates} candidates");
        }
        days.push(day);
    }
    Ok(UniverseArtifact {
        p_univ: cfg.universe.p_univ,
        plan,
        tradability: summaries,
        days,
    })
}

/// One graph per date with a feasible universe.
pub fn build_graphs(cfg: &PipelineConfig, chain: &ChainTable, universes: &UniverseArtifact) -> Vec<ArbGraph> {
    let (rate, clock) = cfg.market_conventions();
    let settings = FeatureSettings { rate, clock };
    universes
        .days
        .iter()
        .filter(|d| d.feasible && d.cardinality >= 2)
        .map(|d| assemble_graph(chain, &d.selected, d.date, cfg.graphs.p_dg, &settings))
        .collect()
}

/// Train every configured architecture on every round.
pub fn train(cfg: &PipelineConfig, plan: &SplitPlan, p_univ: usize, graphs: &[ArbGraph]) -> Result<Vec<RoundResult>> {
    let by_date: BTreeMap<TradingDate, &ArbGraph> = graphs.iter().map(|g| (g.date, g)).collect();
    let pick = |dates: &[TradingDate]| -> Vec<&ArbGraph> { dates.iter().filter_map(|d| by_date.get(d).copied()).collect() };
    let mut out = Vec::new();
    for &arch in &cfg.train.archs {
        for r in &plan.rounds {
            let data = RoundData::new(r.index, p_univ, pick(&r.train), pick(&r.val), pick(&r.test));
            out.push(train_round(&data, arch, &cfg.train)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub arch: String,
    pub round: usize,
    pub date: TradingDate,
    pub expiry: TradingDate,
    pub strike: f64,
    pub y_hat: f64,
    pub y: Option<f64>,
}

/// Test-window predictions of each round's selected model, recomputed from
/// its checkpoint.
pub fn predict(results: &[RoundResult], plan: &SplitPlan, graphs: &[ArbGraph]) -> Result<Vec<PredictionRow>> {
    let by_date: BTreeMap<TradingDate, &ArbGraph> = graphs.iter().map(|g| (g.date, g)).collect();
    let mut rows = Vec::new();
    for res in results {
        let round = plan
            .rounds
            .iter()
            .find(|r| r.index == res.round)
            .ok_or_else(|| PipelineError::Config(format!("round {} not in the split plan", res.round)))?;
        let test: Vec<&ArbGraph> = round.test.iter().filter_map(|d| by_date.get(d).copied()).collect();
        let preds = res.model.predict(&test)?;
        for (g, yh) in test.iter().zip(preds) {
            for ((s, y), v) in g.nodes.iter().zip(&g.targets).zip(yh) {
                rows.push(PredictionRow {
                    arch: res.arch.name().to_string(),
                    round: res.round,
                    date: g.date,
                    expiry: s.expiry,
                    strike: s.k(),
                    y_hat: v,
                    y: *y,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyMetrics {
    pub strategy: PositionKind,
    pub report: MetricsReport,
    /// Mean over standard deviation of daily P&L across all ledger dates.
    pub pnl_stability: Option<f64>,
    /// One-sided sign test that daily P&L is positive.
    pub daily_pnl_sign_p: Option<f64>,
    /// Ledger dates with a nonzero maturity flow.
    pub maturity_flow_dates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestArtifact {
    pub model: Arch,
    pub ledgers: Vec<BacktestLedger>,
    pub metrics: Vec<StrategyMetrics>,
}

pub fn strategy_metrics(ledger: &BacktestLedger) -> Result<StrategyMetrics> {
    let pnl: Vec<f64> = ledger.days.iter().map(|d| d.pnl).collect();
    let maturity_flow_dates = ledger.days.iter().filter(|d| d.maturity != 0.0).count();
    debug_assert!(ledger.flows.iter().all(|f| f.kind != FlowKind::Maturity || f.paid >= f.opened));
    Ok(StrategyMetrics {
        strategy: ledger.strategy,
        report: compute_metrics(ledger)?,
        pnl_stability: information_ratio(&pnl),
        daily_pnl_sign_p: sign_test_p(&pnl),
        maturity_flow_dates,
    })
}

/// Universes and predictions keyed by date for one architecture.
pub fn trading_inputs(
    rows: &[PredictionRow],
    arch: Arch,
) -> Result<(BTreeMap<TradingDate, Vec<SeriesKey>>, BTreeMap<TradingDate, Vec<f64>>)> {
    let mut universes: BTreeMap<TradingDate, Vec<SeriesKey>> = BTreeMap::new();
    let mut preds: BTreeMap<TradingDate, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.arch == arch.name()) {
        universes.entry(r.date).or_default().push(SeriesKey::new(r.expiry, r.strike)?);
        preds.entry(r.date).or_default().push(r.y_hat);
    }
    Ok((universes, preds))
}

pub fn backtest(
    cfg: &PipelineConfig,
    chain: &ChainTable,
    rows: &[PredictionRow],
    strategies: &[PositionKind],
) -> Result<BacktestArtifact> {
    let arch = cfg.backtest.model;
    let (universes, preds) = trading_inputs(rows, arch)?;
    if preds.is_empty() {
        return Err(PipelineError::MissingArtifact(format!("{arch} predictions")));
    }
    let mut ledgers = Vec::new();
    let mut metrics = Vec::new();
    for &s in strategies {
        let ledger = run_backtest(chain, &universes, &preds, s, cfg.backtest.config())?;
        metrics.push(strategy_metrics(&ledger)?);
        ledgers.push(ledger);
    }
    Ok(BacktestArtifact {
        model: arch,
        ledgers,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub round: usize,
    pub arch: String,
    pub p_univ: usize,
    pub val_mse: f64,
    pub test_mse: f64,
    pub zero_mse: f64,
    pub n_test_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub benchmark: String,
    /// Over per-date test MSE differences `benchmark - RNConv`.
    pub per_date: Option<PairedTests>,
    /// Over per-round differences; needs at least five rounds.
    pub per_round: Option<PairedTests>,
}

/// Everything the report writes, also returned for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub mse: Vec<MseRow>,
    pub metrics: Vec<StrategyMetrics>,
    pub comparisons: Vec<Comparison>,
    pub n_test_dates: usize,
}

/// Per-date test MSE of one architecture.
pub fn daily_mse(rows: &[PredictionRow], arch: &str) -> BTreeMap<TradingDate, f64> {
    let mut acc: BTreeMap<TradingDate, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.arch == arch) {
        if let Some(y) = r.y {
            let e = acc.entry(r.date).or_default();
            e.0.push(r.y_hat);
            e.1.push(y);
        }
    }
    acc.into_iter()
        .map(|(d, (p, t))| (d, mse(&p, &t).expect("equal non-empty vectors")))
        .collect()
}

pub fn mse_rows(results: &[RoundResult]) -> Vec<MseRow> {
    results
        .iter()
        .map(|r| MseRow {
            round: r.round,
            arch: r.arch.name().to_string(),
            p_univ: r.p_univ,
            val_mse: r.val_mse,
            test_mse: r.test_mse,
            zero_mse: r.zero_mse,
            n_test_nodes: r.n_test_nodes,
        })
        .collect()
}

fn comparisons(mse: &[MseRow], rows: &[PredictionRow]) -> Vec<Comparison> {
    let base = Arch::Rnconv.name();
    let ours = daily_mse(rows, base);
    let mut out = Vec::new();
    for arch in [Arch::Gcn, Arch::Sage] {
        let theirs = daily_mse(rows, arch.name());
        if theirs.is_empty() || ours.is_empty() {
            continue;
        }
        let diffs: Vec<f64> = ours
            .iter()
            .filter_map(|(d, m)| theirs.get(d).map(|b| b - m))
            .collect();
        let round_diffs: Vec<f64> = mse
            .iter()
            .filter(|r| r.arch == arch.name())
            .filter_map(|b| {
                mse.iter()
                    .find(|r| r.arch == base && r.round == b.round && r.p_univ == b.p_univ)
                    .map(|r| b.test_mse - r.test_mse)
            })
            .collect();
        out.push(Comparison {
            benchmark: arch.name().to_string(),
            per_date: paired_tests(&diffs).ok(),
            per_round: paired_tests(&round_diffs).ok(),
        });
    }
    out
}

fn write_csv<S: Serialize>(path: &Path, rows: impl IntoIterator<Item = S>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Write metric tables and plot-ready series into `dir`.
pub fn report(
    cfg: &PipelineConfig,
    plan: &SplitPlan,
    universes: &UniverseArtifact,
    results_mse: Vec<MseRow>,
    rows: &[PredictionRow],
    bt: &BacktestArtifact,
    dir: &Path,
) -> Result<Report> {
    std::fs::create_dir_all(dir)?;
    write_csv(&dir.join("mse.csv"), &results_mse)?;

    let mut m = csv::Writer::from_path(dir.join("metrics.csv"))?;
    m.write_record([
        "strategy",
        "information_ratio",
        "sortino_ratio",
        "hhi_mean",
        "effective_n",
        "avg_abs_moneyness",
        "avg_days_to_maturity",
        "total_pnl",
        "pnl_stability",
        "daily_pnl_sign_p",
        "maturity_flow_dates",
    ])?;
    for s in &bt.metrics {
        let r = &s.report;
        m.write_record([
            format!("{:?}", s.strategy),
            fmt_opt(r.information_ratio),
            fmt_opt(r.sortino_ratio),
            fmt_opt(r.hhi_mean),
            fmt_opt(r.effective_n),
            fmt_opt(r.avg_abs_moneyness),
            fmt_opt(r.avg_days_to_maturity),
            r.total_pnl.to_string(),
            fmt_opt(s.pnl_stability),
            fmt_opt(s.daily_pnl_sign_p),
            s.maturity_flow_dates.to_string(),
        ])?;
    }
    m.flush()?;

    // cumulative P&L, one row per test date
    let test_dates = plan.test_dates();
    let mut p = csv::Writer::from_path(dir.join("pnl.csv"))?;
    let mut header = vec!["date".to_string()];
    header.extend(bt.ledgers.iter().map(|l| format!("{:?}", l.strategy)));
    p.write_record(&header)?;
    let cums: Vec<BTreeMap<TradingDate, f64>> = bt
        .ledgers
        .iter()
        .map(|l| l.days.iter().map(|d| (d.date, d.cumulative)).collect())
        .collect();
    let mut last = vec![0.0; cums.len()];
    for d in &test_dates {
        let mut rec = vec![d.to_string()];
        for (i, c) in cums.iter().enumerate() {
            if let Some(v) = c.get(d) {
                last[i] = *v;
            }
            rec.push(last[i].to_string());
        }
        p.write_record(&rec)?;
    }
    p.flush()?;

    // rolling MSE per architecture
    let archs: Vec<String> = cfg.train.archs.iter().map(|a| a.name().to_string()).collect();
    let daily: Vec<BTreeMap<TradingDate, f64>> = archs.iter().map(|a| daily_mse(rows, a)).collect();
    let mut rm = csv::Writer::from_path(dir.join("rolling_mse.csv"))?;
    let mut header = vec!["date".to_string()];
    for a in &archs {
        header.push(format!("{a}_mse"));
        header.push(format!("{a}_rolling"));
    }
    rm.write_record(&header)?;
    let window = cfg.backtest.mse_window.max(1);
    let mut bufs: Vec<std::collections::VecDeque<f64>> = vec![Default::default(); archs.len()];
    for d in &test_dates {
        let mut rec = vec![d.to_string()];
        for (i, series) in daily.iter().enumerate() {
            match series.get(d) {
                Some(v) => {
                    bufs[i].push_back(*v);
                    if bufs[i].len() > window {
                        bufs[i].pop_front();
                    }
                    rec.push(v.to_string());
                }
                None => rec.push(String::new()),
            }
            let b = &bufs[i];
            rec.push(if b.is_empty() {
                String::new()
            } else {
                (b.iter().sum::<f64>() / b.len() as f64).to_string()
            });
        }
        rm.write_record(&rec)?;
    }
    rm.flush()?;

    let mut u = csv::Writer::from_path(dir.join("universe.csv"))?;
    u.write_record(["date", "round", "n_candidates", "cardinality", "objective", "feasible"])?;
    for d in &universes.days {
        u.write_record([
            d.date.to_string(),
            d.round.to_string(),
            d.n_candidates.to_string(),
            d.cardinality.to_string(),
            d.objective.to_string(),
            d.feasible.to_string(),
        ])?;
    }
    u.flush()?;

    let mut c = csv::Writer::from_path(dir.join("cosine.csv"))?;
    c.write_record(["strategy", "date", "cosine", "rolling_mean"])?;
    for l in &bt.ledgers {
        let days: Vec<(TradingDate, Option<f64>)> = l.days.iter().map(|d| (d.date, d.cosine)).collect();
        for (d, v, r) in cosine_series(&days, cfg.backtest.cosine_window) {
            c.write_record([format!("{:?}", l.strategy), d.to_string(), v.to_string(), r.to_string()])?;
        }
    }
    c.flush()?;

    let report = Report {
        comparisons: comparisons(&results_mse, rows),
        mse: results_mse,
        metrics: bt.metrics.clone(),
        n_test_dates: test_dates.len(),
    };
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}
