//! Backtest ledgers against hand computation and flow accounting.

use std::collections::BTreeMap;

use pcparb_core::asset::{OptionType, SeriesKey};
use pcparb_core::backtest::{compute_metrics, run_backtest, BacktestConfig, BacktestLedger, ReturnBase};
use pcparb_core::chain::ChainTable;
use pcparb_core::slsa::{FlowKind, PositionKind};
use pcparb_core::synthetic::{generate_synthetic_market, SyntheticConfig};
use pcparb_core::time::{Mark, TradingDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Inputs = (BTreeMap<TradingDate, Vec<SeriesKey>>, BTreeMap<TradingDate, Vec<f64>>);

fn market() -> ChainTable {
    generate_synthetic_market(&SyntheticConfig {
        n_dates: 120,
        arb_noise_scale: 0.002,
        seed: 9,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

/// Up to eight complete series per date with random predictions.
fn inputs(chain: &ChainTable, dates: std::ops::Range<u32>) -> Inputs {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut u = BTreeMap::new();
    let mut p = BTreeMap::new();
    for t in dates {
        let keys: Vec<SeriesKey> = chain
            .series_on(t)
            .filter(|(_, q)| q.is_complete())
            .map(|(s, _)| *s)
            .filter(|s| (s.k() - chain.spot(t, Mark::Open).unwrap()).abs() < 6.0)
            .collect();
        p.insert(t, keys.iter().map(|_| rng.random_range(-1e-3..1e-3)).collect());
        u.insert(t, keys);
    }
    (u, p)
}

fn run(chain: &ChainTable, i: &Inputs, kind: PositionKind, cost_rate: f64) -> BacktestLedger {
    let cfg = BacktestConfig {
        cost_rate,
        return_base: ReturnBase::Gross,
    };
    run_backtest(chain, &i.0, &i.1, kind, cfg).unwrap()
}

#[test]
fn single_date_sa_ledger_matches_hand_computation() {
    let chain = market();
    let i = inputs(&chain, 30..31);
    let ledger = run(&chain, &i, PositionKind::SA, 0.0);
    let day = &ledger.days[0];
    let pos = day.position.as_ref().unwrap();
    // inception receives the synthetic longs sold minus those bought
    let hand: f64 = pos
        .universe
        .iter()
        .zip(&pos.n)
        .map(|(s, n)| {
            let q = |k: OptionType| chain.quote(30, k, s).unwrap().prices.open;
            -n * (q(OptionType::Call) - q(OptionType::Put))
        })
        .sum();
    assert!((day.pnl - hand).abs() < 1e-9, "{} vs {hand}", day.pnl);
    assert!(ledger.days[1..].iter().all(|d| d.pnl == 0.0));
    let longs: f64 = pos.n.iter().filter(|x| **x > 0.0).sum();
    assert!((longs - 1.0).abs() < 1e-12);
}

#[test]
fn ledgers_conserve_flows_and_costs() {
    let chain = market();
    let i = inputs(&chain, 20..60);
    for kind in [PositionKind::SA, PositionKind::BM1, PositionKind::BM2] {
        let ledger = run(&chain, &i, kind, 0.0009);
        let flows: f64 = ledger.flows.iter().map(|f| f.amount).sum();
        let costs: f64 = ledger.days.iter().map(|d| d.cost).sum();
        assert!((ledger.total_pnl() - (flows - costs)).abs() < 1e-9, "{kind:?}");
        assert!((ledger.days.last().unwrap().cumulative - ledger.total_pnl()).abs() < 1e-9);
        assert!(ledger.flows.iter().all(|f| f.paid >= f.opened));
        let free = run(&chain, &i, kind, 0.0);
        assert!((free.total_pnl() - ledger.total_pnl() - costs).abs() < 1e-9);
        assert!(costs > 0.0);
        // costs are the rate times the open premium of both legs
        let d = ledger.days.iter().find(|d| d.contracts > 0.0).unwrap();
        let pos = d.position.as_ref().unwrap();
        let premium: f64 = pos
            .universe
            .iter()
            .zip(&pos.n)
            .map(|(s, n)| {
                let q = |k: OptionType| chain.quote(d.date, k, s).unwrap().prices.open;
                n.abs() * (q(OptionType::Call) + q(OptionType::Put))
            })
            .sum();
        assert!((d.cost - 0.0009 * premium).abs() < 1e-12);
    }
}

#[test]
fn only_benchmarks_pay_at_maturity() {
    let chain = market();
    let i = inputs(&chain, 20..60);
    let sa = run(&chain, &i, PositionKind::SA, 0.0);
    assert!(sa.maturity_flows().iter().all(|f| f.amount == 0.0));
    assert!(sa.days.iter().all(|d| d.maturity == 0.0));
    for kind in [PositionKind::BM1, PositionKind::BM2] {
        let bm = run(&chain, &i, kind, 0.0);
        let spikes = bm.days.iter().filter(|d| d.maturity != 0.0).count();
        assert!(spikes > 0, "{kind:?}");
        // maturity flows land on expiry dates only
        for d in bm.days.iter().filter(|d| d.maturity != 0.0) {
            assert!(bm.flows.iter().any(|f| f.kind == FlowKind::Maturity && f.paid == d.date));
            assert_eq!(d.date % 21, 0);
        }
    }
}

#[test]
fn metrics_follow_the_ledger() {
    let chain = market();
    let i = inputs(&chain, 20..60);
    let ledger = run(&chain, &i, PositionKind::SA, 0.0);
    let m = compute_metrics(&ledger).unwrap();
    let r = ledger.returns();
    assert_eq!(m.n_return_days, r.len());
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    let sd = (r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r.len() - 1) as f64).sqrt();
    assert!((m.information_ratio.unwrap() - mean / sd).abs() < 1e-12);
    let hhi = m.hhi_mean.unwrap();
    assert!(hhi > 0.0 && hhi <= 1.0);
    assert!((m.effective_n.unwrap() - 1.0 / hhi).abs() < 1e-12);
}

#[test]
fn bad_inputs_are_rejected() {
    let chain = market();
    let mut i = inputs(&chain, 20..22);
    assert!(run_backtest(&chain, &i.0, &i.1, PositionKind::LS, BacktestConfig::default()).is_err());
    let neg = BacktestConfig {
        cost_rate: -0.1,
        ..BacktestConfig::default()
    };
    assert!(run_backtest(&chain, &i.0, &i.1, PositionKind::SA, neg).is_err());
    i.1.get_mut(&20).unwrap().push(0.0);
    assert!(run_backtest(&chain, &i.0, &i.1, PositionKind::SA, BacktestConfig::default()).is_err());
}
