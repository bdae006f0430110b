//! Chain storage, bond replication and feature causality on synthetic data.

use pcparb_core::asset::{OptionType, SeriesKey};
use pcparb_core::chain::{load_chain, save_chain, ChainSchema, ChainTable};
use pcparb_core::graph::{node_features, targets, FeatureSettings};
use pcparb_core::pricing::{discount_factor, present_value};
use pcparb_core::synthetic::{generate_synthetic_market, SyntheticConfig};
use pcparb_core::time::{IntradayClock, Mark};
use proptest::prelude::*;

fn market(seed: u64, noise: f64) -> (SyntheticConfig, ChainTable) {
    let cfg = SyntheticConfig {
        n_dates: 80,
        arb_noise_scale: noise,
        seed,
        ..SyntheticConfig::default()
    };
    let chain = generate_synthetic_market(&cfg).unwrap();
    (cfg, chain)
}

#[test]
fn chain_files_round_trip_byte_for_byte() {
    let (_, chain) = market(1, 0.002);
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let schema = ChainSchema::default();
    save_chain(&a, &chain, &schema).unwrap();
    let loaded = load_chain(&a, &schema).unwrap();
    assert_eq!(loaded, chain);
    save_chain(&b, &loaded, &schema).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn same_seed_same_market() {
    assert_eq!(market(5, 0.002).1, market(5, 0.002).1);
    assert_ne!(market(5, 0.002).1, market(6, 0.002).1);
}

#[test]
fn bond_position_pays_one_at_maturity() {
    // 1/K underlying and -1/K synthetic longs bought at delta, held to expiry
    let (_, chain) = market(2, 0.002);
    let mut checked = 0;
    for t in [5u32, 10, 30] {
        for (s, q) in chain.series_on(t) {
            if !q.is_complete() || s.expiry > chain.last_date().unwrap() {
                continue;
            }
            let spot = chain.spot(t, Mark::Open).unwrap();
            let sl = chain.sl_price(t, s, Mark::Open).unwrap();
            let cost = spot / s.k() - sl / s.k();
            assert!((cost - discount_factor(spot, sl, s.k()).unwrap()).abs() < 1e-15);
            let s_m = chain.spot(s.expiry, Mark::Close).unwrap();
            let legs = OptionType::Call.payoff(s_m, s.k()) - OptionType::Put.payoff(s_m, s.k());
            let payoff = s_m / s.k() - legs / s.k();
            assert!((payoff - 1.0).abs() < 1e-12, "{s}: {payoff}");
            checked += 1;
        }
    }
    assert!(checked > 20);
}

#[test]
fn features_use_only_data_before_the_decision_date() {
    let (cfg, chain) = market(3, 0.002);
    let settings = FeatureSettings {
        rate: cfg.rate,
        clock: cfg.clock(),
    };
    for t in [3u32, 25, 60] {
        let nodes: Vec<SeriesKey> = chain.series_on(t).map(|(s, _)| *s).collect();
        let full = node_features(&chain, &nodes, t, &settings);
        let past = node_features(&chain.truncated(t - 1), &nodes, t, &settings);
        assert_eq!(full, past, "date {t}");
        assert!(targets(&chain, &nodes, t).iter().any(|y| y.is_some()));
        assert!(targets(&chain.truncated(t - 1), &nodes, t).iter().all(|y| y.is_none()));
    }
}

#[test]
fn features_of_arbitrage_free_market_have_zero_y() {
    let (cfg, chain) = market(4, 0.0);
    let settings = FeatureSettings {
        rate: cfg.rate,
        clock: cfg.clock(),
    };
    let nodes: Vec<SeriesKey> = chain.series_on(40).map(|(s, _)| *s).collect();
    for f in node_features(&chain, &nodes, 40, &settings) {
        for y in &f[2..7] {
            assert!(y.abs() < 1e-10);
        }
        // implied vols recover the generating volatility away from the wings,
        // where prices reach the generator's floor
        if f[0].abs() < 10.0 {
            assert!((f[7] - cfg.vol).abs() < 1e-4);
            assert!((f[8] - cfg.vol).abs() < 1e-4);
        }
    }
}

proptest! {
    #[test]
    fn present_value_is_linear_and_discounts(
        a in -1e3f64..1e3, b in -1e3f64..1e3, days in 0u32..500, rate in 0.0f64..0.1
    ) {
        let clock = IntradayClock::default();
        let (tau, m) = (clock.open(10), clock.maturity(10 + days));
        let pv = |x: f64| present_value(x, m, tau, rate).unwrap();
        prop_assert!((pv(a + b) - pv(a) - pv(b)).abs() <= 1e-9);
        let years = (m.value() - tau.value()) / 252.0;
        prop_assert!((pv(1.0) - (-rate * years).exp()).abs() < 1e-15);
        prop_assert!(pv(1.0) <= 1.0);
    }
}
