//! Walk-forward training on small hand-built graphs.

use pcparb::stats::mse;
use pcparb::trainer::{train_round, Access, RoundData, TrainConfig};
use pcparb::PipelineError;
use pcparb_core::asset::SeriesKey;
use pcparb_core::graph::{ArbGraph, N_FEATURES};
use pcparb_neural::Arch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Eight nodes on two maturities, chained by strike in both directions.
fn graph(date: u32, rng: &mut ChaCha8Rng, target: impl Fn(&[f64; N_FEATURES]) -> f64) -> ArbGraph {
    let nodes: Vec<SeriesKey> = [40u32, 60]
        .iter()
        .flat_map(|e| (0..4).map(move |i| SeriesKey::new(*e, 95.0 + 2.5 * i as f64).unwrap()))
        .collect();
    let mut edges = Vec::new();
    for g in 0..2 {
        for i in 0..3 {
            edges.push((4 * g + i, 4 * g + i + 1));
            edges.push((4 * g + i + 1, 4 * g + i));
        }
    }
    let features: Vec<[f64; N_FEATURES]> = (0..nodes.len())
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
        .collect();
    let targets = features.iter().map(|f| Some(target(f))).collect();
    ArbGraph {
        date,
        nodes,
        edges,
        features,
        targets,
    }
}

fn graphs(n: usize, seed: u64, target: impl Fn(&[f64; N_FEATURES]) -> f64 + Copy) -> Vec<ArbGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|d| graph(d as u32 + 1, &mut rng, target)).collect()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        archs: vec![Arch::Gcn],
        depth_grid: vec![1, 2],
        param_targets: vec![200, 600],
        max_width: 32,
        tree_depth: 2,
        max_epochs: 3,
        patience: 2,
        batch_graphs: 2,
        threads: 1,
        ..TrainConfig::default()
    }
}

fn split(g: &[ArbGraph]) -> RoundData<'_> {
    let refs: Vec<&ArbGraph> = g.iter().collect();
    RoundData::new(1, 8, refs[..12].to_vec(), refs[12..16].to_vec(), refs[16..].to_vec())
}

fn signal(f: &[f64; N_FEATURES]) -> f64 {
    1e-3 * f[2] + 5e-4 * f[3] * f[0]
}

#[test]
fn constant_zero_targets_give_zero_test_error() {
    let g = graphs(20, 1, |_| 0.0);
    for arch in [Arch::Rnconv, Arch::Gcn, Arch::Sage] {
        let r = train_round(&split(&g), arch, &small_config()).unwrap();
        assert!(r.test_mse <= 1e-6, "{arch}: {}", r.test_mse);
        assert_eq!(r.zero_mse, 0.0);
    }
}

#[test]
fn access_log_keeps_test_data_last() {
    let g = graphs(20, 2, signal);
    let r = train_round(&split(&g), Arch::Sage, &small_config()).unwrap();
    assert_eq!(r.access_log, vec![Access::Train, Access::Val, Access::Selected, Access::Test]);
}

#[test]
fn selection_takes_the_lowest_validation_error() {
    let g = graphs(20, 3, signal);
    let r = train_round(&split(&g), Arch::Rnconv, &small_config()).unwrap();
    assert_eq!(r.cells.len(), 4);
    let best = r.cells.iter().map(|c| c.val_mse).fold(f64::INFINITY, f64::min);
    assert_eq!(r.cells[r.selected].val_mse, best);
    assert_eq!(r.val_mse, best);
    let first = r.cells.iter().position(|c| c.val_mse == best).unwrap();
    assert_eq!(r.selected, first);
}

#[test]
fn reported_errors_match_the_predictions() {
    let g = graphs(20, 4, signal);
    let r = train_round(&split(&g), Arch::Gcn, &small_config()).unwrap();
    assert_eq!(r.predictions.len(), 4 * 8);
    let p: Vec<f64> = r.predictions.iter().map(|x| x.y_hat).collect();
    let t: Vec<f64> = r.predictions.iter().map(|x| x.y.unwrap()).collect();
    assert_eq!(r.n_test_nodes, t.len());
    assert!((r.test_mse - mse(&p, &t).unwrap()).abs() <= 1e-15);
    let z = t.iter().map(|y| y * y).sum::<f64>() / t.len() as f64;
    assert!((r.zero_mse - z).abs() <= 1e-18);
    // the stored model reproduces the predictions in raw units
    let test: Vec<&ArbGraph> = g[16..].iter().collect();
    let again: Vec<f64> = r.model.predict(&test).unwrap().concat();
    assert_eq!(again, p);
}

#[test]
fn test_targets_do_not_influence_selection() {
    let g = graphs(20, 5, signal);
    let mut shifted = g.clone();
    for x in &mut shifted[16..] {
        for y in x.targets.iter_mut().flatten() {
            *y += 1.0;
        }
    }
    let cfg = small_config();
    let a = train_round(&split(&g), Arch::Sage, &cfg).unwrap();
    let b = train_round(&split(&shifted), Arch::Sage, &cfg).unwrap();
    assert_eq!(a.cells, b.cells);
    assert_eq!(a.model, b.model);
    assert_ne!(a.test_mse, b.test_mse);
}

#[test]
fn reruns_and_thread_counts_are_bit_identical() {
    let g = graphs(20, 6, signal);
    let cfg = small_config();
    let a = train_round(&split(&g), Arch::Rnconv, &cfg).unwrap();
    let b = train_round(&split(&g), Arch::Rnconv, &cfg).unwrap();
    let c = train_round(&split(&g), Arch::Rnconv, &TrainConfig { threads: 3, ..cfg.clone() }).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    let d = train_round(&split(&g), Arch::Rnconv, &TrainConfig { seed: 99, ..cfg }).unwrap();
    assert_ne!(a.model, d.model);
}

#[test]
fn learns_a_node_level_signal() {
    let g = graphs(60, 7, signal);
    let refs: Vec<&ArbGraph> = g.iter().collect();
    let data = RoundData::new(1, 8, refs[..40].to_vec(), refs[40..50].to_vec(), refs[50..].to_vec());
    let cfg = TrainConfig {
        depth_grid: vec![2],
        param_targets: vec![600],
        max_epochs: 40,
        patience: 10,
        ..small_config()
    };
    let r = train_round(&data, Arch::Sage, &cfg).unwrap();
    assert!(r.test_mse < 0.5 * r.zero_mse, "test {} zero {}", r.test_mse, r.zero_mse);
}

#[test]
fn empty_splits_are_rejected() {
    let g = graphs(20, 8, signal);
    let refs: Vec<&ArbGraph> = g.iter().collect();
    let data = RoundData::new(1, 8, refs[..10].to_vec(), Vec::new(), refs[10..].to_vec());
    let err = train_round(&data, Arch::Gcn, &small_config()).unwrap_err();
    assert!(matches!(err, PipelineError::EmptySplit(_)));
    let bad = TrainConfig {
        depth_grid: Vec::new(),
        ..small_config()
    };
    assert!(train_round(&split(&g), Arch::Gcn, &bad).is_err());
}
