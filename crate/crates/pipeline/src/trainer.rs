//! Walk-forward training with grid search and parameter-count matching.
//!
//! For each round the quantile scalers are fitted on the training graphs,
//! every (depth, parameter budget) cell is trained on scaled targets with
//! early stopping on raw-unit validation MSE, the cell with the lowest
//! validation MSE is selected and only then are the test graphs scored.

use std::collections::BTreeMap;

use pcparb_core::asset::SeriesKey;
use pcparb_core::graph::{ArbGraph, N_FEATURES};
use pcparb_core::scaler::{QuantileScaler, QuantileTransform};
use pcparb_core::time::TradingDate;
use pcparb_neural::{
    apply_running_updates, match_param_count, param_count, Adam, AdamConfig, Arch, Checkpoint, Ctx, GraphBatch,
    Mat, Mode, Model, ModelSpec, ParamStore,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::stats::mse;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub archs: Vec<Arch>,
    /// Graph convolution layer counts searched.
    pub depth_grid: Vec<usize>,
    /// Trainable parameter budgets searched.
    pub param_targets: Vec<usize>,
    /// Upper bound of the size knob scanned by parameter matching.
    pub max_width: usize,
    /// Depth of every RNODE tree.
    pub tree_depth: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Graphs per training mini-batch, joined as one disjoint graph.
    pub batch_graphs: usize,
    /// Worker threads across grid cells; 0 uses the available cores.
    pub threads: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            archs: vec![Arch::Rnconv, Arch::Gcn, Arch::Sage],
            depth_grid: vec![3, 4, 5],
            param_targets: vec![1_000, 5_000, 10_000],
            max_width: 256,
            tree_depth: 3,
            lr: 1e-3,
            max_epochs: 80,
            patience: 8,
            batch_graphs: 4,
            threads: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.depth_grid.is_empty() || self.param_targets.is_empty() || self.archs.is_empty() {
            return bad("architectures, depth grid and parameter targets must be non-empty");
        }
        if self.depth_grid.contains(&0) || self.max_width == 0 || self.tree_depth == 0 {
            return bad("depths, max width and tree depth must be positive");
        }
        if self.max_epochs == 0 || self.batch_graphs == 0 {
            return bad("max epochs and batch size must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }

    fn n_threads(&self) -> usize {
        if self.threads > 0 {
            self.threads
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}

/// Target scaling: a quantile transform, or the constant when training
/// targets take a single value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TargetScaler {
    Quantile(QuantileTransform),
    Constant(f64),
}

impl TargetScaler {
    pub fn fit(values: &[f64]) -> Result<Self> {
        let first = *values.first().ok_or_else(|| PipelineError::EmptySplit("no training targets".into()))?;
        if values.iter().all(|v| *v == first) {
            return Ok(Self::Constant(first));
        }
        Ok(Self::Quantile(QuantileTransform::fit(values)?))
    }

    pub fn transform(&self, y: f64) -> f64 {
        match self {
            Self::Quantile(q) => q.transform(y),
            Self::Constant(_) => 0.0,
        }
    }

    pub fn inverse(&self, z: f64) -> f64 {
        match self {
            Self::Quantile(q) => q.inverse(z),
            Self::Constant(c) => *c,
        }
    }
}

/// A selected model with the scalers it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundModel {
    pub round: usize,
    pub checkpoint: Checkpoint,
    pub features: QuantileScaler,
    pub target: TargetScaler,
}

impl RoundModel {
    /// Raw-unit predictions, one vector per graph in node order.
    pub fn predict(&self, graphs: &[&ArbGraph]) -> Result<Vec<Vec<f64>>> {
        let (model, store) = self.checkpoint.restore()?;
        let samples = graphs
            .iter()
            .map(|g| Sample::new(g, &self.features, &self.target))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(EVAL_CHUNK) {
            let batch = Batch::join(chunk.iter());
            let z = forward_eval(&model, &store, &batch)?;
            let mut offset = 0;
            for s in chunk {
                let n = s.graph.n_nodes();
                out.push(z[offset..offset + n].iter().map(|v| self.target.inverse(*v)).collect());
                offset += n;
            }
        }
        Ok(out)
    }
}

/// Phases of a round in the order they touched data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Access {
    Train,
    Val,
    Selected,
    Test,
}

/// Graphs of one round. Test graphs are only reachable through
/// [`RoundData::open_test`], which records the access.
pub struct RoundData<'a> {
    pub round: usize,
    pub p_univ: usize,
    pub train: Vec<&'a ArbGraph>,
    pub val: Vec<&'a ArbGraph>,
    test: Vec<&'a ArbGraph>,
}

impl<'a> RoundData<'a> {
    pub fn new(round: usize, p_univ: usize, train: Vec<&'a ArbGraph>, val: Vec<&'a ArbGraph>, test: Vec<&'a ArbGraph>) -> Self {
        Self {
            round,
            p_univ,
            train,
            val,
            test,
        }
    }

    pub fn n_test(&self) -> usize {
        self.test.len()
    }

    pub fn open_test(&self, log: &mut Vec<Access>) -> &[&'a ArbGraph] {
        log.push(Access::Test);
        &self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub depth: usize,
    pub param_target: usize,
    pub width: usize,
    pub n_params: usize,
    pub val_mse: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePrediction {
    pub date: TradingDate,
    pub series: SeriesKey,
    pub y_hat: f64,
    pub y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    pub round: usize,
    pub arch: Arch,
    pub p_univ: usize,
    pub cells: Vec<CellResult>,
    pub selected: usize,
    pub val_mse: f64,
    pub test_mse: f64,
    /// MSE of predicting zero on the test nodes.
    pub zero_mse: f64,
    pub n_test_nodes: usize,
    pub predictions: Vec<NodePrediction>,
    pub access_log: Vec<Access>,
    pub model: RoundModel,
}

const EVAL_CHUNK: usize = 64;

struct Sample {
    graph: GraphBatch,
    x: Vec<[f64; N_FEATURES]>,
    y_raw: Vec<Option<f64>>,
    y_z: Vec<f64>,
}

impl Sample {
    fn new(g: &ArbGraph, features: &QuantileScaler, target: &TargetScaler) -> Result<Self> {
        let x = g
            .features
            .iter()
            .map(|row| {
                let z = features.transform_row(row)?;
                let mut out = [0.0; N_FEATURES];
                out.copy_from_slice(&z);
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            graph: GraphBatch::new(g.n_nodes(), &g.edges)?,
            x,
            y_z: g.targets.iter().map(|y| y.map_or(0.0, |v| target.transform(v))).collect(),
            y_raw: g.targets.clone(),
        })
    }
}

/// Disjoint union of samples.
struct Batch {
    graph: GraphBatch,
    x: Mat,
    y_z: Vec<f64>,
    y_raw: Vec<Option<f64>>,
    mask: Vec<f64>,
}

impl Batch {
    fn join<'s>(samples: impl Iterator<Item = &'s Sample> + Clone) -> Self {
        let parts: Vec<GraphBatch> = samples.clone().map(|s| s.graph.clone()).collect();
        let graph = GraphBatch::union(&parts);
        let mut rows = Vec::new();
        let mut y_z = Vec::new();
        let mut y_raw = Vec::new();
        for s in samples {
            rows.extend(s.x.iter().flat_map(|r| r.iter().copied()));
            y_z.extend_from_slice(&s.y_z);
            y_raw.extend_from_slice(&s.y_raw);
        }
        let n = y_z.len();
        Self {
            graph,
            x: Mat::from_shape_vec((n, N_FEATURES), rows).expect("row-major feature block"),
            mask: y_raw.iter().map(|y| if y.is_some() { 1.0 } else { 0.0 }).collect(),
            y_z,
            y_raw,
        }
    }
}

fn forward_eval(model: &Model, store: &ParamStore, batch: &Batch) -> Result<Vec<f64>> {
    let mut ctx = Ctx::new(store, Mode::Eval, 0);
    let x = ctx.input(batch.x.clone());
    let out = model.forward(&mut ctx, x, &batch.graph)?;
    Ok(ctx.value(out).column(0).to_vec())
}

/// Raw-unit squared-error sum and count over nodes with targets.
fn raw_sse(model: &Model, store: &ParamStore, batches: &[Batch], target: &TargetScaler) -> Result<(f64, usize)> {
    let mut sse = 0.0;
    let mut n = 0;
    for b in batches {
        let z = forward_eval(model, store, b)?;
        for (zi, y) in z.iter().zip(&b.y_raw) {
            if let Some(y) = y {
                sse += (target.inverse(*zi) - y).powi(2);
                n += 1;
            }
        }
    }
    Ok((sse, n))
}

/// SplitMix64 finaliser for deriving independent seeds.
pub fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed;
    for p in parts {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(*p);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

fn arch_code(a: Arch) -> u64 {
    match a {
        Arch::Rnconv => 1,
        Arch::Gcn => 2,
        Arch::Sage => 3,
    }
}

struct CellOutcome {
    result: CellResult,
    model: Model,
    store: ParamStore,
}

fn train_cell(
    spec: ModelSpec,
    param_target: usize,
    seed: u64,
    cfg: &TrainConfig,
    train: &[Sample],
    val: &[Batch],
    target: &TargetScaler,
) -> Result<CellOutcome> {
    let mut store = ParamStore::new();
    let model = Model::build(spec, &mut store, seed)?;
    let n_params = store.n_trainable();
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0x5eed]));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let (sse, n) = raw_sse(&model, &store, val, target)?;
    let mut best = (sse / n.max(1) as f64, 0usize, store.clone());
    let mut epochs_run = 0;
    let mut step = 0u64;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_graphs) {
            let batch = Batch::join(chunk.iter().map(|i| &train[*i]));
            if batch.mask.iter().all(|m| *m == 0.0) {
                continue;
            }
            step += 1;
            let (grads, updates) = {
                let mut ctx = Ctx::new(&store, Mode::Train, mix_seed(seed, &[step]));
                let x = ctx.input(batch.x.clone());
                let out = model.forward(&mut ctx, x, &batch.graph)?;
                let loss = ctx.tape.masked_mse(out, &batch.y_z, &batch.mask)?;
                let g = ctx.tape.backward(loss);
                (ctx.param_grads(&g), ctx.into_running_updates())
            };
            adam.step(&mut store, &grads);
            apply_running_updates(&mut store, &updates);
        }
        epochs_run = epoch;
        let (sse, n) = raw_sse(&model, &store, val, target)?;
        let v = sse / n.max(1) as f64;
        if !v.is_finite() {
            log::warn!("{} depth {} width {}: non-finite validation error, stopping", spec.arch, spec.depth, spec.width);
            break;
        }
        if v < best.0 {
            best = (v, epoch, store.clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    Ok(CellOutcome {
        result: CellResult {
            depth: spec.depth,
            param_target,
            width: spec.width,
            n_params,
            val_mse: best.0,
            best_epoch: best.1,
            epochs_run,
        },
        model,
        store: best.2,
    })
}

/// Train, select and test one architecture on one round.
pub fn train_round(data: &RoundData, arch: Arch, cfg: &TrainConfig) -> Result<RoundResult> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() || data.n_test() == 0 {
        return Err(PipelineError::EmptySplit(format!(
            "round {}: {} train, {} val, {} test graphs",
            data.round,
            data.train.len(),
            data.val.len(),
            data.n_test()
        )));
    }
    let mut log = vec![Access::Train];
    let rows: Vec<Vec<f64>> = data
        .train
        .iter()
        .flat_map(|g| g.features.iter().map(|r| r.to_vec()))
        .collect();
    let features = QuantileScaler::fit(&rows)?;
    let ys: Vec<f64> = data.train.iter().flat_map(|g| g.targets.iter().flatten().copied()).collect();
    let target = TargetScaler::fit(&ys)?;
    let train = data
        .train
        .iter()
        .map(|g| Sample::new(g, &features, &target))
        .collect::<Result<Vec<_>>>()?;

    log.push(Access::Val);
    let val_samples = data
        .val
        .iter()
        .map(|g| Sample::new(g, &features, &target))
        .collect::<Result<Vec<_>>>()?;
    let val: Vec<Batch> = val_samples.chunks(EVAL_CHUNK).map(|c| Batch::join(c.iter())).collect();

    let mut cells = Vec::new();
    for &depth in &cfg.depth_grid {
        for &target_count in &cfg.param_targets {
            let mut spec = ModelSpec::new(arch, N_FEATURES, depth, 1);
            spec.tree_depth = cfg.tree_depth;
            let width = match_param_count(
                |w| param_count(ModelSpec { width: w, ..spec }),
                target_count,
                cfg.max_width,
            )?;
            spec.width = width;
            let seed = mix_seed(cfg.seed, &[data.round as u64, arch_code(arch), depth as u64, target_count as u64]);
            cells.push((spec, target_count, seed));
        }
    }
    let outcomes = run_cells(&cells, cfg, &train, &val, &target)?;
    let selected = outcomes
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.result.val_mse.total_cmp(&b.1.result.val_mse).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    log.push(Access::Selected);
    let best = &outcomes[selected];
    let model = RoundModel {
        round: data.round,
        checkpoint: Checkpoint::new(best.model.spec, &best.store),
        features,
        target,
    };
    log::info!(
        "round {} {}: selected depth {} width {} ({} params), val mse {:.4e}",
        data.round,
        arch,
        best.result.depth,
        best.result.width,
        best.result.n_params,
        best.result.val_mse
    );

    let test = data.open_test(&mut log);
    let preds = model.predict(test)?;
    let mut predictions = Vec::new();
    let (mut p, mut t) = (Vec::new(), Vec::new());
    for (g, yh) in test.iter().zip(&preds) {
        for ((s, y), v) in g.nodes.iter().zip(&g.targets).zip(yh) {
            predictions.push(NodePrediction {
                date: g.date,
                series: *s,
                y_hat: *v,
                y: *y,
            });
            if let Some(y) = y {
                p.push(*v);
                t.push(*y);
            }
        }
    }
    if t.is_empty() {
        return Err(PipelineError::EmptySplit(format!("round {}: no test targets", data.round)));
    }
    let zeros = vec![0.0; t.len()];
    Ok(RoundResult {
        round: data.round,
        arch,
        p_univ: data.p_univ,
        val_mse: best.result.val_mse,
        test_mse: mse(&p, &t)?,
        zero_mse: mse(&zeros, &t)?,
        n_test_nodes: t.len(),
        cells: outcomes.iter().map(|o| o.result.clone()).collect(),
        selected,
        predictions,
        access_log: log,
        model,
    })
}

/// Train every cell, spreading cells over worker threads. Results keep the
/// cell order, and each cell is deterministic in its own seed.
fn run_cells(
    cells: &[(ModelSpec, usize, u64)],
    cfg: &TrainConfig,
    train: &[Sample],
    val: &[Batch],
    target: &TargetScaler,
) -> Result<Vec<CellOutcome>> {
    let threads = cfg.n_threads().min(cells.len()).max(1);
    let run = |i: usize| {
        let (spec, count, seed) = cells[i];
        train_cell(spec, count, seed, cfg, train, val, target)
    };
    if threads == 1 {
        return (0..cells.len()).map(run).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results = std::sync::Mutex::new(BTreeMap::new());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let r = run(i);
                results.lock().expect("result lock").insert(i, r);
            });
        }
    });
    results.into_inner().expect("result lock").into_values().collect()
}
