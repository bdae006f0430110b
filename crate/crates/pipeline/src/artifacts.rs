//! Artifact files of a run directory and the full end-to-end run.

use std::path::{Path, PathBuf};

use pcparb_core::chain::{load_chain, save_chain, ChainSchema, ChainTable};
use pcparb_core::graph::ArbGraph;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::pipeline::{
    backtest, build_graphs, mse_rows, predict, report, select_universes, simulate, train, BacktestArtifact,
    PredictionRow, Report, UniverseArtifact,
};
use crate::trainer::RoundResult;

pub const CHAIN: &str = "chain.csv";
pub const UNIVERSES: &str = "universes.json";
pub const GRAPHS: &str = "graphs.json";
pub const TRAIN: &str = "train.json";
pub const PREDICTIONS: &str = "predictions.csv";
pub const BACKTEST: &str = "backtest.json";
pub const REPORT_DIR: &str = "report";

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingArtifact(path.display().to_string()))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(file, value)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    require(path)?;
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(file)?)
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    require(path)?;
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(PipelineError::from)).collect()
}

/// Files of one run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// The configured chain file, or the simulated one in the run directory.
    pub fn chain(&self, cfg: &PipelineConfig) -> Result<ChainTable> {
        let (path, schema) = match &cfg.data.path {
            Some(p) => (p.clone(), cfg.data.schema.clone()),
            None => (self.path(CHAIN), ChainSchema::default()),
        };
        require(&path)?;
        Ok(load_chain(&path, &schema)?)
    }
}

/// Outputs of a full run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutputs {
    pub universes: UniverseArtifact,
    pub n_graphs: usize,
    pub results: Vec<RoundResult>,
    pub predictions: Vec<PredictionRow>,
    pub backtest: BacktestArtifact,
    pub report: Report,
}

pub fn stage_simulate(cfg: &PipelineConfig, dir: &RunDir) -> Result<ChainTable> {
    std::fs::create_dir_all(&dir.root)?;
    let chain = simulate(cfg)?;
    save_chain(dir.path(CHAIN), &chain, &ChainSchema::default())?;
    log::info!("simulated {} quotes (seed {})", chain.n_quotes(), cfg.seed);
    Ok(chain)
}

pub fn stage_universes(cfg: &PipelineConfig, dir: &RunDir) -> Result<UniverseArtifact> {
    let chain = dir.chain(cfg)?;
    let u = select_universes(cfg, &chain)?;
    write_json(&dir.path(UNIVERSES), &u)?;
    Ok(u)
}

pub fn stage_graphs(cfg: &PipelineConfig, dir: &RunDir) -> Result<Vec<ArbGraph>> {
    let chain = dir.chain(cfg)?;
    let u: UniverseArtifact = read_json(&dir.path(UNIVERSES))?;
    let graphs = build_graphs(cfg, &chain, &u);
    write_json(&dir.path(GRAPHS), &graphs)?;
    Ok(graphs)
}

pub fn stage_train(cfg: &PipelineConfig, dir: &RunDir) -> Result<Vec<RoundResult>> {
    let u: UniverseArtifact = read_json(&dir.path(UNIVERSES))?;
    let graphs: Vec<ArbGraph> = read_json(&dir.path(GRAPHS))?;
    let results = train(cfg, &u.plan, u.p_univ, &graphs)?;
    write_json(&dir.path(TRAIN), &results)?;
    Ok(results)
}

pub fn stage_predict(dir: &RunDir) -> Result<Vec<PredictionRow>> {
    let u: UniverseArtifact = read_json(&dir.path(UNIVERSES))?;
    let graphs: Vec<ArbGraph> = read_json(&dir.path(GRAPHS))?;
    let results: Vec<RoundResult> = read_json(&dir.path(TRAIN))?;
    let rows = predict(&results, &u.plan, &graphs)?;
    write_predictions(&dir.path(PREDICTIONS), &rows)?;
    Ok(rows)
}

pub fn stage_backtest(cfg: &PipelineConfig, dir: &RunDir) -> Result<BacktestArtifact> {
    let chain = dir.chain(cfg)?;
    let rows = read_predictions(&dir.path(PREDICTIONS))?;
    let bt = backtest(cfg, &chain, &rows, &cfg.backtest.strategies)?;
    write_json(&dir.path(BACKTEST), &bt)?;
    Ok(bt)
}

pub fn stage_report(cfg: &PipelineConfig, dir: &RunDir) -> Result<Report> {
    let u: UniverseArtifact = read_json(&dir.path(UNIVERSES))?;
    let results: Vec<RoundResult> = read_json(&dir.path(TRAIN))?;
    let rows = read_predictions(&dir.path(PREDICTIONS))?;
    let bt: BacktestArtifact = read_json(&dir.path(BACKTEST))?;
    report(cfg, &u.plan, &u, mse_rows(&results), &rows, &bt, &dir.path(REPORT_DIR))
}

/// Every stage in order, through the artifact files.
pub fn run_all(cfg: &PipelineConfig, dir: &RunDir) -> Result<RunOutputs> {
    if cfg.data.path.is_none() {
        stage_simulate(cfg, dir)?;
    }
    let universes = stage_universes(cfg, dir)?;
    let graphs = stage_graphs(cfg, dir)?;
    let results = stage_train(cfg, dir)?;
    let predictions = stage_predict(dir)?;
    let backtest = stage_backtest(cfg, dir)?;
    let report = stage_report(cfg, dir)?;
    Ok(RunOutputs {
        universes,
        n_graphs: graphs.len(),
        results,
        predictions,
        backtest,
        report,
    })
}
