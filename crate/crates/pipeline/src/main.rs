use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pcparb::artifacts::{
    stage_backtest, stage_graphs, stage_predict, stage_report, stage_simulate, stage_train, stage_universes, RunDir,
};
use pcparb::PipelineConfig;
use pcparb_core::slsa::PositionKind;

#[derive(Parser)]
#[command(name = "pcparb", version, about = "Put-call-parity arbitrage research pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; the bundled synthetic configuration when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory holding the artifacts.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Sa,
    Bm1,
    Bm2,
}

impl From<Strategy> for PositionKind {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Sa => PositionKind::SA,
            Strategy::Bm1 => PositionKind::BM1,
            Strategy::Bm2 => PositionKind::BM2,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic option chain.
    SimulateData(Common),
    /// Fit tradability models and select the per-date universes.
    SelectUniverse {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        p_univ: Option<usize>,
    },
    /// Build per-date graphs with node features and targets.
    BuildGraphs(Common),
    /// Grid-search and train every architecture on every round.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Predict test windows from the trained checkpoints.
    Predict(Common),
    /// Run the hold-to-maturity backtest.
    Backtest {
        #[command(flatten)]
        common: Common,
        /// Strategies to run; the configured list when omitted.
        #[arg(long, value_enum)]
        strategy: Vec<Strategy>,
        #[arg(long)]
        cost_rate: Option<f64>,
    },
    /// Write metric tables and plot-ready series.
    Report(Common),
}

fn load(common: &Common) -> Result<(PipelineConfig, RunDir)> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::bundled(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    log::info!("run seed {}", cfg.seed);
    Ok((cfg, RunDir::new(&common.out)))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SimulateData(c) => {
            let (cfg, dir) = load(&c)?;
            if cfg.data.path.is_some() {
                bail!("configuration reads chain data from a file; nothing to simulate");
            }
            let chain = stage_simulate(&cfg, &dir)?;
            println!("wrote {} quotes over {} dates", chain.n_quotes(), chain.dates().len());
        }
        Command::SelectUniverse { common, p_univ } => {
            let (mut cfg, dir) = load(&common)?;
            if let Some(p) = p_univ {
                cfg.universe.p_univ = p;
                cfg.validate()?;
            }
            let u = stage_universes(&cfg, &dir)?;
            let feasible = u.days.iter().filter(|d| d.feasible).count();
            println!("{} decision dates, {feasible} with a feasible universe", u.days.len());
        }
        Command::BuildGraphs(c) => {
            let (cfg, dir) = load(&c)?;
            let graphs = stage_graphs(&cfg, &dir)?;
            println!("built {} graphs", graphs.len());
        }
        Command::Train {
            common,
            threads,
            max_epochs,
        } => {
            let (mut cfg, dir) = load(&common)?;
            if let Some(t) = threads {
                cfg.train.threads = t;
            }
            if let Some(e) = max_epochs {
                cfg.train.max_epochs = e;
            }
            cfg.validate()?;
            for r in stage_train(&cfg, &dir)? {
                println!(
                    "round {} {}: val mse {:.4e}, test mse {:.4e}, zero mse {:.4e}",
                    r.round, r.arch, r.val_mse, r.test_mse, r.zero_mse
                );
            }
        }
        Command::Predict(c) => {
            let (_, dir) = load(&c)?;
            let rows = stage_predict(&dir)?;
            println!("wrote {} predictions", rows.len());
        }
        Command::Backtest {
            common,
            strategy,
            cost_rate,
        } => {
            let (mut cfg, dir) = load(&common)?;
            if !strategy.is_empty() {
                cfg.backtest.strategies = strategy.into_iter().map(PositionKind::from).collect();
            }
            if let Some(c) = cost_rate {
                cfg.backtest.cost_rate = c;
            }
            cfg.validate()?;
            for m in stage_backtest(&cfg, &dir)?.metrics {
                println!("{:?}: total P&L {:.6}", m.strategy, m.report.total_pnl);
            }
        }
        Command::Report(c) => {
            let (cfg, dir) = load(&c)?;
            let rep = stage_report(&cfg, &dir)?;
            println!("round arch  val_mse     test_mse    zero_mse");
            for r in &rep.mse {
                println!("{:>5} {:<5} {:.4e}  {:.4e}  {:.4e}", r.round, r.arch, r.val_mse, r.test_mse, r.zero_mse);
            }
            for m in &rep.metrics {
                println!(
                    "{:?}: P&L {:.6}, IR {:?}, effective N {:?}",
                    m.strategy, m.report.total_pnl, m.report.information_ratio, m.report.effective_n
                );
            }
            println!("{} test dates", rep.n_test_dates);
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()).context("pcparb failed") {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
