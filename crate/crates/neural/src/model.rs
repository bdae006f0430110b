//! Model specifications, construction, parameter-count matching and
//! checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::{BenchConfig, BenchModel, ConvKind};
use crate::ctx::Ctx;
use crate::error::{NeuralError, Result};
use crate::graph::GraphBatch;
use crate::params::ParamStore;
use crate::rnode::{RnconvConfig, RnconvModel};
use crate::tape::Var;

pub const CHECKPOINT_FORMAT: &str = "pcparb-checkpoint/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arch {
    Rnconv,
    Gcn,
    Sage,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Rnconv => "RNC",
            Arch::Gcn => "GCN",
            Arch::Sage => "SAGE",
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Arch {
    type Err = NeuralError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RNC" | "RNCONV" => Ok(Arch::Rnconv),
            "GCN" => Ok(Arch::Gcn),
            "SAGE" => Ok(Arch::Sage),
            other => Err(NeuralError::Config(format!("unknown architecture {other}"))),
        }
    }
}

/// Architecture and size of a model. `width` is the size knob matched to a
/// parameter budget: the tree count per layer for RNConv and the hidden
/// width for the benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub n_in: usize,
    pub depth: usize,
    pub width: usize,
    pub tree_depth: usize,
}

impl ModelSpec {
    pub fn new(arch: Arch, n_in: usize, depth: usize, width: usize) -> Self {
        Self {
            arch,
            n_in,
            depth,
            width,
            tree_depth: 3,
        }
    }

    pub fn rnconv_config(&self) -> RnconvConfig {
        let mut c = RnconvConfig::new(self.n_in, self.depth, self.width);
        c.rnode.depth = self.tree_depth;
        c
    }

    fn bench_config(&self, kind: ConvKind) -> BenchConfig {
        BenchConfig {
            kind,
            n_in: self.n_in,
            n_layers: self.depth,
            hidden: self.width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Net {
    Rnconv(RnconvModel),
    Bench(BenchModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: ModelSpec,
    pub net: Net,
}

impl Model {
    /// Build a model, registering its tensors in `store`.
    pub fn build(spec: ModelSpec, store: &mut ParamStore, seed: u64) -> Result<Self> {
        let net = match spec.arch {
            Arch::Rnconv => Net::Rnconv(RnconvModel::new(store, seed, spec.rnconv_config())?),
            Arch::Gcn => Net::Bench(BenchModel::new(store, seed, spec.bench_config(ConvKind::Gcn))?),
            Arch::Sage => Net::Bench(BenchModel::new(store, seed, spec.bench_config(ConvKind::Sage))?),
        };
        Ok(Self { spec, net })
    }

    /// One prediction per node, `n x 1`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var, graph: &GraphBatch) -> Result<Var> {
        match &self.net {
            Net::Rnconv(m) => m.forward(ctx, x, graph),
            Net::Bench(m) => m.forward(ctx, x, graph),
        }
    }
}

/// Number of trainable scalars of a specification.
pub fn param_count(spec: ModelSpec) -> Result<usize> {
    let mut store = ParamStore::new();
    Model::build(spec, &mut store, 0)?;
    Ok(store.n_trainable())
}

/// The size knob in `1..=max_width` whose parameter count is closest to
/// `target`; ties go to the smaller knob. Counts must be non-decreasing in
/// the knob, which lets the scan stop once counts pass the target.
pub fn match_param_count(count: impl Fn(usize) -> Result<usize>, target: usize, max_width: usize) -> Result<usize> {
    if max_width == 0 {
        return Err(NeuralError::Config("empty size range".into()));
    }
    let mut best = (usize::MAX, 1);
    for w in 1..=max_width {
        let c = count(w)?;
        let gap = c.abs_diff(target);
        if gap < best.0 {
            best = (gap, w);
        }
        if c >= target {
            break;
        }
    }
    Ok(best.1)
}

/// Serialized model: specification, every tensor and running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub spec: ModelSpec,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(spec: ModelSpec, params: &ParamStore) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            spec,
            params: params.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ck: Checkpoint = serde_json::from_reader(file)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(NeuralError::Checkpoint(format!("unsupported format tag {}", ck.format)));
        }
        Ok(ck)
    }

    /// Rebuild the model and its tensors.
    pub fn restore(&self) -> Result<(Model, ParamStore)> {
        let mut store = ParamStore::new();
        let model = Model::build(self.spec, &mut store, 0)?;
        store.load_values(&self.params)?;
        Ok((model, store))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matching_picks_closest_with_small_ties() {
        let counts = [10usize, 90, 210];
        let f = |w: usize| Ok(counts[w - 1]);
        assert_eq!(match_param_count(f, 100, 3).unwrap(), 2);
        assert_eq!(match_param_count(f, 90, 3).unwrap(), 2);
        assert_eq!(match_param_count(f, 50, 3).unwrap(), 1);
        assert_eq!(match_param_count(f, 1000, 3).unwrap(), 3);
    }

    #[test]
    fn arch_parses() {
        assert_eq!("rnc".parse::<Arch>().unwrap(), Arch::Rnconv);
        assert_eq!("Sage".parse::<Arch>().unwrap(), Arch::Sage);
        assert!("gat".parse::<Arch>().is_err());
    }
}
