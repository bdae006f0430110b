//! Benchmark graph convolutions: GCN and GraphSAGE stacks with a linear head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cross::LEAKY_SLOPE;
use crate::ctx::Ctx;
use crate::error::{NeuralError, Result};
use crate::graph::GraphBatch;
use crate::params::{glorot, ParamId, ParamStore};
use crate::tape::{Mat, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvKind {
    Gcn,
    Sage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub kind: ConvKind,
    pub n_in: usize,
    pub n_layers: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub w_self: ParamId,
    /// Neighbour weight; SAGE only.
    pub w_nbr: Option<ParamId>,
    pub bias: ParamId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchModel {
    pub config: BenchConfig,
    pub layers: Vec<ConvLayer>,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl BenchModel {
    pub fn new(store: &mut ParamStore, seed: u64, config: BenchConfig) -> Result<Self> {
        if config.n_in == 0 || config.n_layers == 0 || config.hidden == 0 {
            return Err(NeuralError::Config("benchmark sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let layers = (0..config.n_layers)
            .map(|l| {
                let n_in = if l == 0 { config.n_in } else { h };
                ConvLayer {
                    w_self: store.add(format!("conv{l}.w_self"), glorot(&mut rng, n_in, h)),
                    w_nbr: (config.kind == ConvKind::Sage)
                        .then(|| store.add(format!("conv{l}.w_nbr"), glorot(&mut rng, n_in, h))),
                    bias: store.add(format!("conv{l}.bias"), Mat::zeros((1, h))),
                }
            })
            .collect();
        Ok(Self {
            config,
            layers,
            head_w: store.add("head.w", glorot(&mut rng, h, 1)),
            head_b: store.add("head.b", Mat::zeros((1, 1))),
        })
    }

    /// One prediction per node, `n x 1`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var, graph: &GraphBatch) -> Result<Var> {
        let (n, width) = ctx.value(x).dim();
        if n != graph.n_nodes() || width != self.config.n_in {
            return Err(NeuralError::Shape(format!(
                "input {n}x{width} for {} nodes of width {}",
                graph.n_nodes(),
                self.config.n_in
            )));
        }
        let op = match self.config.kind {
            ConvKind::Gcn => graph.gcn_operator(),
            ConvKind::Sage => graph.mean_operator(),
        };
        let mut z = x;
        for layer in &self.layers {
            let w = ctx.param(layer.w_self);
            let b = ctx.param(layer.bias);
            let lin = ctx.tape.matmul(z, w)?;
            let mixed = match layer.w_nbr {
                None => ctx.tape.propagate(lin, op.clone())?,
                Some(wn) => {
                    let wn = ctx.param(wn);
                    let nbr = ctx.tape.propagate(z, op.clone())?;
                    let nl = ctx.tape.matmul(nbr, wn)?;
                    ctx.tape.add(lin, nl)?
                }
            };
            let biased = ctx.tape.add_row(mixed, b)?;
            z = ctx.tape.leaky_relu(biased, LEAKY_SLOPE);
        }
        let hw = ctx.param(self.head_w);
        let hb = ctx.param(self.head_b);
        let out = ctx.tape.matmul(z, hw)?;
        ctx.tape.add_row(out, hb)
    }
}
