//! Revised oblivious-tree layer and the graph convolution built on it.
//!
//! An RNODE layer maps `x` to split scores `MLP(CrossNet(x))`, normalizes
//! every score column without affine parameters, gates it with
//! `sigma_alpha(gamma * .)` and mixes per-tree leaf responses. An RNConv
//! layer averages a neighbour-aggregated RNODE transform with a second RNODE
//! transform of the node concatenated with that aggregate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cross::{CrossNet, CrossVariant, Mlp};
use crate::ctx::Ctx;
use crate::error::{NeuralError, Result};
use crate::graph::GraphBatch;
use crate::params::{normal, ParamId, ParamStore};
use crate::tape::{Mat, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RnodeConfig {
    pub n_trees: usize,
    pub depth: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub cross_layers: usize,
}

impl Default for RnodeConfig {
    fn default() -> Self {
        Self {
            n_trees: 4,
            depth: 3,
            gamma: 5.0,
            alpha: 1.5,
            cross_layers: 2,
        }
    }
}

impl RnodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.depth == 0 || self.cross_layers == 0 {
            return Err(NeuralError::Config("tree count, depth and cross layers must be positive".into()));
        }
        if !(self.alpha > 1.0) {
            return Err(NeuralError::Config(format!("entmax alpha must exceed 1, got {}", self.alpha)));
        }
        if !self.gamma.is_finite() {
            return Err(NeuralError::Config("gamma must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnodeLayer {
    pub n_in: usize,
    pub config: RnodeConfig,
    pub cross: CrossNet,
    pub mlp: Mlp,
    pub vbn_mean: ParamId,
    pub vbn_var: ParamId,
    /// Leaf responses, `n_trees x 2^depth`.
    pub responses: ParamId,
}

impl RnodeLayer {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, n_in: usize, config: RnodeConfig) -> Result<Self> {
        config.validate()?;
        let splits = config.n_trees * config.depth;
        let cross = CrossNet::new(
            store,
            rng,
            &format!("{name}.cross"),
            n_in,
            config.cross_layers,
            CrossVariant::BatchNorm,
        )?;
        let mlp = Mlp::new(store, rng, &format!("{name}.mlp"), n_in, splits);
        Ok(Self {
            n_in,
            config,
            cross,
            mlp,
            vbn_mean: store.add_buffer(format!("{name}.vbn.running_mean"), Mat::zeros((1, splits))),
            vbn_var: store.add_buffer(format!("{name}.vbn.running_var"), Mat::ones((1, splits))),
            responses: store.add(
                format!("{name}.responses"),
                normal(rng, config.n_trees, 1 << config.depth, 1.0),
            ),
        })
    }

    /// Split gates, `n x (n_trees * depth)` with tree `j`, split `k` in
    /// column `j * depth + k`.
    pub fn gates(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.cross.forward(ctx, x)?;
        let scores = self.mlp.forward(ctx, h)?;
        let normed = ctx.normalize(scores, self.vbn_mean, self.vbn_var)?;
        let scaled = ctx.tape.scale(normed, self.config.gamma);
        Ok(ctx.tape.gate(scaled, self.config.alpha))
    }

    /// Tree outputs, `n x n_trees`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let c = self.gates(ctx, x)?;
        let r = ctx.param(self.responses);
        ctx.tape.tree_mix(c, r, self.config.depth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnconvLayer {
    pub n_in: usize,
    pub self_tree: RnodeLayer,
    pub joint_tree: RnodeLayer,
}

impl RnconvLayer {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, n_in: usize, config: RnodeConfig) -> Result<Self> {
        Ok(Self {
            n_in,
            self_tree: RnodeLayer::new(store, rng, &format!("{name}.rnl1"), n_in, config)?,
            joint_tree: RnodeLayer::new(store, rng, &format!("{name}.rnl2"), n_in + config.n_trees, config)?,
        })
    }

    /// Output `(h1 + h2) / 2`, `n x n_trees`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var, graph: &GraphBatch, q1: f64) -> Result<Var> {
        let n = ctx.value(x).nrows();
        if n != graph.n_nodes() {
            return Err(NeuralError::Shape(format!("{n} node rows for a graph of {} nodes", graph.n_nodes())));
        }
        let z1 = self.self_tree.forward(ctx, x)?;
        let z1 = ctx.dropout(z1, q1)?;
        let h1 = ctx.tape.propagate(z1, graph.mean_operator())?;
        let joint = ctx.tape.concat_cols(&[x, h1])?;
        let h2 = self.joint_tree.forward(ctx, joint)?;
        let h2 = ctx.dropout(h2, q1)?;
        let sum = ctx.tape.add(h1, h2)?;
        Ok(ctx.tape.scale(sum, 0.5))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RnconvConfig {
    pub n_in: usize,
    pub n_layers: usize,
    pub rnode: RnodeConfig,
    pub q1: f64,
    pub q2: f64,
}

impl RnconvConfig {
    pub fn new(n_in: usize, n_layers: usize, n_trees: usize) -> Self {
        Self {
            n_in,
            n_layers,
            rnode: RnodeConfig {
                n_trees,
                ..RnodeConfig::default()
            },
            q1: 0.5,
            q2: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnconvModel {
    pub config: RnconvConfig,
    pub layers: Vec<RnconvLayer>,
}

impl RnconvModel {
    pub fn new(store: &mut ParamStore, seed: u64, config: RnconvConfig) -> Result<Self> {
        if config.n_in == 0 || config.n_layers == 0 {
            return Err(NeuralError::Config("input width and layer count must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = config.rnode.n_trees;
        let layers = (0..config.n_layers)
            .map(|l| {
                let n_in = if l == 0 { config.n_in } else { config.n_in + t };
                RnconvLayer::new(store, &mut rng, &format!("rnc{l}"), n_in, config.rnode)
            })
            .collect::<Result<_>>()?;
        Ok(Self { config, layers })
    }

    /// One prediction per node, `n x 1`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var, graph: &GraphBatch) -> Result<Var> {
        let c = &self.config;
        let width = ctx.value(x).ncols();
        if width != c.n_in {
            return Err(NeuralError::Shape(format!("model expects width {}, got {width}", c.n_in)));
        }
        let xd = ctx.dropout(x, c.q2)?;
        let mut running_sum: Option<Var> = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let e = match running_sum {
                None => xd,
                Some(s) => {
                    let mean = ctx.tape.scale(s, 1.0 / l as f64);
                    ctx.tape.concat_cols(&[xd, mean])?
                }
            };
            let out = layer.forward(ctx, e, graph, c.q1)?;
            running_sum = Some(match running_sum {
                None => out,
                Some(s) => ctx.tape.add(s, out)?,
            });
        }
        let total = running_sum.expect("at least one layer");
        let summed = ctx.tape.sum_cols(total);
        Ok(ctx.tape.scale(summed, 1.0 / (c.rnode.n_trees * c.n_layers) as f64))
    }
}
