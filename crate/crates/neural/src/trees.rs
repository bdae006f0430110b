//! Oblivious decision trees: the hard tree, its differentiable relaxation and
//! the densely connected ensemble built from it.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctx::Ctx;
use crate::error::{NeuralError, Result};
use crate::params::{normal, ParamId, ParamStore};
use crate::tape::{Mat, Var};

/// Hard oblivious tree. Split `k` compares feature `features[k]` with
/// `thresholds[k]`; a value at or above the threshold takes the first branch.
/// `r` holds the `2^d` leaf responses with the first split as the most
/// significant bit and branch one as bit zero.
pub fn odt_forward(x: &[f64], features: &[usize], thresholds: &[f64], r: &[f64]) -> Result<f64> {
    let d = features.len();
    if thresholds.len() != d || r.len() != 1 << d {
        return Err(NeuralError::Shape(format!(
            "tree of depth {d} needs {d} thresholds and {} responses",
            1 << d
        )));
    }
    let mut leaf = 0usize;
    for (&f, &b) in features.iter().zip(thresholds) {
        let v = *x
            .get(f)
            .ok_or_else(|| NeuralError::Shape(format!("feature {f} outside input of width {}", x.len())))?;
        leaf = (leaf << 1) | usize::from(v - b < 0.0);
    }
    Ok(r[leaf])
}

/// A layer of differentiable oblivious trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdtLayer {
    pub n_in: usize,
    pub n_trees: usize,
    pub depth: usize,
    pub alpha: f64,
    /// Feature scores, `(n_trees * depth) x n_in`.
    pub scores: ParamId,
    /// Thresholds, `1 x (n_trees * depth)`.
    pub thresholds: ParamId,
    /// Temperatures, `1 x (n_trees * depth)`.
    pub scales: ParamId,
    /// Leaf responses, `n_trees x 2^depth`.
    pub responses: ParamId,
}

impl DdtLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        n_in: usize,
        n_trees: usize,
        depth: usize,
        alpha: f64,
    ) -> Result<Self> {
        if n_in == 0 || n_trees == 0 || depth == 0 {
            return Err(NeuralError::Config("tree layer sizes must be positive".into()));
        }
        if !(alpha > 1.0) {
            return Err(NeuralError::Config(format!("entmax alpha must exceed 1, got {alpha}")));
        }
        let splits = n_trees * depth;
        Ok(Self {
            n_in,
            n_trees,
            depth,
            alpha,
            scores: store.add(format!("{name}.scores"), normal(rng, splits, n_in, 1.0)),
            thresholds: store.add(format!("{name}.thresholds"), Mat::zeros((1, splits))),
            scales: store.add(format!("{name}.scales"), Mat::ones((1, splits))),
            responses: store.add(format!("{name}.responses"), normal(rng, n_trees, 1 << depth, 1.0)),
        })
    }

    /// Split gates `c`, `n x (n_trees * depth)`.
    pub fn gates(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let width = ctx.value(x).ncols();
        if width != self.n_in {
            return Err(NeuralError::Shape(format!("tree layer expects width {}, got {width}", self.n_in)));
        }
        if ctx.store().get(self.scales).iter().any(|k| *k == 0.0) {
            return Err(NeuralError::Domain("tree temperature is zero".into()));
        }
        let s = ctx.param(self.scores);
        let b = ctx.param(self.thresholds);
        let kappa = ctx.param(self.scales);
        let t = &mut ctx.tape;
        let sel = t.entmax_rows(s, self.alpha);
        let sel_t = t.transpose(sel);
        let proj = t.matmul(x, sel_t)?;
        let neg_b = t.scale(b, -1.0);
        let shifted = t.add_row(proj, neg_b)?;
        let z = t.div_row(shifted, kappa)?;
        Ok(t.gate(z, self.alpha))
    }

    /// Tree outputs, `n x n_trees`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let c = self.gates(ctx, x)?;
        let r = ctx.param(self.responses);
        ctx.tape.tree_mix(c, r, self.depth)
    }
}

/// Densely connected stack of tree layers; layer `l` sees the input
/// concatenated with the outputs of all earlier layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeModel {
    pub n_in: usize,
    pub layers: Vec<DdtLayer>,
}

impl NodeModel {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        n_in: usize,
        n_layers: usize,
        n_trees: usize,
        depth: usize,
        alpha: f64,
    ) -> Result<Self> {
        let layers = (0..n_layers)
            .map(|l| DdtLayer::new(store, rng, &format!("node.{l}"), n_in + l * n_trees, n_trees, depth, alpha))
            .collect::<Result<_>>()?;
        Ok(Self { n_in, layers })
    }

    /// Sum over layers of each layer's summed tree outputs, `n x 1`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let mut inputs = vec![x];
        let mut total: Option<Var> = None;
        for layer in &self.layers {
            let z = if inputs.len() == 1 { x } else { ctx.tape.concat_cols(&inputs)? };
            let out = layer.forward(ctx, z)?;
            let s = ctx.tape.sum_cols(out);
            total = Some(match total {
                Some(acc) => ctx.tape.add(acc, s)?,
                None => s,
            });
            inputs.push(out);
        }
        total.ok_or_else(|| NeuralError::Config("tree ensemble without layers".into()))
    }
}
