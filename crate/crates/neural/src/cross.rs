//! Low-rank cross network and the multilayer perceptron used for split scores.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctx::Ctx;
use crate::error::{NeuralError, Result};
use crate::params::{glorot, ParamId, ParamStore};
use crate::tape::{Mat, Var};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossVariant {
    /// `x_{l+1} = x ⊙ f_l(x_l) + x_l`, output `x_L`.
    Plain,
    /// `x_{l+1} = x ⊙ f_l(z_l) + z_l` with `z_l = BN(x_l)`, output `BN(x_L)`.
    BatchNorm,
}

/// Rank of the cross interaction: `round(p / 4)`, at least 1.
pub fn cross_rank(p: usize) -> usize {
    ((p as f64 / 4.0).round() as usize).max(1)
}

/// One low-rank interaction `U φ(C φ(Vᵀ z)) + b`, stored in right-multiply
/// form for row batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossLayer {
    pub v: ParamId,
    pub c: ParamId,
    pub u: ParamId,
    pub b: ParamId,
}

/// Batch normalization with learnable scale and shift and running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Mat::ones((1, width))),
            beta: store.add(format!("{name}.beta"), Mat::zeros((1, width))),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Mat::zeros((1, width))),
            running_var: store.add_buffer(format!("{name}.running_var"), Mat::ones((1, width))),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let xhat = ctx.normalize(x, self.running_mean, self.running_var)?;
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        let scaled = ctx.tape.mul_row(xhat, gamma)?;
        ctx.tape.add_row(scaled, beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossNet {
    pub width: usize,
    pub rank: usize,
    pub variant: CrossVariant,
    pub layers: Vec<CrossLayer>,
    /// `layers.len() + 1` normalizations in the batch-normalized variant.
    pub norms: Vec<BatchNorm>,
}

impl CrossNet {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        width: usize,
        n_layers: usize,
        variant: CrossVariant,
    ) -> Result<Self> {
        if width == 0 || n_layers == 0 {
            return Err(NeuralError::Config("cross network sizes must be positive".into()));
        }
        let rank = cross_rank(width);
        let layers = (0..n_layers)
            .map(|l| CrossLayer {
                v: store.add(format!("{name}.{l}.v"), glorot(rng, width, rank)),
                c: store.add(format!("{name}.{l}.c"), glorot(rng, rank, rank)),
                u: store.add(format!("{name}.{l}.u"), glorot(rng, rank, width)),
                b: store.add(format!("{name}.{l}.b"), Mat::zeros((1, width))),
            })
            .collect();
        let norms = match variant {
            CrossVariant::Plain => Vec::new(),
            CrossVariant::BatchNorm => (0..=n_layers)
                .map(|l| BatchNorm::new(store, &format!("{name}.bn{l}"), width))
                .collect(),
        };
        Ok(Self {
            width,
            rank,
            variant,
            layers,
            norms,
        })
    }

    fn interaction(&self, ctx: &mut Ctx, layer: &CrossLayer, z: Var) -> Result<Var> {
        let (v, c, u, b) = (ctx.param(layer.v), ctx.param(layer.c), ctx.param(layer.u), ctx.param(layer.b));
        let t = &mut ctx.tape;
        let h = t.matmul(z, v)?;
        let h = t.leaky_relu(h, LEAKY_SLOPE);
        let h = t.matmul(h, c)?;
        let h = t.leaky_relu(h, LEAKY_SLOPE);
        let h = t.matmul(h, u)?;
        t.add_row(h, b)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let width = ctx.value(x).ncols();
        if width != self.width {
            return Err(NeuralError::Shape(format!("cross network expects width {}, got {width}", self.width)));
        }
        match self.variant {
            CrossVariant::Plain => {
                let mut xl = x;
                for layer in &self.layers {
                    let f = self.interaction(ctx, layer, xl)?;
                    let cross = ctx.tape.mul(x, f)?;
                    xl = ctx.tape.add(cross, xl)?;
                }
                Ok(xl)
            }
            CrossVariant::BatchNorm => {
                let mut z = self.norms[0].forward(ctx, x)?;
                for (layer, norm) in self.layers.iter().zip(&self.norms[1..]) {
                    let f = self.interaction(ctx, layer, z)?;
                    let cross = ctx.tape.mul(x, f)?;
                    let next = ctx.tape.add(cross, z)?;
                    z = norm.forward(ctx, next)?;
                }
                Ok(z)
            }
        }
    }
}

/// Three-layer perceptron with leaky activations; the last layer has neither
/// bias nor activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub weights: Vec<ParamId>,
    pub biases: Vec<ParamId>,
}

/// Hidden width of the score perceptron: `ceil(p / 4)`, at least 1.
pub fn mlp_hidden(p: usize) -> usize {
    p.div_ceil(4).max(1)
}

impl Mlp {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, n_in: usize, n_out: usize) -> Self {
        let h = mlp_hidden(n_in);
        let dims = [(n_in, h), (h, h), (h, n_out)];
        let weights = dims
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| store.add(format!("{name}.w{i}"), glorot(rng, a, b)))
            .collect();
        let biases = (0..2).map(|i| store.add(format!("{name}.b{i}"), Mat::zeros((1, h)))).collect();
        Self { weights, biases }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, w) in self.weights.iter().enumerate() {
            let w = ctx.param(*w);
            h = ctx.tape.matmul(h, w)?;
            if let Some(b) = self.biases.get(i) {
                let b = ctx.param(*b);
                h = ctx.tape.add_row(h, b)?;
                h = ctx.tape.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        Ok(h)
    }
}
