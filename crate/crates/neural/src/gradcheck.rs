//! Central finite-difference gradient checks.
//!
//! The checked scalar is `sum(out ⊙ W)` for a fixed random weight `W`, so
//! every output entry contributes with a distinct weight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ctx::{Ctx, Mode};
use crate::error::Result;
use crate::params::ParamStore;
use crate::tape::{Mat, Var};

pub const STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub analytic_norm: f64,
    pub rel_err: f64,
}

fn weights(shape: (usize, usize), seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    Mat::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn scalar(store: &ParamStore, mode: Mode, seed: u64, w: &Mat, f: &impl Fn(&mut Ctx) -> Result<Var>) -> Result<f64> {
    let mut ctx = Ctx::new(store, mode, seed);
    let out = f(&mut ctx)?;
    Ok((ctx.value(out) * w).sum())
}

/// Compare analytic and numeric gradients for every trainable tensor of
/// `store`. The relative error of a tensor is
/// `|g_a - g_n| / max(|g_a|, |g_n|, floor)` in the Euclidean norm; `floor`
/// guards tensors whose true gradient vanishes. `seed` fixes dropout masks
/// so every evaluation sees the same function.
pub fn check_gradients(
    store: &ParamStore,
    mode: Mode,
    seed: u64,
    floor: f64,
    f: impl Fn(&mut Ctx) -> Result<Var>,
) -> Result<Vec<TensorCheck>> {
    let (analytic, shape) = {
        let mut ctx = Ctx::new(store, mode, seed);
        let out = f(&mut ctx)?;
        let shape = ctx.value(out).dim();
        let w = weights(shape, seed);
        let wv = ctx.tape.leaf(w);
        let prod = ctx.tape.mul(out, wv)?;
        let loss = ctx.tape.sum(prod);
        let grads = ctx.tape.backward(loss);
        (ctx.param_grads(&grads), shape)
    };
    let w = weights(shape, seed);
    let mut report = Vec::new();
    for id in store.trainable_ids() {
        let entry = store.entry(id);
        let g_a = analytic
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| Mat::zeros(entry.value.dim()));
        let mut g_n = Mat::zeros(entry.value.dim());
        let mut probe = store.clone();
        for idx in 0..entry.value.len() {
            let (r, c) = (idx / entry.value.ncols(), idx % entry.value.ncols());
            let orig = entry.value[[r, c]];
            probe.get_mut(id)[[r, c]] = orig + STEP;
            let up = scalar(&probe, mode, seed, &w, &f)?;
            probe.get_mut(id)[[r, c]] = orig - STEP;
            let down = scalar(&probe, mode, seed, &w, &f)?;
            probe.get_mut(id)[[r, c]] = orig;
            g_n[[r, c]] = (up - down) / (2.0 * STEP);
        }
        let norm = |m: &Mat| m.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff = norm(&(&g_a - &g_n));
        let scale = norm(&g_a).max(norm(&g_n)).max(floor);
        report.push(TensorCheck {
            name: entry.name.clone(),
            analytic_norm: norm(&g_a),
            rel_err: diff / scale,
        });
    }
    Ok(report)
}
