//! Forward-pass context: tape, parameter leaves, mode, dropout randomness and
//! pending running-statistics updates.

use std::collections::HashMap;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Gradients, Mat, Tape, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics to fold into running buffers after a training step.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningUpdate {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub mean: Array1<f64>,
    /// Unbiased batch variance.
    pub var: Array1<f64>,
}

pub struct Ctx<'s> {
    pub tape: Tape,
    store: &'s ParamStore,
    mode: Mode,
    rng: ChaCha8Rng,
    leaves: HashMap<ParamId, Var>,
    running: Vec<RunningUpdate>,
}

impl<'s> Ctx<'s> {
    /// `seed` drives dropout masks; the same seed reproduces the same masks.
    pub fn new(store: &'s ParamStore, mode: Mode, seed: u64) -> Self {
        Self {
            tape: Tape::new(),
            store,
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            leaves: HashMap::new(),
            running: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Tape leaf holding a parameter; repeated calls return the same leaf.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.leaves.get(&id) {
            return *v;
        }
        let v = self.tape.leaf(self.store.get(id).clone());
        self.leaves.insert(id, v);
        v
    }

    pub fn input(&mut self, x: Mat) -> Var {
        self.tape.leaf(x)
    }

    pub fn value(&self, v: Var) -> &Mat {
        self.tape.value(v)
    }

    /// Inverted dropout: in training each entry is zeroed with probability
    /// `q` and survivors are scaled by `1/(1-q)`. Identity in evaluation.
    pub fn dropout(&mut self, x: Var, q: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&q) {
            return Err(NeuralError::Config(format!("dropout rate {q} outside [0, 1)")));
        }
        if self.mode == Mode::Eval || q == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - q;
        let dim = self.tape.value(x).dim();
        let mask = Mat::from_shape_fn(dim, |_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        self.tape.mul_const(x, mask)
    }

    /// Affine-free batch normalization with running statistics stored in
    /// the buffers `mean_id` and `var_id`. Training uses batch statistics and
    /// records an update; evaluation uses the running statistics.
    pub fn normalize(&mut self, x: Var, mean_id: ParamId, var_id: ParamId) -> Result<Var> {
        match self.mode {
            Mode::Train => {
                let n = self.tape.value(x).nrows();
                let (out, mean, var) = self.tape.standardize(x, BN_EPS)?;
                let unbiased = var * (n as f64 / (n as f64 - 1.0));
                self.running.push(RunningUpdate {
                    mean_id,
                    var_id,
                    mean,
                    var: unbiased,
                });
                Ok(out)
            }
            Mode::Eval => {
                let neg_mean = -self.store.get(mean_id);
                let inv_std = self.store.get(var_id).mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                let m = self.tape.leaf(neg_mean);
                let s = self.tape.leaf(inv_std);
                let centered = self.tape.add_row(x, m)?;
                self.tape.mul_row(centered, s)
            }
        }
    }

    /// Gradients of every trainable parameter used in this pass.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Mat)> {
        let mut out: Vec<(ParamId, Mat)> = self
            .leaves
            .iter()
            .filter(|(id, _)| self.store.entry(**id).trainable)
            .filter_map(|(id, v)| grads.get(*v).map(|g| (*id, g.clone())))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    pub fn running_updates(&self) -> &[RunningUpdate] {
        &self.running
    }

    pub fn into_running_updates(self) -> Vec<RunningUpdate> {
        self.running
    }
}

/// Fold recorded batch statistics into the running buffers.
pub fn apply_running_updates(store: &mut ParamStore, updates: &[RunningUpdate]) {
    for u in updates {
        let m = store.get_mut(u.mean_id);
        ndarray::Zip::from(m.row_mut(0))
            .and(&u.mean)
            .for_each(|r, b| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b);
        let v = store.get_mut(u.var_id);
        ndarray::Zip::from(v.row_mut(0))
            .and(&u.var)
            .for_each(|r, b| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b);
    }
}
