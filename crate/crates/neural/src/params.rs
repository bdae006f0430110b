//! Parameter storage, initialization and the Adam optimizer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::tape::Mat;

/// Index of a tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub value: Mat,
    /// Buffers (running normalization statistics) are stored but not trained.
    pub trainable: bool,
}

/// Named tensors of a model: trainable parameters and state buffers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        self.push(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        self.push(name.into(), value, false)
    }

    fn push(&mut self, name: String, value: Mat, trainable: bool) -> ParamId {
        self.entries.push(Entry { name, value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &Entry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|id| self.entries[id.0].trainable).collect()
    }

    /// Number of trainable scalars.
    pub fn n_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    /// `(name, size)` of every trainable tensor.
    pub fn census(&self) -> Vec<(String, usize)> {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| (e.name.clone(), e.value.len()))
            .collect()
    }

    /// Replace values from another store with the same layout.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(NeuralError::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            if a.name != b.name || a.value.dim() != b.value.dim() {
                return Err(NeuralError::Checkpoint(format!(
                    "tensor {} {:?} does not match {} {:?}",
                    a.name,
                    a.value.dim(),
                    b.name,
                    b.value.dim()
                )));
            }
            a.value.assign(&b.value);
        }
        Ok(())
    }
}

/// Uniform Glorot initialization for a `rows x cols` weight.
pub fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_shape_fn((rows, cols), |_| rng.random_range(-a..a))
}

/// Standard normal entries scaled by `std`.
pub fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| std * rng.sample::<f64, _>(StandardNormal))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: i32,
    m: Vec<Option<Mat>>,
    v: Vec<Option<Mat>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Mat)]) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        for (id, g) in grads {
            if !store.entry(*id).trainable {
                continue;
            }
            let m = self.m[id.0].get_or_insert_with(|| Mat::zeros(g.dim()));
            let v = self.v[id.0].get_or_insert_with(|| Mat::zeros(g.dim()));
            m.zip_mut_with(g, |mi, gi| *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi);
            v.zip_mut_with(g, |vi, gi| *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi);
            let p = store.get_mut(*id);
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|pi, mi, vi| {
                *pi -= c.lr * (mi / bc1) / ((vi / bc2).sqrt() + c.eps);
            });
        }
    }
}
