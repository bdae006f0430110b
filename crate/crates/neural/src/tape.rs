//! Reverse-mode automatic differentiation over row-batched matrices.
//!
//! Every value is an `n x m` matrix whose rows are samples. Operations append
//! nodes to a [`Tape`]; [`Tape::backward`] walks the tape in reverse and
//! returns the gradient of a scalar loss with respect to every node.

use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};

use crate::entmax::{entmax, entmax_vjp, gate, gate_grad};
use crate::error::{NeuralError, Result};

pub type Mat = Array2<f64>;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

/// Sparse row operator: row `i` of the product is `sum_j w_ij x_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sparse {
    pub n_cols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl Sparse {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    DivRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Mat),
    LeakyRelu(Var, f64),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    Standardize { x: Var, inv_std: Array1<f64> },
    Gate { x: Var, alpha: f64 },
    EntmaxRows { x: Var, alpha: f64 },
    TreeMix { gates: Var, r: Var, depth: usize },
    Propagate { x: Var, w: Arc<Sparse> },
    SumCols(Var),
    Sum(Var),
    MaskedMse { pred: Var, target: Array1<f64>, mask: Array1<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a loss with respect to every node of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }
}

fn shape_err(op: &str, a: &Mat, b: &Mat) -> NeuralError {
    NeuralError::Shape(format!("{op}: {:?} vs {:?}", a.dim(), b.dim()))
}

/// Product of the `depth` gate factors selecting `leaf`, skipping factor
/// `skip` when given. Bit `k` of the leaf (most significant first) picks
/// `c` when zero and `1 - c` when one.
fn leaf_weight(c: &[f64], leaf: usize, skip: Option<usize>) -> f64 {
    let d = c.len();
    let mut w = 1.0;
    for (k, &ck) in c.iter().enumerate() {
        if Some(k) == skip {
            continue;
        }
        let bit = (leaf >> (d - 1 - k)) & 1;
        w *= if bit == 0 { ck } else { 1.0 - ck };
    }
    w
}

/// Leaf probabilities of one oblivious tree from its `depth` gate values:
/// the outer product of the pairs `(c_k, 1 - c_k)`.
pub fn choice_tensor(c: &[f64]) -> Vec<f64> {
    (0..1usize << c.len()).map(|leaf| leaf_weight(c, leaf, None)).collect()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(shape_err("matmul", va, vb));
        }
        let out = va.dot(vb);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(shape_err(op, va, vb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a) - self.value(b);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a) * self.value(b);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    fn row_check(&self, op: &str, a: Var, row: Var) -> Result<()> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(shape_err(op, va, vr));
        }
        Ok(())
    }

    /// Adds a `1 x m` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_check("add_row", a, row)?;
        let out = self.value(a) + self.value(row);
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// Multiplies every row of `a` elementwise by a `1 x m` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_check("mul_row", a, row)?;
        let out = self.value(a) * self.value(row);
        Ok(self.push(out, Op::MulRow(a, row)))
    }

    /// Divides every row of `a` elementwise by a `1 x m` row.
    pub fn div_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_check("div_row", a, row)?;
        let out = self.value(a) / self.value(row);
        Ok(self.push(out, Op::DivRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a) * s;
        self.push(out, Op::Scale(a, s))
    }

    /// Elementwise product with a constant matrix (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, c: Mat) -> Result<Var> {
        let va = self.value(a);
        if va.dim() != c.dim() {
            return Err(shape_err("mul_const", va, &c));
        }
        let out = va * &c;
        Ok(self.push(out, Op::MulConst(a, c)))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(NeuralError::Shape("concat of nothing".into()));
        }
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| NeuralError::Shape(format!("concat: {e}")))?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Column standardization by batch statistics (biased variance), with
    /// gradients flowing through the statistics. Returns the output with the
    /// batch mean and variance.
    pub fn standardize(&mut self, x: Var, eps: f64) -> Result<(Var, Array1<f64>, Array1<f64>)> {
        let vx = self.value(x);
        let n = vx.nrows();
        if n < 2 {
            return Err(NeuralError::BatchTooSmall(n));
        }
        let mean = vx.mean_axis(Axis(0)).expect("non-empty batch");
        let var = vx.var_axis(Axis(0), 0.0);
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let out = (vx - &mean) * &inv_std;
        let v = self.push(out, Op::Standardize { x, inv_std });
        Ok((v, mean, var))
    }

    /// Elementwise two-class entmax gate.
    pub fn gate(&mut self, x: Var, alpha: f64) -> Var {
        let out = self.value(x).mapv(|v| gate(v, alpha));
        self.push(out, Op::Gate { x, alpha })
    }

    /// Row-wise alpha-entmax.
    pub fn entmax_rows(&mut self, x: Var, alpha: f64) -> Var {
        let vx = self.value(x);
        let mut out = Mat::zeros(vx.dim());
        for (mut o, row) in out.rows_mut().into_iter().zip(vx.rows()) {
            let p = entmax(&row.to_vec(), alpha);
            o.assign(&Array1::from(p));
        }
        self.push(out, Op::EntmaxRows { x, alpha })
    }

    /// Oblivious-tree leaf mixture. `gates` is `n x (T*depth)` with tree `j`,
    /// split `k` at column `j*depth + k`; `r` is `T x 2^depth`. The output is
    /// `n x T` with entry `(i, j) = sum_leaf r[j, leaf] * C_j(x_i)[leaf]`.
    pub fn tree_mix(&mut self, gates: Var, r: Var, depth: usize) -> Result<Var> {
        let (vg, vr) = (self.value(gates), self.value(r));
        let t = vr.nrows();
        if depth == 0 || vr.ncols() != 1 << depth || vg.ncols() != t * depth {
            return Err(shape_err("tree_mix", vg, vr));
        }
        let n = vg.nrows();
        let mut out = Mat::zeros((n, t));
        for i in 0..n {
            for j in 0..t {
                let c: Vec<f64> = (0..depth).map(|k| vg[[i, j * depth + k]]).collect();
                out[[i, j]] = (0..1usize << depth).map(|l| vr[[j, l]] * leaf_weight(&c, l, None)).sum();
            }
        }
        Ok(self.push(out, Op::TreeMix { gates, r, depth }))
    }

    /// Sparse row mixing `W x`.
    pub fn propagate(&mut self, x: Var, w: Arc<Sparse>) -> Result<Var> {
        let vx = self.value(x);
        if vx.nrows() != w.n_cols {
            return Err(NeuralError::Shape(format!(
                "propagate: operator has {} columns, input has {} rows",
                w.n_cols,
                vx.nrows()
            )));
        }
        let mut out = Mat::zeros((w.n_rows(), vx.ncols()));
        for (i, row) in w.rows.iter().enumerate() {
            for &(j, wij) in row {
                out.row_mut(i).scaled_add(wij, &vx.row(j));
            }
        }
        Ok(self.push(out, Op::Propagate { x, w }))
    }

    /// Row sums, `n x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(out, Op::SumCols(a))
    }

    /// Sum of all entries, `1 x 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Mat::from_elem((1, 1), s), Op::Sum(a))
    }

    /// Mean squared error of an `n x 1` prediction over rows with nonzero
    /// mask weight. Zero when the mask is empty.
    pub fn masked_mse(&mut self, pred: Var, target: &[f64], mask: &[f64]) -> Result<Var> {
        let vp = self.value(pred);
        if vp.ncols() != 1 || vp.nrows() != target.len() || target.len() != mask.len() {
            return Err(NeuralError::Shape(format!(
                "masked_mse: prediction {:?}, {} targets, {} mask entries",
                vp.dim(),
                target.len(),
                mask.len()
            )));
        }
        let w: f64 = mask.iter().sum();
        let loss = if w > 0.0 {
            (0..target.len())
                .map(|i| mask[i] * (vp[[i, 0]] - target[i]).powi(2))
                .sum::<f64>()
                / w
        } else {
            0.0
        };
        let op = Op::MaskedMse {
            pred,
            target: Array1::from(target.to_vec()),
            mask: Array1::from(mask.to_vec()),
        };
        Ok(self.push(Mat::from_elem((1, 1), loss), op))
    }

    /// Gradients of the sum of `loss`'s entries with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Mat>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Mat::ones(self.value(loss).dim()));
        let acc = |grads: &mut Vec<Option<Mat>>, v: Var, g: Mat| match &mut grads[v.0] {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        };
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, -&g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &g * self.value(*b));
                    acc(&mut grads, *b, &g * self.value(*a));
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g.clone());
                }
                Op::MulRow(a, row) => {
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, &g * self.value(*row));
                }
                Op::DivRow(a, row) => {
                    let vr = self.value(*row);
                    let gr = -(&g * &node.value / vr).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, &g / vr);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, &g * *s),
                Op::MulConst(a, c) => acc(&mut grads, *a, &g * c),
                Op::LeakyRelu(a, slope) => {
                    let mut ga = g.clone();
                    ga.zip_mut_with(self.value(*a), |gi, &x| {
                        if x <= 0.0 {
                            *gi *= slope
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut grads, *p, g.slice(ndarray::s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::Standardize { x, inv_std } => {
                    let xhat = &node.value;
                    let n = xhat.nrows() as f64;
                    let g_sum = g.sum_axis(Axis(0));
                    let gx_sum = (&g * xhat).sum_axis(Axis(0));
                    let gx = ((&g * n) - &g_sum - xhat * &gx_sum) * &(inv_std / n);
                    acc(&mut grads, *x, gx);
                }
                Op::Gate { x, alpha } => {
                    let mut gx = g.clone();
                    gx.zip_mut_with(self.value(*x), |gi, &xi| *gi *= gate_grad(xi, *alpha));
                    acc(&mut grads, *x, gx);
                }
                Op::EntmaxRows { x, alpha } => {
                    let mut gx = Mat::zeros(g.dim());
                    for ((mut o, p), gr) in gx.rows_mut().into_iter().zip(node.value.rows()).zip(g.rows()) {
                        let v = entmax_vjp(&p.to_vec(), *alpha, &gr.to_vec());
                        o.assign(&Array1::from(v));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::TreeMix { gates, r, depth } => {
                    let (vg, vr) = (self.value(*gates), self.value(*r));
                    let d = *depth;
                    let mut gg = Mat::zeros(vg.dim());
                    let mut gr = Mat::zeros(vr.dim());
                    for i in 0..vg.nrows() {
                        for j in 0..vr.nrows() {
                            let go = g[[i, j]];
                            if go == 0.0 {
                                continue;
                            }
                            let c: Vec<f64> = (0..d).map(|k| vg[[i, j * d + k]]).collect();
                            for l in 0..1usize << d {
                                gr[[j, l]] += go * leaf_weight(&c, l, None);
                                for k in 0..d {
                                    let sign = if (l >> (d - 1 - k)) & 1 == 0 { 1.0 } else { -1.0 };
                                    gg[[i, j * d + k]] += go * vr[[j, l]] * sign * leaf_weight(&c, l, Some(k));
                                }
                            }
                        }
                    }
                    acc(&mut grads, *gates, gg);
                    acc(&mut grads, *r, gr);
                }
                Op::Propagate { x, w } => {
                    let mut gx = Mat::zeros(self.value(*x).dim());
                    for (i, row) in w.rows.iter().enumerate() {
                        for &(j, wij) in row {
                            gx.row_mut(j).scaled_add(wij, &g.row(i));
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SumCols(a) => {
                    let m = self.value(*a).ncols();
                    let ga = g.broadcast((g.nrows(), m)).expect("column broadcast").to_owned();
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let ga = Mat::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::MaskedMse { pred, target, mask } => {
                    let vp = self.value(*pred);
                    let w: f64 = mask.sum();
                    let mut gp = Mat::zeros(vp.dim());
                    if w > 0.0 {
                        for i in 0..vp.nrows() {
                            gp[[i, 0]] = g[[0, 0]] * 2.0 * mask[i] * (vp[[i, 0]] - target[i]) / w;
                        }
                    }
                    acc(&mut grads, *pred, gp);
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }
}
