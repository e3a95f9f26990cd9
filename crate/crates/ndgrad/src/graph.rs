//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every op in creation order, which is already a
//! topological order. [`Graph::backward`] walks the tape once in reverse and
//! accumulates (sums) gradients into each parent, so shared subexpressions
//! receive the total derivative.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, GradError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const LEAKY_RELU_SLOPE: f64 = 0.2;
pub const ELU_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    LeakyRelu,
    Elu,
}

impl Activation {
    pub const ALL: [Activation; 6] = [
        Activation::Identity,
        Activation::Relu,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::LeakyRelu,
        Activation::Elu,
    ];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    LEAKY_RELU_SLOPE * x
                }
            }
            Activation::Elu => {
                if x >= 0.0 {
                    x
                } else {
                    ELU_ALPHA * x.exp_m1()
                }
            }
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    1.0
                } else {
                    LEAKY_RELU_SLOPE
                }
            }
            Activation::Elu => {
                if x >= 0.0 {
                    1.0
                } else {
                    y + ELU_ALPHA
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    Act(usize, Activation),
    Softplus(usize),
    Square(usize),
    Abs(usize),
    Sum(usize),
    SliceCols {
        src: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    LayerNorm {
        src: usize,
        inv_std: Vec<f64>,
    },
    Pinball {
        pred: usize,
        target: Tensor,
        taus: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input: gradients are tracked.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// Fixed input: no gradient is computed for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// Gradient of the last `backward` output with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, parents: &[usize]) -> Result<Var> {
        if !value.is_finite() {
            return Err(GradError::NonFinite { op: op_name });
        }
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        Ok(self.push_node(value, op, requires_grad))
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a).matmul(self.val(b))?;
        self.push("matmul", out, Op::MatMul(a.0, b.0), &[a.0, b.0])
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa != sb {
            return dim_err(op, format!("{sa:?} vs {sb:?}"));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.val(a), self.val(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push("add", out, Op::Add(a.0, b.0), &[a.0, b.0])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push("sub", out, Op::Sub(a.0, b.0), &[a.0, b.0])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push("mul", out, Op::Mul(a.0, b.0), &[a.0, b.0])
    }

    /// `a[r, c] + row[1, c]`, broadcasting the row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.val(a), self.val(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return dim_err("add_row", format!("{:?} + {:?}", ta.shape(), tr.shape()));
        }
        let c = ta.cols();
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (x, &b) in chunk.iter_mut().zip(tr.data()) {
                *x += b;
            }
        }
        let out = Tensor::new(vec![ta.rows(), c], data)?;
        self.push("add_row", out, Op::AddRow(a.0, row.0), &[a.0, row.0])
    }

    /// `a[r, c] * col[r, 1]`, scaling each row of `a` by its own factor.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ta, tc) = (self.val(a), self.val(col));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return dim_err("mul_col", format!("{:?} * {:?}", ta.shape(), tc.shape()));
        }
        let c = ta.cols();
        let mut data = ta.data().to_vec();
        for (chunk, &s) in data.chunks_mut(c).zip(tc.data()) {
            for x in chunk.iter_mut() {
                *x *= s;
            }
        }
        let out = Tensor::new(vec![ta.rows(), c], data)?;
        self.push("mul_col", out, Op::MulCol(a.0, col.0), &[a.0, col.0])
    }

    /// `a[r, c] * row[1, c]`, scaling each column of `a` by its own factor.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.val(a), self.val(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return dim_err("mul_row", format!("{:?} * {:?}", ta.shape(), tr.shape()));
        }
        let c = ta.cols();
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (x, &s) in chunk.iter_mut().zip(tr.data()) {
                *x *= s;
            }
        }
        let out = Tensor::new(vec![ta.rows(), c], data)?;
        self.push("mul_row", out, Op::MulRow(a.0, row.0), &[a.0, row.0])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.val(a).map(|x| x * factor);
        self.push("scale", out, Op::Scale(a.0, factor), &[a.0])
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Result<Var> {
        if act == Activation::Identity {
            return Ok(a);
        }
        let out = self.val(a).map(|x| act.apply(x));
        self.push("activation", out, Op::Act(a.0, act), &[a.0])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activate(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.activate(a, Activation::Tanh)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).map(softplus);
        self.push("softplus", out, Op::Softplus(a.0), &[a.0])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).map(|x| x * x);
        self.push("square", out, Op::Square(a.0), &[a.0])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).map(f64::abs);
        self.push("abs", out, Op::Abs(a.0), &[a.0])
    }

    /// Sum of all elements as a `[1, 1]` scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.val(a).sum());
        self.push("sum", out, Op::Sum(a.0), &[a.0])
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.val(a);
        let (r, c) = (ta.rows(), ta.cols());
        if start + len > c {
            return dim_err("slice_cols", format!("{start}..{} of {c} columns", start + len));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&ta.data()[i * c + start..i * c + start + len]);
        }
        let out = Tensor::new(vec![r, len], data)?;
        self.push("slice_cols", out, Op::SliceCols { src: a.0, start }, &[a.0])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return dim_err("concat_cols", "no inputs");
        };
        let r = self.val(*first).rows();
        let mut total = 0;
        for p in parts {
            let t = self.val(*p);
            if t.rows() != r {
                return dim_err("concat_cols", format!("row counts {} vs {r}", t.rows()));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                data.extend_from_slice(self.val(*p).row_slice(i));
            }
        }
        let out = Tensor::new(vec![r, total], data)?;
        let idx: Vec<usize> = parts.iter().map(|v| v.0).collect();
        self.push("concat_cols", out, Op::ConcatCols(idx.clone()), &idx)
    }

    /// Row-wise standardisation `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let ta = self.val(a);
        let (r, c) = (ta.rows(), ta.cols());
        let mut data = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = ta.row_slice(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            data.extend(row.iter().map(|x| (x - mean) * is));
        }
        let out = Tensor::new(vec![r, c], data)?;
        self.push("layer_norm", out, Op::LayerNorm { src: a.0, inv_std }, &[a.0])
    }

    /// Summed pinball loss `sum_{i,k} rho_{tau_k}(target_i - pred_{i,k})`.
    ///
    /// `target` is either `[r, 1]` (one realised value per row, broadcast over
    /// quantile columns) or the same shape as `pred`.
    pub fn pinball_sum(&mut self, pred: Var, target: Tensor, taus: &[f64]) -> Result<Var> {
        let tp = self.val(pred);
        let (r, c) = (tp.rows(), tp.cols());
        if taus.len() != c {
            return dim_err("pinball", format!("{} taus for {c} prediction columns", taus.len()));
        }
        let broadcast = target.cols() == 1 && c != 1;
        if target.rows() != r || (!broadcast && target.cols() != c) {
            return dim_err(
                "pinball",
                format!("target {:?} vs prediction {:?}", target.shape(), tp.shape()),
            );
        }
        let mut total = 0.0;
        for i in 0..r {
            for (k, &tau) in taus.iter().enumerate() {
                let y = if broadcast { target.get(i, 0) } else { target.get(i, k) };
                total += pinball(tau, y - tp.get(i, k));
            }
        }
        let out = Tensor::scalar(total);
        self.push(
            "pinball",
            out,
            Op::Pinball {
                pred: pred.0,
                target,
                taus: taus.to_vec(),
            },
            &[pred.0],
        )
    }

    /// Reverse pass from a scalar output. Gradients of earlier passes are discarded.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        let shape = self.nodes[out.0].value.shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(GradError::NonScalarOutput(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::filled(&shape, 1.0));

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], idx: usize, g: Tensor) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        match &mut grads[idx] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                if self.nodes[*a].requires_grad {
                    let ga = g.matmul(&tb.transpose()).expect("matmul grad shape");
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[*b].requires_grad {
                    let gb = ta.transpose().matmul(g).expect("matmul grad shape");
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                self.accumulate(grads, *a, elementwise(g, tb, |gi, bi| gi * bi));
                self.accumulate(grads, *b, elementwise(g, ta, |gi, ai| gi * ai));
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                let c = g.cols();
                let mut gr = vec![0.0; c];
                for chunk in g.data().chunks(c) {
                    for (s, &v) in gr.iter_mut().zip(chunk) {
                        *s += v;
                    }
                }
                self.accumulate(grads, *row, Tensor::row(gr));
            }
            Op::MulCol(a, col) => {
                let (ta, tc) = (&self.nodes[*a].value, &self.nodes[*col].value);
                let c = g.cols();
                let mut ga = g.data().to_vec();
                let mut gc = vec![0.0; tc.rows()];
                for i in 0..tc.rows() {
                    let s = tc.data()[i];
                    for j in 0..c {
                        gc[i] += g.data()[i * c + j] * ta.data()[i * c + j];
                        ga[i * c + j] *= s;
                    }
                }
                self.accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), ga).expect("shape"));
                self.accumulate(grads, *col, Tensor::column(gc));
            }
            Op::MulRow(a, row) => {
                let (ta, tr) = (&self.nodes[*a].value, &self.nodes[*row].value);
                let c = g.cols();
                let mut ga = g.data().to_vec();
                let mut gr = vec![0.0; c];
                for i in 0..ta.rows() {
                    for j in 0..c {
                        gr[j] += g.data()[i * c + j] * ta.data()[i * c + j];
                        ga[i * c + j] *= tr.data()[j];
                    }
                }
                self.accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), ga).expect("shape"));
                self.accumulate(grads, *row, Tensor::row(gr));
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, g.map(|x| x * f)),
            Op::Act(a, act) => {
                let x = &self.nodes[*a].value;
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .zip(y.data())
                    .map(|((gi, &xi), &yi)| gi * act.derivative(xi, yi))
                    .collect();
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), data).expect("shape"));
            }
            Op::Softplus(a) => {
                let x = &self.nodes[*a].value;
                self.accumulate(grads, *a, elementwise(g, x, |gi, xi| gi * sigmoid(xi)));
            }
            Op::Square(a) => {
                let x = &self.nodes[*a].value;
                self.accumulate(grads, *a, elementwise(g, x, |gi, xi| 2.0 * gi * xi));
            }
            Op::Abs(a) => {
                let x = &self.nodes[*a].value;
                self.accumulate(grads, *a, elementwise(g, x, |gi, xi| gi * sign(xi)));
            }
            Op::Sum(a) => {
                let x = &self.nodes[*a].value;
                self.accumulate(grads, *a, Tensor::filled(x.shape(), g.data()[0]));
            }
            Op::SliceCols { src, start } => {
                let x = &self.nodes[*src].value;
                let (c, len) = (x.cols(), g.cols());
                let mut gx = vec![0.0; x.len()];
                for i in 0..x.rows() {
                    gx[i * c + start..i * c + start + len].copy_from_slice(g.row_slice(i));
                }
                self.accumulate(grads, *src, Tensor::new(x.shape().to_vec(), gx).expect("shape"));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let x = &self.nodes[p].value;
                    let len = x.cols();
                    let mut gp = Vec::with_capacity(x.len());
                    for i in 0..x.rows() {
                        gp.extend_from_slice(&g.row_slice(i)[offset..offset + len]);
                    }
                    offset += len;
                    self.accumulate(grads, p, Tensor::new(x.shape().to_vec(), gp).expect("shape"));
                }
            }
            Op::LayerNorm { src, inv_std } => {
                // dx = inv_std * (g - mean(g) - y * mean(g * y))
                let x = &self.nodes[*src].value;
                let c = x.cols();
                let mut gx = Vec::with_capacity(x.len());
                for (i, &is) in inv_std.iter().enumerate() {
                    let gr = g.row_slice(i);
                    let yr = y.row_slice(i);
                    let mean_g = gr.iter().sum::<f64>() / c as f64;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    gx.extend(gr.iter().zip(yr).map(|(&gi, &yi)| is * (gi - mean_g - yi * mean_gy)));
                }
                self.accumulate(grads, *src, Tensor::new(x.shape().to_vec(), gx).expect("shape"));
            }
            Op::Pinball { pred, target, taus } => {
                let tp = &self.nodes[*pred].value;
                let (r, c) = (tp.rows(), tp.cols());
                let broadcast = target.cols() == 1 && c != 1;
                let scale = g.data()[0];
                let mut gp = Vec::with_capacity(r * c);
                for i in 0..r {
                    for (k, &tau) in taus.iter().enumerate() {
                        let t = if broadcast { target.get(i, 0) } else { target.get(i, k) };
                        let d = if t - tp.get(i, k) >= 0.0 { -tau } else { 1.0 - tau };
                        gp.push(scale * d);
                    }
                }
                self.accumulate(grads, *pred, Tensor::new(vec![r, c], gp).expect("shape"));
            }
        }
    }
}

/// Pinball (quantile) loss `rho_tau(xi)`.
pub fn pinball(tau: f64, xi: f64) -> f64 {
    if xi >= 0.0 {
        tau * xi
    } else {
        (tau - 1.0) * xi
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn elementwise(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::new(other.shape().to_vec(), data).expect("shape")
}
