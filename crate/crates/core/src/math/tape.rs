//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation in execution order. Parameters are
//! borrowed from a [`ParamStore`] rather than copied, so a tape lives no
//! longer than the store it reads from. [`Tape::backward`] consumes the tape,
//! replays the recorded rules in reverse order, and returns the gradients of
//! every leaf that requires them.

use std::borrow::Cow;
use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{dot, gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside this module.
pub trait CustomOp: Send + Sync {
    /// Gradient for each input given the upstream gradient of the output.
    /// `None` means "no gradient" for that input.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>>;
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    LogSumExp { x: usize, along_rows: bool },
    Softmax { x: usize, along_rows: bool },
    Concat { inputs: Vec<usize>, stack_rows: bool },
    SliceCols { x: usize, start: usize },
    SelectRow { x: usize, row: usize },
    GatherRows { table: usize, indices: Vec<usize> },
    Pick { x: usize, indices: Vec<usize> },
    Dropout { x: usize, mask: Vec<f64> },
    GradReverse { x: usize, lambda: f64 },
    Sum(usize),
    Custom { inputs: Vec<usize>, rule: Box<dyn CustomOp> },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    param_vars: HashMap<ParamId, usize>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    by_var: HashMap<usize, Vec<f64>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf, if the leaf required one.
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.by_var.get(&var.0).map(Vec::as_slice)
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.by_var.get(v))
            .map(Vec::as_slice)
    }

    /// `(parameter, gradient)` pairs for every parameter reached by the loss.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params
            .iter()
            .filter_map(|(p, v)| self.by_var.get(v).map(|g| (*p, g.as_slice())))
    }
}

fn as_rows_cols(t: &Tensor) -> (usize, usize) {
    match t.shape() {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => (1, t.len()),
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Records an owned leaf; it receives a gradient iff `requires_grad` is set on it.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(Cow::Owned(t), Op::Leaf, rg)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    /// Borrows a parameter from the store. Repeated calls return the same leaf.
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return Var(v);
        }
        let t = store.get(id);
        let v = self.push(Cow::Borrowed(t), Op::Leaf, t.requires_grad());
        self.param_vars.insert(id, v.0);
        v
    }

    /// Borrows a parameter without gradient tracking.
    pub fn frozen_param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        self.push(Cow::Borrowed(store.get(id)), Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2()?;
        let (k2, n) = tb.dims2()?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul {:?} x {:?}: inner dimensions differ",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Cow::Owned(Tensor::matrix(m, n, out)), Op::MatMul(a.0, b.0), rg))
    }

    /// Elementwise sum. `b` may also be a single row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out: Vec<f64> = if ta.shape() == tb.shape() {
            ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect()
        } else {
            let (r, c) = ta.dims2()?;
            let (rb, cb) = tb.dims2()?;
            if rb != 1 || cb != c {
                return Err(Error::Dimension(format!(
                    "add {:?} + {:?}: shapes do not broadcast",
                    ta.shape(),
                    tb.shape()
                )));
            }
            let mut out = ta.data().to_vec();
            for i in 0..r {
                for (o, y) in out[i * c..(i + 1) * c].iter_mut().zip(tb.data()) {
                    *o += y;
                }
            }
            out
        };
        let shape = ta.shape().to_vec();
        let rg = self.rg(a.0) || self.rg(b.0);
        let t = Tensor::new(shape, out)?;
        Ok(self.push(Cow::Owned(t), Op::Add(a.0, b.0), rg))
    }

    /// Elementwise product of equal-shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension(format!(
                "mul {:?} * {:?}: shapes differ",
                ta.shape(),
                tb.shape()
            )));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Cow::Owned(t), Op::Mul(a.0, b.0), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.unary_map(x, |v| v * factor);
        let rg = self.rg(x.0);
        self.push(Cow::Owned(out), Op::Scale(x.0, factor), rg)
    }

    fn unary_map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        Tensor::new(t.shape().to_vec(), data).expect("same shape")
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.unary_map(x, f64::tanh);
        let rg = self.rg(x.0);
        self.push(Cow::Owned(out), Op::Tanh(x.0), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.unary_map(x, sigmoid);
        let rg = self.rg(x.0);
        self.push(Cow::Owned(out), Op::Sigmoid(x.0), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.unary_map(x, |v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(x.0);
        self.push(Cow::Owned(out), Op::Relu(x.0), rg)
    }

    /// Resolves `axis` against a rank-1 or rank-2 value; returns true when the
    /// reduction runs along each row (i.e. over columns).
    fn reduction_axis(&self, x: Var, axis: usize) -> Result<bool> {
        let t = self.value(x);
        match (t.rank(), axis) {
            (1, 0) => Ok(true),
            (2, 0) => Ok(false),
            (2, 1) => Ok(true),
            (r, a) => Err(Error::Dimension(format!(
                "axis {a} out of range for shape {:?} (rank {r})",
                t.shape()
            ))),
        }
    }

    /// Numerically stable `log Σ exp` along `axis`.
    pub fn log_sum_exp(&mut self, x: Var, axis: usize) -> Result<Var> {
        let along_rows = self.reduction_axis(x, axis)?;
        let t = self.value(x);
        let (r, c) = as_rows_cols(t);
        let out = if along_rows {
            let vals: Vec<f64> = (0..r).map(|i| lse(&t.data()[i * c..(i + 1) * c])).collect();
            if t.rank() == 1 {
                Tensor::scalar(vals[0])
            } else {
                Tensor::matrix(r, 1, vals)
            }
        } else {
            let vals = (0..c)
                .map(|j| {
                    let col: Vec<f64> = (0..r).map(|i| t.data()[i * c + j]).collect();
                    lse(&col)
                })
                .collect();
            Tensor::matrix(1, c, vals)
        };
        let rg = self.rg(x.0);
        Ok(self.push(Cow::Owned(out), Op::LogSumExp { x: x.0, along_rows }, rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let along_rows = self.reduction_axis(x, axis)?;
        let t = self.value(x);
        let (r, c) = as_rows_cols(t);
        let mut out = t.data().to_vec();
        if along_rows {
            for i in 0..r {
                softmax_in_place(&mut out[i * c..(i + 1) * c]);
            }
        } else {
            for j in 0..c {
                let mut col: Vec<f64> = (0..r).map(|i| out[i * c + j]).collect();
                softmax_in_place(&mut col);
                for i in 0..r {
                    out[i * c + j] = col[i];
                }
            }
        }
        let t = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(x.0);
        Ok(self.push(Cow::Owned(t), Op::Softmax { x: x.0, along_rows }, rg))
    }

    /// Concatenates matrices: axis 0 stacks rows, axis 1 joins columns.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        if axis > 1 {
            return Err(Error::Dimension(format!("concat axis {axis} out of range")));
        }
        let dims: Vec<(usize, usize)> = xs
            .iter()
            .map(|&v| self.value(v).dims2())
            .collect::<Result<_>>()?;
        let out = if axis == 0 {
            let c = dims[0].1;
            if dims.iter().any(|d| d.1 != c) {
                return Err(Error::Dimension(format!("concat rows: column counts {dims:?}")));
            }
            let r: usize = dims.iter().map(|d| d.0).sum();
            let mut data = Vec::with_capacity(r * c);
            for &v in xs {
                data.extend_from_slice(self.value(v).data());
            }
            Tensor::matrix(r, c, data)
        } else {
            let r = dims[0].0;
            if dims.iter().any(|d| d.0 != r) {
                return Err(Error::Dimension(format!("concat columns: row counts {dims:?}")));
            }
            let c: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(r * c);
            for i in 0..r {
                for (&v, d) in xs.iter().zip(&dims) {
                    data.extend_from_slice(&self.value(v).data()[i * d.1..(i + 1) * d.1]);
                }
            }
            Tensor::matrix(r, c, data)
        };
        let rg = xs.iter().any(|v| self.rg(v.0));
        Ok(self.push(
            Cow::Owned(out),
            Op::Concat {
                inputs: xs.iter().map(|v| v.0).collect(),
                stack_rows: axis == 0,
            },
            rg,
        ))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2()?;
        if start >= end || end > c {
            return Err(Error::Dimension(format!("column range {start}..{end} of {:?}", t.shape())));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&t.data()[i * c + start..i * c + end]);
        }
        let rg = self.rg(x.0);
        Ok(self.push(
            Cow::Owned(Tensor::matrix(r, w, data)),
            Op::SliceCols { x: x.0, start },
            rg,
        ))
    }

    /// Row `row` of a matrix as a `1×c` matrix.
    pub fn select_row(&mut self, x: Var, row: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, _) = t.dims2()?;
        if row >= r {
            return Err(Error::Dimension(format!("row {row} of {:?}", t.shape())));
        }
        let out = Tensor::row(t.row_slice(row).to_vec());
        let rg = self.rg(x.0);
        Ok(self.push(Cow::Owned(out), Op::SelectRow { x: x.0, row }, rg))
    }

    /// Stacks the given rows of `table` into an `indices.len() × c` matrix.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (r, c) = t.dims2()?;
        if indices.is_empty() {
            return Err(Error::Contract("gather of zero rows".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= r {
                return Err(Error::Dimension(format!("row {i} of {:?}", t.shape())));
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let rg = self.rg(table.0);
        Ok(self.push(
            Cow::Owned(Tensor::matrix(indices.len(), c, data)),
            Op::GatherRows {
                table: table.0,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// `out[i] = x[i, indices[i]]` as an `n×1` matrix.
    pub fn pick(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2()?;
        if indices.len() != r || indices.iter().any(|&j| j >= c) {
            return Err(Error::Dimension(format!(
                "pick {} indices from {:?}",
                indices.len(),
                t.shape()
            )));
        }
        let data = indices.iter().enumerate().map(|(i, &j)| t.data()[i * c + j]).collect();
        let rg = self.rg(x.0);
        Ok(self.push(
            Cow::Owned(Tensor::matrix(r, 1, data)),
            Op::Pick {
                x: x.0,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Inverted dropout with a caller-supplied keep mask (`true` keeps the unit).
    /// Passing `None` for `keep` is the evaluation-time identity.
    pub fn dropout(&mut self, x: Var, p: f64, keep: Option<&[bool]>) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout rate {p} outside [0, 1)")));
        }
        let Some(keep) = keep else { return Ok(x) };
        if p == 0.0 {
            return Ok(x);
        }
        let t = self.value(x);
        if keep.len() != t.len() {
            return Err(Error::Dimension(format!(
                "dropout mask of {} for {:?}",
                keep.len(),
                t.shape()
            )));
        }
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = keep.iter().map(|&k| if k { scale } else { 0.0 }).collect();
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(x.0);
        Ok(self.push(Cow::Owned(out), Op::Dropout { x: x.0, mask }, rg))
    }

    /// Identity in the forward pass; multiplies the gradient by `-lambda` going back.
    pub fn grad_reverse(&mut self, x: Var, lambda: f64) -> Result<Var> {
        if lambda.is_nan() || lambda < 0.0 {
            return Err(Error::Parameter(format!("gradient reversal weight {lambda} must be >= 0")));
        }
        let out = self.value(x).clone().with_requires_grad(false);
        let rg = self.rg(x.0);
        Ok(self.push(Cow::Owned(out), Op::GradReverse { x: x.0, lambda }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x.0);
        self.push(Cow::Owned(Tensor::scalar(s)), Op::Sum(x.0), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Records an operation whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, rule: Box<dyn CustomOp>) -> Var {
        let rg = inputs.iter().any(|v| self.rg(v.0));
        self.push(
            Cow::Owned(output),
            Op::Custom {
                inputs: inputs.iter().map(|v| v.0).collect(),
                rule,
            },
            rg,
        )
    }

    /// Back-propagates from a scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, gi) in self.local_backward(i, &g) {
                if !self.nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(gi),
                }
            }
        }

        let mut by_var = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = grads[i].take().unwrap_or_else(|| vec![0.0; node.value.len()]);
                by_var.insert(i, g);
            }
        }
        let mut params: Vec<(ParamId, usize)> = self.param_vars.into_iter().collect();
        params.sort();
        Ok(Gradients { by_var, params })
    }

    fn local_backward(&self, i: usize, g: &[f64]) -> Vec<(usize, Vec<f64>)> {
        let out = &*self.nodes[i].value;
        let val = |j: usize| -> &Tensor { &self.nodes[j].value };
        match &self.nodes[i].op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = ta.dims2().unwrap();
                let (_, n) = tb.dims2().unwrap();
                let mut res = Vec::new();
                if self.rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm_nt_acc(g, tb.data(), &mut ga, m, n, k);
                    res.push((*a, ga));
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm_tn_acc(ta.data(), g, &mut gb, m, k, n);
                    res.push((*b, gb));
                }
                res
            }
            Op::Add(a, b) => {
                let tb = val(*b);
                let gb = if tb.len() == g.len() {
                    g.to_vec()
                } else {
                    let c = tb.len();
                    let mut acc = vec![0.0; c];
                    for row in g.chunks(c) {
                        acc.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                    }
                    acc
                };
                vec![(*a, g.to_vec()), (*b, gb)]
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let ga = g.iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                let gb = g.iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(x, f) => vec![(*x, g.iter().map(|v| v * f).collect())],
            Op::Tanh(x) => vec![(
                *x,
                g.iter().zip(out.data()).map(|(gv, y)| gv * (1.0 - y * y)).collect(),
            )],
            Op::Sigmoid(x) => vec![(
                *x,
                g.iter().zip(out.data()).map(|(gv, y)| gv * y * (1.0 - y)).collect(),
            )],
            Op::Relu(x) => vec![(
                *x,
                g.iter()
                    .zip(val(*x).data())
                    .map(|(gv, v)| if *v > 0.0 { *gv } else { 0.0 })
                    .collect(),
            )],
            Op::LogSumExp { x, along_rows } => {
                let t = val(*x);
                let (r, c) = as_rows_cols(t);
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        let (y, gy) = if *along_rows { (out.data()[i], g[i]) } else { (out.data()[j], g[j]) };
                        gx[i * c + j] = gy * (t.data()[i * c + j] - y).exp();
                    }
                }
                vec![(*x, gx)]
            }
            Op::Softmax { x, along_rows } => {
                let (r, c) = as_rows_cols(out);
                let y = out.data();
                let mut gx = vec![0.0; r * c];
                if *along_rows {
                    for i in 0..r {
                        let s = dot(&g[i * c..(i + 1) * c], &y[i * c..(i + 1) * c]);
                        for j in 0..c {
                            gx[i * c + j] = y[i * c + j] * (g[i * c + j] - s);
                        }
                    }
                } else {
                    for j in 0..c {
                        let s: f64 = (0..r).map(|i| g[i * c + j] * y[i * c + j]).sum();
                        for i in 0..r {
                            gx[i * c + j] = y[i * c + j] * (g[i * c + j] - s);
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::Concat { inputs, stack_rows } => {
                let mut res = Vec::with_capacity(inputs.len());
                if *stack_rows {
                    let mut off = 0;
                    for &inp in inputs {
                        let n = val(inp).len();
                        res.push((inp, g[off..off + n].to_vec()));
                        off += n;
                    }
                } else {
                    let (r, c) = as_rows_cols(out);
                    let mut col = 0;
                    for &inp in inputs {
                        let (_, w) = as_rows_cols(val(inp));
                        let mut gi = Vec::with_capacity(r * w);
                        for i in 0..r {
                            gi.extend_from_slice(&g[i * c + col..i * c + col + w]);
                        }
                        res.push((inp, gi));
                        col += w;
                    }
                }
                res
            }
            Op::SliceCols { x, start } => {
                let (r, c) = as_rows_cols(val(*x));
                let (_, w) = as_rows_cols(out);
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    gx[i * c + start..i * c + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                vec![(*x, gx)]
            }
            Op::SelectRow { x, row } => {
                let (r, c) = as_rows_cols(val(*x));
                let mut gx = vec![0.0; r * c];
                gx[row * c..(row + 1) * c].copy_from_slice(g);
                vec![(*x, gx)]
            }
            Op::GatherRows { table, indices } => {
                let (r, c) = as_rows_cols(val(*table));
                let mut gx = vec![0.0; r * c];
                for (k, &i) in indices.iter().enumerate() {
                    gx[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(&g[k * c..(k + 1) * c])
                        .for_each(|(a, b)| *a += b);
                }
                vec![(*table, gx)]
            }
            Op::Pick { x, indices } => {
                let (r, c) = as_rows_cols(val(*x));
                let mut gx = vec![0.0; r * c];
                for (i, &j) in indices.iter().enumerate() {
                    gx[i * c + j] = g[i];
                }
                vec![(*x, gx)]
            }
            Op::Dropout { x, mask } => vec![(*x, g.iter().zip(mask).map(|(a, m)| a * m).collect())],
            Op::GradReverse { x, lambda } => vec![(*x, g.iter().map(|v| -lambda * v).collect())],
            Op::Sum(x) => vec![(*x, vec![g[0]; val(*x).len()])],
            Op::Custom { inputs, rule } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&j| val(j)).collect();
                rule.backward(&ins, out, g)
                    .into_iter()
                    .zip(inputs)
                    .filter_map(|(gi, &j)| gi.map(|v| (j, v)))
                    .collect()
            }
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `log Σ exp(xs)` shifted by the maximum; `-inf` for an empty or all `-inf` slice.
pub fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(xs: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in xs.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in xs.iter_mut() {
        *v /= s;
    }
}
