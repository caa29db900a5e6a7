//! Wengert-list reverse-mode differentiation.
//!
//! Every op appends one node holding its forward value; `backward` walks the
//! list once from the end, so each node is visited exactly once in reverse
//! topological order. Parameters are leaves registered by name.

use std::sync::Arc;

use super::kernels;
use super::{NumericsError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    ScatterSoftmax { x: Var, seg: Arc<[usize]> },
    ScatterSum { x: Var, seg: Arc<[usize]> },
    GatherRows { x: Var, idx: Arc<[usize]> },
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    Reshape(Var),
    MaxOf(Vec<Var>),
    SumAll(Var),
    CrossEntropy { logits: Var, label: usize },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients for every registered parameter, in registration order.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub names: Vec<String>,
    pub grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.grads[i])
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

fn shape_err(msg: String) -> NumericsError {
    NumericsError::Shape(msg)
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

    /// Drops every node recorded after the first `len`. Handles to dropped
    /// nodes become invalid; registered parameters must lie below `len`.
    pub fn truncate(&mut self, len: usize) {
        debug_assert!(self.params.iter().all(|(_, v)| v.0 < len));
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, what: &str) -> Result<Var, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite(format!("output of {what}")));
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant input (no gradient is reported for it).
    pub fn constant(&mut self, value: Tensor) -> Result<Var, NumericsError> {
        self.push(Op::Leaf, value, "constant")
    }

    /// Registers a named trainable parameter.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Result<Var, NumericsError> {
        let var = self.push(Op::Param, value, "parameter")?;
        self.params.push((name.into(), var));
        Ok(var)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), out, "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).transpose()?;
        self.push(Op::Transpose(a), out, "transpose")
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(format!(
                "elementwise {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.zip_with(a, b, |p, q| p + q)?;
        self.push(Op::Add(a, b), out, "add")
    }

    /// `a (r×c) + b (1×c)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        let (r, c) = x.dims2()?;
        if y.dims2()? != (1, c) {
            return Err(shape_err(format!("add_row {r}x{c} with {:?}", y.shape())));
        }
        let mut out = x.clone();
        for i in 0..r {
            for (o, &b) in out.data_mut()[i * c..(i + 1) * c].iter_mut().zip(y.data()) {
                *o += b;
            }
        }
        self.push(Op::AddRow(a, b), out, "add_row")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.zip_with(a, b, |p, q| p * q)?;
        self.push(Op::Mul(a, b), out, "mul")
    }

    /// `a (r×c)` with each row scaled by `s (r×1)`.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Result<Var, NumericsError> {
        let (x, y) = (self.value(a), self.value(s));
        let (r, c) = x.dims2()?;
        if y.dims2()? != (r, 1) {
            return Err(shape_err(format!("mul_col {r}x{c} with {:?}", y.shape())));
        }
        let mut out = x.clone();
        for i in 0..r {
            let f = y.data()[i];
            for o in &mut out.data_mut()[i * c..(i + 1) * c] {
                *o *= f;
            }
        }
        self.push(Op::MulCol(a, s), out, "mul_col")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, NumericsError> {
        let out = self.value(a).map(|v| v * factor);
        self.push(Op::Scale(a, factor), out, "scale")
    }

    /// Multiplies `a` by the single value held in `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, NumericsError> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(shape_err(format!("scale_by needs a scalar, got {:?}", sv.shape())));
        }
        let f = sv.data()[0];
        let out = self.value(a).map(|v| v * f);
        self.push(Op::ScaleBy(a, s), out, "scale_by")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), out, "tanh")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(Op::Relu(a), out, "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).map(kernels::sigmoid);
        self.push(Op::Sigmoid(a), out, "sigmoid")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = kernels::softmax_rows(self.value(a))?;
        self.push(Op::SoftmaxRows(a), out, "softmax_rows")
    }

    pub fn scatter_softmax(
        &mut self,
        a: Var,
        seg: Arc<[usize]>,
        num_segments: usize,
    ) -> Result<Var, NumericsError> {
        let out = kernels::scatter_softmax(self.value(a), &seg, num_segments)?;
        self.push(Op::ScatterSoftmax { x: a, seg }, out, "scatter_softmax")
    }

    pub fn scatter_sum(
        &mut self,
        a: Var,
        seg: Arc<[usize]>,
        num_segments: usize,
    ) -> Result<Var, NumericsError> {
        let out = kernels::scatter_sum(self.value(a), &seg, num_segments)?;
        self.push(Op::ScatterSum { x: a, seg }, out, "scatter_sum")
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var, NumericsError> {
        let x = self.value(a);
        let (r, c) = x.dims2()?;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            if i >= r {
                return Err(shape_err(format!("gather row {i} of {r}")));
            }
            data.extend_from_slice(x.row(i));
        }
        let out = Tensor::new(vec![idx.len(), c], data)?;
        self.push(Op::GatherRows { x: a, idx }, out, "gather_rows")
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let x = self.value(a);
        let (r, c) = x.dims2()?;
        if start > end || end > c {
            return Err(shape_err(format!("slice {start}..{end} of {c} columns")));
        }
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&x.row(i)[start..end]);
        }
        let out = Tensor::new(vec![r, end - start], data)?;
        self.push(Op::SliceCols { x: a, start }, out, "slice_cols")
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let x = self.value(a);
        let (r, c) = x.dims2()?;
        if start > end || end > r {
            return Err(shape_err(format!("slice rows {start}..{end} of {r}")));
        }
        let out = Tensor::new(vec![end - start, c], x.data()[start * c..end * c].to_vec())?;
        self.push(Op::SliceRows { x: a, start }, out, "slice_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat of nothing".into()))?;
        let rows = self.value(*first).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(shape_err(format!("concat rows {r} vs {rows}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        self.push(Op::ConcatCols(parts.to_vec()), out, "concat_cols")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let out = self.value(a).reshape(shape)?;
        self.push(Op::Reshape(a), out, "reshape")
    }

    /// Element-wise maximum over same-shaped inputs; ties go to the first.
    pub fn max_of(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("max of nothing".into()))?;
        let mut out = self.value(*first).clone();
        for &p in &parts[1..] {
            let x = self.value(p);
            if x.shape() != out.shape() {
                return Err(shape_err(format!("max_of {:?} vs {:?}", x.shape(), out.shape())));
            }
            for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
                if v > *o {
                    *o = v;
                }
            }
        }
        self.push(Op::MaxOf(parts.to_vec()), out, "max_of")
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(Op::SumAll(a), out, "sum_all")
    }

    /// Negative log-likelihood of `label` under a softmax over a 1×C logit row.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var, NumericsError> {
        let x = self.value(logits);
        let (r, c) = x.dims2()?;
        if r != 1 || label >= c {
            return Err(shape_err(format!("cross_entropy on {r}x{c} with label {label}")));
        }
        let max = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + x.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let out = Tensor::scalar(lse - x.data()[label]);
        self.push(Op::CrossEntropy { logits, label }, out, "cross_entropy")
    }

    /// Reverse sweep from a scalar `loss`. Parameters that do not influence
    /// the loss receive zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(format!(
                "loss must be scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_nt(self.value(*b))?;
                    let db = self.value(*a).matmul_tn(&g)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()?),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    let (r, c) = g.dims2()?;
                    let mut db = vec![0.0; c];
                    for i in 0..r {
                        for (d, v) in db.iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *b, Tensor::row_vector(db));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (x, z) = (self.value(*a), self.value(*b));
                    let da = elementwise(&g, z, |p, q| p * q);
                    let db = elementwise(&g, x, |p, q| p * q);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MulCol(a, s) => {
                    let (x, sv) = (self.value(*a), self.value(*s));
                    let (r, c) = x.dims2()?;
                    let mut da = g.clone();
                    let mut ds = vec![0.0; r];
                    for i in 0..r {
                        let f = sv.data()[i];
                        let grow = &g.data()[i * c..(i + 1) * c];
                        let xrow = x.row(i);
                        let mut acc = 0.0;
                        for j in 0..c {
                            acc += grow[j] * xrow[j];
                        }
                        ds[i] = acc;
                        for d in &mut da.data_mut()[i * c..(i + 1) * c] {
                            *d *= f;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *s, Tensor::new(vec![r, 1], ds)?);
                }
                Op::Scale(a, f) => accumulate(&mut grads, *a, g.map(|v| v * f)),
                Op::ScaleBy(a, s) => {
                    let x = self.value(*a);
                    let f = self.value(*s).data()[0];
                    let ds = g.data().iter().zip(x.data()).fold(0.0, |acc, (p, q)| acc + p * q);
                    let shape = self.value(*s).shape().to_vec();
                    accumulate(&mut grads, *s, Tensor::new(shape, vec![ds])?);
                    accumulate(&mut grads, *a, g.map(|v| v * f));
                }
                Op::Tanh(a) => accumulate(&mut grads, *a, elementwise(&g, y, |p, t| p * (1.0 - t * t))),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    accumulate(&mut grads, *a, elementwise(&g, x, |p, v| if v > 0.0 { p } else { 0.0 }));
                }
                Op::Sigmoid(a) => accumulate(&mut grads, *a, elementwise(&g, y, |p, s| p * s * (1.0 - s))),
                Op::SoftmaxRows(a) => {
                    let (r, c) = y.dims2()?;
                    let mut da = Tensor::zeros(&[r, c]);
                    for i in 0..r {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let dot = yr.iter().zip(gr).fold(0.0, |acc, (p, q)| acc + p * q);
                        for j in 0..c {
                            da.set(i, j, yr[j] * (gr[j] - dot));
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::ScatterSoftmax { x, seg } => {
                    let (r, c) = y.dims2()?;
                    let nseg = seg.iter().copied().max().map_or(0, |m| m + 1);
                    let mut dot = vec![0.0; nseg * c];
                    for (i, &s) in seg.iter().enumerate() {
                        for j in 0..c {
                            dot[s * c + j] += y.get(i, j) * g.get(i, j);
                        }
                    }
                    let mut da = Tensor::zeros(&[r, c]);
                    for (i, &s) in seg.iter().enumerate() {
                        for j in 0..c {
                            da.set(i, j, y.get(i, j) * (g.get(i, j) - dot[s * c + j]));
                        }
                    }
                    accumulate(&mut grads, *x, da);
                }
                Op::ScatterSum { x, seg } => {
                    let c = g.cols();
                    let mut data = Vec::with_capacity(seg.len() * c);
                    for &s in seg.iter() {
                        data.extend_from_slice(g.row(s));
                    }
                    accumulate(&mut grads, *x, Tensor::new(vec![seg.len(), c], data)?);
                }
                Op::GatherRows { x, idx } => {
                    let mut da = Tensor::zeros(self.value(*x).shape());
                    let c = da.cols();
                    for (j, &i) in idx.iter().enumerate() {
                        for (d, v) in da.data_mut()[i * c..(i + 1) * c].iter_mut().zip(g.row(j)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *x, da);
                }
                Op::SliceCols { x, start } => {
                    let mut da = Tensor::zeros(self.value(*x).shape());
                    let (r, w) = g.dims2()?;
                    for i in 0..r {
                        for j in 0..w {
                            da.set(i, start + j, g.get(i, j));
                        }
                    }
                    accumulate(&mut grads, *x, da);
                }
                Op::SliceRows { x, start } => {
                    let mut da = Tensor::zeros(self.value(*x).shape());
                    let c = da.cols();
                    da.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *x, da);
                }
                Op::ConcatCols(parts) => {
                    let r = g.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut data = Vec::with_capacity(r * w);
                        for i in 0..r {
                            data.extend_from_slice(&g.row(i)[offset..offset + w]);
                        }
                        accumulate(&mut grads, p, Tensor::new(vec![r, w], data)?);
                        offset += w;
                    }
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, g.reshape(&shape)?);
                }
                Op::MaxOf(parts) => {
                    // Route each coordinate to the first input attaining the max.
                    let mut routed: Vec<Tensor> =
                        parts.iter().map(|&p| Tensor::zeros(self.value(p).shape())).collect();
                    for e in 0..y.len() {
                        let winner = parts
                            .iter()
                            .position(|&p| self.value(p).data()[e] == y.data()[e])
                            .unwrap_or(0);
                        routed[winner].data_mut()[e] = g.data()[e];
                    }
                    for (&p, t) in parts.iter().zip(routed) {
                        accumulate(&mut grads, p, t);
                    }
                }
                Op::SumAll(a) => {
                    let f = g.data()[0];
                    accumulate(&mut grads, *a, Tensor::filled(self.value(*a).shape(), f));
                }
                Op::CrossEntropy { logits, label } => {
                    let probs = kernels::softmax_rows(self.value(*logits))?;
                    let f = g.data()[0];
                    let mut da = probs.map(|p| p * f);
                    da.data_mut()[*label] -= f;
                    accumulate(&mut grads, *logits, da);
                }
            }
        }

        let mut names = Vec::with_capacity(self.params.len());
        let mut out = Vec::with_capacity(self.params.len());
        for (name, var) in &self.params {
            names.push(name.clone());
            let g = if var.0 <= loss.0 { grads[var.0].take() } else { None };
            out.push(g.unwrap_or_else(|| Tensor::zeros(self.value(*var).shape())));
        }
        Ok(Gradients { names, grads: out })
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked in forward")
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
