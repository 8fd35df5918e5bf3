//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Operations are appended to a [`GradientTape`] in evaluation order, so a
//! single backward sweep over the node list in reverse visits every node
//! after all of its consumers. Parameters are registered with a [`ParamId`]
//! and their gradients are accumulated in place, which keeps the cost of a
//! weight matrix used at every time step to one buffer.
//!
//! ```
//! use groundcap::tape::{GradientTape, ParamId};
//! use groundcap::tensor::Tensor;
//!
//! let x = Tensor::scalar(3.0);
//! let mut tape = GradientTape::new();
//! let xv = tape.param(ParamId(0), &x);
//! let y = tape.mul(xv, xv).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(ParamId(0)).unwrap().item(), 6.0);
//! ```

use std::borrow::Cow;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{self, dot, norm, Tensor};

/// Identifies a trainable parameter block across tapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Stack(Vec<Var>),
    Transpose(Var),
    Column(Var, usize),
    ColumnBlock(Var, usize),
    AddColumn(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    Index(Var, usize),
    Sum(Var),
    Mean(Vec<Var>),
    Cosine(Var, Var),
    Pearson(Var, Var),
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records operations for a single forward pass. Single owner; create a
/// fresh tape per batch.
#[derive(Default)]
pub struct GradientTape<'p> {
    nodes: Vec<Node<'p>>,
    params: Vec<(ParamId, Var)>,
}

/// Gradients for every parameter registered on a tape.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }

    pub fn into_map(self) -> BTreeMap<ParamId, Tensor> {
        self.by_param
    }

    pub fn global_norm(&self) -> f64 {
        self.by_param
            .values()
            .map(|t| dot(t.data(), t.data()))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.by_param.values_mut() {
            t.scale_in_place(factor);
        }
    }
}

impl<'p> GradientTape<'p> {
    pub fn new() -> Self {
        GradientTape {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numerical(format!("non-finite value produced by {op:?}")));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Registers a trainable parameter. Registering the same id twice is
    /// allowed; gradients of both nodes are summed.
    pub fn param(&mut self, id: ParamId, value: &'p Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Param,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.push((id, v));
        v
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant_ref(&mut self, value: &'p Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(out), Op::MatMul(a, b), rg)
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &'static str, op: Op, f: fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(out), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        self.push(Cow::Owned(out), Op::Scale(a, factor), rg)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(Cow::Owned(out), Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(Cow::Owned(out), Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(Cow::Owned(out), Op::Relu(a), rg)
    }

    /// Concatenates vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if !t.is_vector() {
                return Err(Error::shape("concat", &[0], t.shape()));
            }
            data.extend_from_slice(t.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Cow::Owned(Tensor::vector(data)), Op::Concat(parts.to_vec()), rg)
    }

    /// `len` entries of a vector starting at `start`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if !t.is_vector() || len == 0 || start + len > t.numel() {
            return Err(Error::shape("slice", t.shape(), &[start, len]));
        }
        let out = Tensor::vector(t.data()[start..start + len].to_vec());
        let rg = self.rg(a);
        self.push(Cow::Owned(out), Op::Slice(a, start), rg)
    }

    /// Stacks equally sized vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let vecs: Vec<Vec<f64>> = rows.iter().map(|&r| self.value(r).data().to_vec()).collect();
        let out = Tensor::matrix(&vecs)?;
        let rg = rows.iter().any(|&p| self.rg(p));
        self.push(Cow::Owned(out), Op::Stack(rows.to_vec()), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if !t.is_matrix() {
            return Err(Error::shape("transpose", t.shape(), &[0, 0]));
        }
        let out = t.transpose();
        let rg = self.rg(a);
        self.push(Cow::Owned(out), Op::Transpose(a), rg)
    }

    /// Column `j` of a matrix, i.e. `W φ(j)` for a one-hot `φ(j)`.
    pub fn column(&mut self, w: Var, j: usize) -> Result<Var> {
        let t = self.value(w);
        if !t.is_matrix() || j >= t.cols() {
            return Err(Error::shape("column", t.shape(), &[j]));
        }
        let out = Tensor::vector(t.column(j));
        let rg = self.rg(w);
        self.push(Cow::Owned(out), Op::Column(w, j), rg)
    }

    /// Columns `start..start + len` of a matrix.
    pub fn column_block(&mut self, w: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(w);
        if !t.is_matrix() || len == 0 || start + len > t.cols() {
            return Err(Error::shape("column_block", t.shape(), &[start, len]));
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let out = Tensor::new(vec![t.rows(), len], data)?;
        let rg = self.rg(w);
        self.push(Cow::Owned(out), Op::ColumnBlock(w, start), rg)
    }

    /// Adds vector `v` to every column of matrix `m`.
    pub fn add_column(&mut self, m: Var, v: Var) -> Result<Var> {
        let (tm, tv) = (self.value(m), self.value(v));
        if !tm.is_matrix() || !tv.is_vector() || tv.numel() != tm.rows() {
            return Err(Error::shape("add_column", tm.shape(), tv.shape()));
        }
        let cols = tm.cols();
        let data = tm
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + tv.data()[i / cols])
            .collect();
        let out = Tensor::new(tm.shape().to_vec(), data)?;
        let rg = self.rg(m) || self.rg(v);
        self.push(Cow::Owned(out), Op::AddColumn(m, v), rg)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::vector(tensor::softmax(self.value(a).data())?);
        let rg = self.rg(a);
        self.push(Cow::Owned(out), Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::vector(tensor::log_softmax(self.value(a).data())?);
        let rg = self.rg(a);
        self.push(Cow::Owned(out), Op::LogSoftmax(a), rg)
    }

    /// Entry `i` of a vector as a scalar.
    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        if i >= t.numel() {
            return Err(Error::shape("index", t.shape(), &[i]));
        }
        let out = Tensor::scalar(t.data()[i]);
        let rg = self.rg(a);
        self.push(Cow::Owned(out), Op::Index(a, i), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.rg(a);
        self.push(Cow::Owned(out), Op::Sum(a), rg)
    }

    /// Element-wise mean of equally shaped tensors.
    pub fn mean(&mut self, items: &[Var]) -> Result<Var> {
        let first = *items
            .first()
            .ok_or_else(|| Error::Domain("mean of an empty set".into()))?;
        let mut acc = self.value(first).clone();
        for &v in &items[1..] {
            let t = self.value(v);
            if t.shape() != acc.shape() {
                return Err(Error::shape("mean", acc.shape(), t.shape()));
            }
            acc.add_scaled(t, 1.0);
        }
        acc.scale_in_place(1.0 / items.len() as f64);
        let rg = items.iter().any(|&p| self.rg(p));
        self.push(Cow::Owned(acc), Op::Mean(items.to_vec()), rg)
    }

    pub fn cosine(&mut self, u: Var, v: Var) -> Result<Var> {
        let c = tensor::cosine(self.value(u).data(), self.value(v).data())?;
        let rg = self.rg(u) || self.rg(v);
        self.push(Cow::Owned(Tensor::scalar(c)), Op::Cosine(u, v), rg)
    }

    /// Pearson correlation between two equally long vectors.
    pub fn pearson(&mut self, x: Var, y: Var) -> Result<Var> {
        let r = tensor::pearson(self.value(x).data(), self.value(y).data())?;
        let rg = self.rg(x) || self.rg(y);
        self.push(Cow::Owned(Tensor::scalar(r)), Op::Pearson(x, y), rg)
    }

    /// Reverse sweep from a scalar `loss`. Every registered parameter gets a
    /// gradient of its own shape, zero when it did not influence `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Param | Op::Leaf = node.op {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }

        let mut by_param: BTreeMap<ParamId, Tensor> = BTreeMap::new();
        for &(id, var) in &self.params {
            let shape = self.value(var).shape();
            let g = grads
                .get(var.0)
                .and_then(|g| g.as_ref())
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(shape));
            match by_param.get_mut(&id) {
                Some(acc) => acc.add_scaled(&g, 1.0),
                None => {
                    by_param.insert(id, g);
                }
            }
        }
        Ok(Gradients { by_param })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[idx].value;
        let gd = g.data();
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, n) = (ta.rows(), ta.cols());
                let p = if tb.is_vector() { 1 } else { tb.cols() };
                if self.rg(*a) {
                    // dA = G Bᵀ
                    self.accumulate(grads, *a, |da| {
                        for (i, row) in da.chunks_mut(n).enumerate() {
                            let grow = &gd[i * p..(i + 1) * p];
                            if p == 1 {
                                add_into(row, tb.data(), grow[0]);
                            } else {
                                for (k, r) in row.iter_mut().enumerate() {
                                    *r += dot(grow, &tb.data()[k * p..(k + 1) * p]);
                                }
                            }
                        }
                    });
                }
                if self.rg(*b) {
                    // dB = Aᵀ G
                    self.accumulate(grads, *b, |db| {
                        for i in 0..m {
                            let arow = ta.row(i);
                            let grow = &gd[i * p..(i + 1) * p];
                            if p == 1 {
                                if grow[0] != 0.0 {
                                    add_into(db, arow, grow[0]);
                                }
                            } else {
                                for (k, &av) in arow.iter().enumerate() {
                                    if av != 0.0 {
                                        add_into(&mut db[k * p..(k + 1) * p], grow, av);
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, gd, 1.0));
                self.accumulate(grads, *b, |d| add_into(d, gd, 1.0));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, gd, 1.0));
                self.accumulate(grads, *b, |d| add_into(d, gd, -1.0));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |d| {
                    for ((x, gi), bi) in d.iter_mut().zip(gd).zip(tb) {
                        *x += gi * bi;
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for ((x, gi), ai) in d.iter_mut().zip(gd).zip(ta) {
                        *x += gi * ai;
                    }
                });
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, |d| add_into(d, gd, *f)),
            Op::Sigmoid(a) => self.accumulate(grads, *a, |d| {
                for ((x, gi), s) in d.iter_mut().zip(gd).zip(out.data()) {
                    *x += gi * s * (1.0 - s);
                }
            }),
            Op::Tanh(a) => self.accumulate(grads, *a, |d| {
                for ((x, gi), t) in d.iter_mut().zip(gd).zip(out.data()) {
                    *x += gi * (1.0 - t * t);
                }
            }),
            Op::Relu(a) => {
                let ta = self.value(*a).data();
                self.accumulate(grads, *a, |d| {
                    for ((x, gi), ai) in d.iter_mut().zip(gd).zip(ta) {
                        if *ai > 0.0 {
                            *x += gi;
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    self.accumulate(grads, p, |d| add_into(d, &gd[offset..offset + len], 1.0));
                    offset += len;
                }
            }
            Op::Slice(a, start) => {
                let len = out.numel();
                self.accumulate(grads, *a, |d| add_into(&mut d[*start..*start + len], gd, 1.0));
            }
            Op::Stack(rows) => {
                let c = out.cols();
                for (i, &r) in rows.iter().enumerate() {
                    self.accumulate(grads, r, |d| add_into(d, &gd[i * c..(i + 1) * c], 1.0));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (out.rows(), out.cols());
                self.accumulate(grads, *a, |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[j * r + i] += gd[i * c + j];
                        }
                    }
                });
            }
            Op::Column(w, j) => {
                let c = self.value(*w).cols();
                self.accumulate(grads, *w, |d| {
                    for (i, gi) in gd.iter().enumerate() {
                        d[i * c + j] += gi;
                    }
                });
            }
            Op::Softmax(a) => {
                let p = out.data();
                let gp = dot(gd, p);
                self.accumulate(grads, *a, |d| {
                    for ((x, gi), pi) in d.iter_mut().zip(gd).zip(p) {
                        *x += pi * (gi - gp);
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let gsum: f64 = gd.iter().sum();
                self.accumulate(grads, *a, |d| {
                    for ((x, gi), li) in d.iter_mut().zip(gd).zip(out.data()) {
                        *x += gi - li.exp() * gsum;
                    }
                });
            }
            Op::ColumnBlock(w, start) => {
                let cols = self.value(*w).cols();
                let len = out.cols();
                self.accumulate(grads, *w, |d| {
                    for (r, grow) in gd.chunks(len).enumerate() {
                        add_into(&mut d[r * cols + start..r * cols + start + len], grow, 1.0);
                    }
                });
            }
            Op::AddColumn(m, v) => {
                let cols = out.cols();
                self.accumulate(grads, *m, |d| add_into(d, gd, 1.0));
                self.accumulate(grads, *v, |d| {
                    for (x, grow) in d.iter_mut().zip(gd.chunks(cols)) {
                        *x += grow.iter().sum::<f64>();
                    }
                });
            }
            Op::Index(a, i) => self.accumulate(grads, *a, |d| d[*i] += gd[0]),
            Op::Sum(a) => self.accumulate(grads, *a, |d| d.iter_mut().for_each(|x| *x += gd[0])),
            Op::Mean(items) => {
                let w = 1.0 / items.len() as f64;
                for &v in items {
                    self.accumulate(grads, v, |d| add_into(d, gd, w));
                }
            }
            Op::Cosine(u, v) => {
                let (tu, tv) = (self.value(*u).data(), self.value(*v).data());
                let (nu, nv) = (norm(tu), norm(tv));
                let c = out.item();
                let g0 = gd[0];
                self.accumulate(grads, *u, |d| {
                    for ((x, ui), vi) in d.iter_mut().zip(tu).zip(tv) {
                        *x += g0 * (vi / (nu * nv) - c * ui / (nu * nu));
                    }
                });
                self.accumulate(grads, *v, |d| {
                    for ((x, ui), vi) in d.iter_mut().zip(tu).zip(tv) {
                        *x += g0 * (ui / (nu * nv) - c * vi / (nv * nv));
                    }
                });
            }
            Op::Pearson(x, y) => {
                let (tx, ty) = (self.value(*x).data(), self.value(*y).data());
                let n = tx.len() as f64;
                let mx = tx.iter().sum::<f64>() / n;
                let my = ty.iter().sum::<f64>() / n;
                let a: Vec<f64> = tx.iter().map(|v| v - mx).collect();
                let b: Vec<f64> = ty.iter().map(|v| v - my).collect();
                let (sxx, syy) = (dot(&a, &a), dot(&b, &b));
                let denom = (sxx * syy).sqrt();
                let r = dot(&a, &b) / denom;
                let g0 = gd[0];
                self.accumulate(grads, *x, |d| {
                    for ((o, ai), bi) in d.iter_mut().zip(&a).zip(&b) {
                        *o += g0 * (bi / denom - r * ai / sxx);
                    }
                });
                self.accumulate(grads, *y, |d| {
                    for ((o, ai), bi) in d.iter_mut().zip(&a).zip(&b) {
                        *o += g0 * (ai / denom - r * bi / syy);
                    }
                });
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(target) {
            return;
        }
        let buf = grads[target.0].get_or_insert_with(|| Tensor::zeros(self.value(target).shape()));
        f(buf.data_mut());
    }
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
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

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn square_derivative() {
        let x = Tensor::scalar(3.0);
        let mut tape = GradientTape::new();
        let xv = tape.param(ParamId(0), &x);
        let y = tape.mul(xv, xv).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().item(), 6.0);
    }

    #[test]
    fn softmax_cross_entropy_gradient_is_p_minus_onehot() {
        let logits = Tensor::vector(vec![0.2, -1.0, 2.5, 0.7]);
        let target = 2;
        let mut tape = GradientTape::new();
        let l = tape.param(ParamId(0), &logits);
        let lp = tape.log_softmax(l).unwrap();
        let pick = tape.index(lp, target).unwrap();
        let nll = tape.neg(pick).unwrap();
        let g = tape.backward(nll).unwrap();
        let p = tensor::softmax(logits.data()).unwrap();
        for (i, (gi, pi)) in g.get(ParamId(0)).unwrap().data().iter().zip(&p).enumerate() {
            let expected = pi - if i == target { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(*gi, expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let v = Tensor::vector(vec![1.0, 2.0]);
        let mut tape = GradientTape::new();
        let x = tape.param(ParamId(0), &v);
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unused_parameters_get_exact_zeros() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let b = Tensor::zeros(&[2, 3]);
        let mut tape = GradientTape::new();
        let av = tape.param(ParamId(0), &a);
        tape.param(ParamId(1), &b);
        let s = tape.sum(av).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(ParamId(1)).unwrap(), &Tensor::zeros(&[2, 3]));
        assert_eq!(g.get(ParamId(0)).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn nan_values_are_rejected() {
        let a = Tensor::vector(vec![f64::MAX, 1.0]);
        let mut tape = GradientTape::new();
        let av = tape.param(ParamId(0), &a);
        assert!(matches!(tape.scale(av, 10.0), Err(Error::Numerical(_))));
    }
}
