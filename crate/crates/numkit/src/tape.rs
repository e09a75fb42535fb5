//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] evaluates eagerly: every method computes its output value
//! immediately and records the operation so [`Tape::backward`] can replay it
//! in reverse. Parameters are referenced from a borrowed [`ParamSet`] rather
//! than copied, so building a tape per training example is cheap.
//!
//! Vectors are rank-1 tensors; matrices are rank-2 and row-major. Matrix
//! products follow the row-vector convention `x · W`.

use crate::error::{NumError, Result};
use crate::kernels::{self, axpy, gemm_acc, gemm_grad_a, gemm_grad_b, sigmoid};
use crate::params::{Gradients, ParamId, ParamSet};
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    /// right operand is a vector broadcast over every row of the left matrix
    RowRight,
    ScalarLeft,
    ScalarRight,
}

#[derive(Debug, Clone)]
enum Op {
    Param(ParamId),
    Const,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    Log(Var),
    Min(Var, Var),
    Sum(Var),
    Concat(Vec<Var>),
    ConcatCols(Vec<Var>),
    Slice(Var, usize),
    Row(Var, usize),
    Gather(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    Transpose(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Option<Tensor>,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NumError {
    NumError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn bcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Bcast> {
    if a.shape() == b.shape() {
        Ok(Bcast::Same)
    } else if a.rank() == 2 && b.rank() == 1 && a.shape()[1] == b.shape()[0] {
        Ok(Bcast::RowRight)
    } else if a.shape() == [1] {
        Ok(Bcast::ScalarLeft)
    } else if b.shape() == [1] {
        Ok(Bcast::ScalarRight)
    } else {
        Err(shape_err(op, a, b))
    }
}

fn zip_bcast(a: &Tensor, b: &Tensor, kind: Bcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (shape, data): (Vec<usize>, Vec<f64>) = match kind {
        Bcast::Same => (
            a.shape().to_vec(),
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        ),
        Bcast::RowRight => {
            let c = b.len();
            (
                a.shape().to_vec(),
                a.data().iter().enumerate().map(|(i, &x)| f(x, b.data()[i % c])).collect(),
            )
        }
        Bcast::ScalarLeft => {
            let s = a.item();
            (b.shape().to_vec(), b.data().iter().map(|&y| f(s, y)).collect())
        }
        Bcast::ScalarRight => {
            let s = b.item();
            (a.shape().to_vec(), a.data().iter().map(|&x| f(x, s)).collect())
        }
    };
    Tensor::from_parts(shape, data)
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.params.get(*id),
            (_, Some(t)) => t,
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf bound to a parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Const, value, false)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.constant(Tensor::zeros(shape))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, a_vec) = match ta.shape() {
            [k] => (1, *k, true),
            [m, k] => (*m, *k, false),
            _ => return Err(shape_err("matmul", ta, tb)),
        };
        let (k2, n, b_vec) = match tb.shape() {
            [k2] => (*k2, 1, true),
            [k2, n] => (*k2, *n, false),
            _ => return Err(shape_err("matmul", ta, tb)),
        };
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let shape = match (a_vec, b_vec) {
            (false, false) => vec![m, n],
            (false, true) => vec![m],
            (true, false) => vec![n],
            (true, true) => vec![1],
        };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::MatMul { a, b, m, k, n }, Tensor::from_parts(shape, out), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = bcast_kind("add", self.value(a), self.value(b))?;
        let out = zip_bcast(self.value(a), self.value(b), kind, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Add(a, b, kind), out, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = bcast_kind("sub", self.value(a), self.value(b))?;
        let out = zip_bcast(self.value(a), self.value(b), kind, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Sub(a, b, kind), out, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = bcast_kind("mul", self.value(a), self.value(b))?;
        let out = zip_bcast(self.value(a), self.value(b), kind, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Mul(a, b, kind), out, ng))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let t = self.value(x);
        let out = Tensor::from_parts(
            t.shape().to_vec(),
            t.data().iter().map(|v| scale * v + shift).collect(),
        );
        let ng = self.ng(x);
        self.push(Op::Affine(x, scale), out, ng)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(x);
        let out = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect());
        let ng = self.ng(x);
        self.push(op, out, ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), f64::ln)
    }

    /// Softmax of a vector, or of every row of a matrix.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() || t.rank() > 2 {
            return Err(NumError::DegenerateSoftmax("softmax needs a non-empty vector or matrix"));
        }
        let mut data = t.data().to_vec();
        let c = t.cols();
        for row in data.chunks_mut(c) {
            kernels::softmax_in_place(row);
        }
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        let ng = self.ng(x);
        Ok(self.push(Op::Softmax(x), out, ng))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("min", ta, tb));
        }
        let out = zip_bcast(ta, tb, Bcast::Same, f64::min);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Min(a, b), out, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(x);
        self.push(Op::Sum(x), Tensor::from_parts(vec![1], vec![s]), ng)
    }

    /// Concatenate vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 1 {
                return Err(NumError::Shape {
                    op: "concat",
                    left: t.shape().to_vec(),
                    right: vec![],
                });
            }
            data.extend_from_slice(t.data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        let len = data.len();
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::from_parts(vec![len], data), ng))
    }

    /// Concatenate matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NumError::Invalid("concat_cols of nothing".into()))?;
        let rows = self.value(*first).shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.shape()[0] != rows {
                return Err(shape_err("concat_cols", self.value(*first), t));
            }
            widths.push(t.shape()[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::from_parts(vec![rows, total], data),
            ng,
        ))
    }

    /// Contiguous sub-range of a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 1 || start + len > t.len() {
            return Err(NumError::Index {
                op: "slice",
                index: start + len,
                extent: t.len(),
            });
        }
        let out = Tensor::from_parts(vec![len], t.data()[start..start + len].to_vec());
        let ng = self.ng(x);
        Ok(self.push(Op::Slice(x, start), out, ng))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || i >= t.shape()[0] {
            return Err(NumError::Index {
                op: "row",
                index: i,
                extent: t.rows(),
            });
        }
        let out = Tensor::from_parts(vec![t.shape()[1]], t.row(i).to_vec());
        let ng = self.ng(x);
        Ok(self.push(Op::Row(x, i), out, ng))
    }

    /// Rows of a matrix selected by index, e.g. an embedding lookup.
    pub fn gather(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(shape_err("gather", t, t));
        }
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &i in ids {
            if i >= t.shape()[0] {
                return Err(NumError::Index {
                    op: "gather",
                    index: i,
                    extent: t.shape()[0],
                });
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_parts(vec![ids.len(), t.cols()], data);
        let ng = self.ng(x);
        Ok(self.push(Op::Gather(x, ids.to_vec()), out, ng))
    }

    /// `out[index[j]] += x[j]` into a fresh vector of length `len`.
    pub fn scatter_add(&mut self, x: Var, index: &[usize], len: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 1 || t.len() != index.len() {
            return Err(NumError::Shape {
                op: "scatter_add",
                left: t.shape().to_vec(),
                right: vec![index.len()],
            });
        }
        let mut out = vec![0.0; len];
        for (&v, &i) in t.data().iter().zip(index) {
            if i >= len {
                return Err(NumError::Index {
                    op: "scatter_add",
                    index: i,
                    extent: len,
                });
            }
            out[i] += v;
        }
        let ng = self.ng(x);
        Ok(self.push(
            Op::ScatterAdd(x, index.to_vec()),
            Tensor::from_parts(vec![len], out),
            ng,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = match t.shape() {
            [r, c] => (*r, *c),
            _ => return Err(shape_err("transpose", t, t)),
        };
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = t.data()[i * c + j];
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Op::Transpose(x), Tensor::from_parts(vec![c, r], data), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshaped(shape)?;
        let ng = self.ng(x);
        Ok(self.push(Op::Reshape(x), out, ng))
    }

    /// Propagate d(loss)/d(node) backwards and collect one gradient per
    /// parameter of the bound [`ParamSet`]. Parameters never touched by the
    /// tape receive zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(NumError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Param(_)) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads);
        }

        let mut out = Vec::with_capacity(self.params.len());
        for (id, slot) in self.param_nodes.iter().enumerate() {
            let t = self.params.get(ParamId(id));
            let g = slot
                .and_then(|v| grads[v.0].take())
                .unwrap_or_else(|| vec![0.0; t.len()]);
            out.push(Tensor::from_parts(t.shape().to_vec(), g));
        }
        Ok(Gradients::from_vec(out))
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.as_ref().expect("computed node");
        // Runs `f` against the (lazily zeroed) gradient buffer of `v`.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let n = self.value(v).len();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(buf);
        };

        match &node.op {
            Op::Param(_) | Op::Const => {}
            Op::MatMul { a, b, m, k, n } => {
                let (a_val, b_val) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |da| gemm_grad_a(g, b_val, da, *m, *k, *n));
                acc(*b, &mut |db| gemm_grad_b(a_val, g, db, *m, *k, *n));
            }
            Op::Add(a, b, kind) | Op::Sub(a, b, kind) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let kind = *kind;
                acc(*a, &mut |da| match kind {
                    Bcast::ScalarLeft => da[0] += g.iter().sum::<f64>(),
                    _ => axpy(1.0, g, da),
                });
                acc(*b, &mut |db| match kind {
                    Bcast::Same => axpy(sign, g, db),
                    Bcast::RowRight => {
                        let c = db.len();
                        for (i, gv) in g.iter().enumerate() {
                            db[i % c] += sign * gv;
                        }
                    }
                    Bcast::ScalarLeft => axpy(sign, g, db),
                    Bcast::ScalarRight => db[0] += sign * g.iter().sum::<f64>(),
                });
            }
            Op::Mul(a, b, kind) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let kind = *kind;
                acc(*a, &mut |da| match kind {
                    Bcast::Same => {
                        for i in 0..g.len() {
                            da[i] += g[i] * bv[i];
                        }
                    }
                    Bcast::RowRight => {
                        let c = bv.len();
                        for i in 0..g.len() {
                            da[i] += g[i] * bv[i % c];
                        }
                    }
                    Bcast::ScalarLeft => da[0] += kernels::dot(g, bv),
                    Bcast::ScalarRight => axpy(bv[0], g, da),
                });
                acc(*b, &mut |db| match kind {
                    Bcast::Same => {
                        for i in 0..g.len() {
                            db[i] += g[i] * av[i];
                        }
                    }
                    Bcast::RowRight => {
                        let c = db.len();
                        for i in 0..g.len() {
                            db[i % c] += g[i] * av[i];
                        }
                    }
                    Bcast::ScalarLeft => axpy(av[0], g, db),
                    Bcast::ScalarRight => db[0] += kernels::dot(g, av),
                });
            }
            Op::Affine(x, scale) => acc(*x, &mut |dx| axpy(*scale, g, dx)),
            Op::Tanh(x) => acc(*x, &mut |dx| {
                for ((d, gv), y) in dx.iter_mut().zip(g).zip(out.data()) {
                    *d += gv * (1.0 - y * y);
                }
            }),
            Op::Sigmoid(x) => acc(*x, &mut |dx| {
                for ((d, gv), y) in dx.iter_mut().zip(g).zip(out.data()) {
                    *d += gv * y * (1.0 - y);
                }
            }),
            Op::Log(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |dx| {
                    for i in 0..dx.len() {
                        dx[i] += g[i] / xv[i];
                    }
                })
            }
            Op::Softmax(x) => {
                let c = out.cols();
                acc(*x, &mut |dx| {
                    for ((dr, gr), pr) in dx.chunks_mut(c).zip(g.chunks(c)).zip(out.data().chunks(c)) {
                        let inner = kernels::dot(gr, pr);
                        for j in 0..c {
                            dr[j] += pr[j] * (gr[j] - inner);
                        }
                    }
                })
            }
            Op::Min(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |da| {
                    for i in 0..da.len() {
                        if av[i] <= bv[i] {
                            da[i] += g[i];
                        }
                    }
                });
                acc(*b, &mut |db| {
                    for i in 0..db.len() {
                        if av[i] > bv[i] {
                            db[i] += g[i];
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |dx| {
                for d in dx.iter_mut() {
                    *d += g[0];
                }
            }),
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    acc(p, &mut |dp| axpy(1.0, &g[offset..offset + n], dp));
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    acc(p, &mut |dp| {
                        for (i, dr) in dp.chunks_mut(w).enumerate() {
                            axpy(1.0, &g[i * total + offset..i * total + offset + w], dr);
                        }
                    });
                    offset += w;
                }
            }
            Op::Slice(x, start) => acc(*x, &mut |dx| {
                axpy(1.0, g, &mut dx[*start..*start + g.len()]);
            }),
            Op::Row(x, i) => acc(*x, &mut |dx| {
                let c = g.len();
                axpy(1.0, g, &mut dx[i * c..(i + 1) * c]);
            }),
            Op::Gather(x, ids) => acc(*x, &mut |dx| {
                let c = out.cols();
                for (r, &i) in ids.iter().enumerate() {
                    axpy(1.0, &g[r * c..(r + 1) * c], &mut dx[i * c..(i + 1) * c]);
                }
            }),
            Op::ScatterAdd(x, index) => acc(*x, &mut |dx| {
                for (d, &i) in dx.iter_mut().zip(index) {
                    *d += g[i];
                }
            }),
            Op::Transpose(x) => {
                let (c, r) = (out.shape()[0], out.shape()[1]);
                acc(*x, &mut |dx| {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] += g[j * r + i];
                        }
                    }
                })
            }
            Op::Reshape(x) => acc(*x, &mut |dx| axpy(1.0, g, dx)),
        }
    }
}
