//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and [`Graph::backward`] is a single reverse sweep.
//! Batched signals are laid out one sample per row; weights are applied with
//! [`Graph::matmul_t`] so that a weight `W` (out x in) acts on each row as
//! `W z`.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The operation kinds accepted by [`Graph::apply`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Scale(f64),
    MatVec,
    MatMul,
    Tanh,
    Square,
    Sum,
    Concat,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulCol(NodeId, NodeId),
    Tanh(NodeId),
    Square(NodeId),
    Sum(NodeId),
    Concat(Vec<NodeId>),
    SliceCols(NodeId, usize),
}

#[derive(Debug, Default)]
pub struct Graph {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    tracked: Vec<bool>,
}

/// Gradients of a scalar root with respect to the tracked leaves of a graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the leaf does not influence the root.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

fn same_shape(context: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            context,
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Drops every node recorded after the first `len` ones.
    pub fn truncate(&mut self, len: usize) {
        self.values.truncate(len);
        self.ops.truncate(len);
        self.tracked.truncate(len);
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> NodeId {
        self.values.push(value);
        self.ops.push(op);
        self.tracked.push(tracked);
        NodeId(self.values.len() - 1)
    }

    fn tracked(&self, id: NodeId) -> bool {
        self.tracked[id.0]
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn apply(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(Error::dim("Graph::apply arity", n, inputs.len()));
            }
            Ok(())
        };
        match kind {
            OpKind::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Sub => {
                arity(2)?;
                self.sub(inputs[0], inputs[1])
            }
            OpKind::Scale(f) => {
                arity(1)?;
                Ok(self.scale(inputs[0], f))
            }
            OpKind::MatVec => {
                arity(2)?;
                self.matvec(inputs[0], inputs[1])
            }
            OpKind::MatMul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::Tanh => {
                arity(1)?;
                Ok(self.tanh(inputs[0]))
            }
            OpKind::Square => {
                arity(1)?;
                Ok(self.square(inputs[0]))
            }
            OpKind::Sum => {
                arity(1)?;
                Ok(self.sum(inputs[0]))
            }
            OpKind::Concat => self.concat_cols(inputs),
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        same_shape("add", va, vb)?;
        let mut out = va.clone();
        out.add_scaled(vb, 1.0);
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        same_shape("sub", va, vb)?;
        let mut out = va.clone();
        out.add_scaled(vb, -1.0);
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::Sub(a, b), t))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        same_shape("mul", va, vb)?;
        let data = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::from_vec(va.rows(), va.cols(), data)?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::Mul(a, b), t))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let out = self.values[a.0].scaled(factor);
        let t = self.tracked(a);
        self.push(out, Op::Scale(a, factor), t)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if va.cols() != vb.rows() {
            return Err(Error::dim(
                "matmul",
                format!("{} rows on the right operand", va.cols()),
                vb.rows(),
            ));
        }
        let mut out = Tensor::zeros(va.rows(), vb.cols());
        gemm(va, false, vb, false, &mut out, 0.0);
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::MatMul(a, b), t))
    }

    /// Matrix times column vector.
    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        if self.values[v.0].cols() != 1 {
            return Err(Error::dim(
                "matvec",
                "column vector",
                format!("{:?}", self.values[v.0].shape()),
            ));
        }
        self.matmul(m, v)
    }

    /// `a * b^T`; with `a` holding one sample per row this applies `b` to
    /// every sample.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if va.cols() != vb.cols() {
            return Err(Error::dim(
                "matmul_t",
                format!("{} cols on the right operand", va.cols()),
                vb.cols(),
            ));
        }
        let mut out = Tensor::zeros(va.rows(), vb.rows());
        gemm(va, false, vb, true, &mut out, 0.0);
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::MatMulT(a, b), t))
    }

    /// Adds the `1 x c` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.values[a.0], &self.values[bias.0]);
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(Error::dim(
                "add_row",
                format!("(1, {})", va.cols()),
                format!("{:?}", vb.shape()),
            ));
        }
        let mut out = va.clone();
        let c = va.cols();
        for row in out.as_mut_slice().chunks_mut(c.max(1)) {
            for (x, b) in row.iter_mut().zip(vb.as_slice()) {
                *x += b;
            }
        }
        let t = self.tracked(a) || self.tracked(bias);
        Ok(self.push(out, Op::AddRow(a, bias), t))
    }

    /// Multiplies row `i` of `a` by `s[i]`, where `s` is an `r x 1` column.
    pub fn mul_col(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let (va, vs) = (&self.values[a.0], &self.values[s.0]);
        if vs.cols() != 1 || vs.rows() != va.rows() {
            return Err(Error::dim(
                "mul_col",
                format!("({}, 1)", va.rows()),
                format!("{:?}", vs.shape()),
            ));
        }
        let mut out = va.clone();
        let c = va.cols();
        if c > 0 {
            for (row, f) in out.as_mut_slice().chunks_mut(c).zip(vs.as_slice()) {
                for x in row {
                    *x *= f;
                }
            }
        }
        let t = self.tracked(a) || self.tracked(s);
        Ok(self.push(out, Op::MulCol(a, s), t))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let va = &self.values[a.0];
        let data = va.as_slice().iter().map(|x| x.tanh()).collect();
        let out = Tensor::from_vec(va.rows(), va.cols(), data).expect("same shape");
        let t = self.tracked(a);
        self.push(out, Op::Tanh(a), t)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let va = &self.values[a.0];
        let data = va.as_slice().iter().map(|x| x * x).collect();
        let out = Tensor::from_vec(va.rows(), va.cols(), data).expect("same shape");
        let t = self.tracked(a);
        self.push(out, Op::Square(a), t)
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.values[a.0].as_slice().iter().sum();
        let t = self.tracked(a);
        self.push(Tensor::scalar(s), Op::Sum(a), t)
    }

    /// Horizontal concatenation; all parts must share the row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(first) = parts.first() else {
            return Err(Error::InvalidArgument("concat of zero nodes".into()));
        };
        let rows = self.values[first.0].rows();
        let mut cols = 0;
        for p in parts {
            let v = &self.values[p.0];
            if v.rows() != rows {
                return Err(Error::dim("concat_cols", rows, v.rows()));
            }
            cols += v.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let v = &self.values[p.0];
            for i in 0..rows {
                let dst = &mut out.as_mut_slice()[i * cols + offset..i * cols + offset + v.cols()];
                dst.copy_from_slice(v.row_slice(i));
            }
            offset += v.cols();
        }
        let t = parts.iter().any(|p| self.tracked(*p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), t))
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let va = &self.values[a.0];
        if start + len > va.cols() {
            return Err(Error::dim(
                "slice_cols",
                format!("end <= {}", va.cols()),
                start + len,
            ));
        }
        let out = Tensor::from_fn(va.rows(), len, |i, j| va.get(i, start + j));
        let t = self.tracked(a);
        Ok(self.push(out, Op::SliceCols(a, start), t))
    }

    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        self.backward_with_seed(root, 1.0)
    }

    /// Propagates `seed * d(root)/d(leaf)` to every tracked leaf.
    pub fn backward_with_seed(&self, root: NodeId, seed: f64) -> Result<Gradients> {
        let rv = &self.values[root.0];
        if rv.shape() != (1, 1) {
            return Err(Error::NonScalarRoot {
                rows: rv.rows(),
                cols: rv.cols(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(seed));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.ops[i] {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, |acc| acc.add_scaled(&g, 1.0));
                    self.accumulate(&mut grads, *b, |acc| acc.add_scaled(&g, 1.0));
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, |acc| acc.add_scaled(&g, 1.0));
                    self.accumulate(&mut grads, *b, |acc| acc.add_scaled(&g, -1.0));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.values[a.0], &self.values[b.0]);
                    self.accumulate(&mut grads, *a, |acc| {
                        for ((x, gi), bi) in acc.as_mut_slice().iter_mut().zip(g.as_slice()).zip(vb.as_slice()) {
                            *x += gi * bi;
                        }
                    });
                    self.accumulate(&mut grads, *b, |acc| {
                        for ((x, gi), ai) in acc.as_mut_slice().iter_mut().zip(g.as_slice()).zip(va.as_slice()) {
                            *x += gi * ai;
                        }
                    });
                }
                Op::Scale(a, f) => {
                    self.accumulate(&mut grads, *a, |acc| acc.add_scaled(&g, *f));
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&self.values[a.0], &self.values[b.0]);
                    // dA = G B^T, dB = A^T G
                    self.accumulate(&mut grads, *a, |acc| gemm(&g, false, vb, true, acc, 1.0));
                    self.accumulate(&mut grads, *b, |acc| gemm(va, true, &g, false, acc, 1.0));
                }
                Op::MatMulT(a, b) => {
                    let (va, vb) = (&self.values[a.0], &self.values[b.0]);
                    // C = A B^T: dA = G B, dB = G^T A
                    self.accumulate(&mut grads, *a, |acc| gemm(&g, false, vb, false, acc, 1.0));
                    self.accumulate(&mut grads, *b, |acc| gemm(&g, true, va, false, acc, 1.0));
                }
                Op::AddRow(a, bias) => {
                    self.accumulate(&mut grads, *a, |acc| acc.add_scaled(&g, 1.0));
                    self.accumulate(&mut grads, *bias, |acc| {
                        let c = g.cols();
                        for row in g.as_slice().chunks(c.max(1)) {
                            for (x, gi) in acc.as_mut_slice().iter_mut().zip(row) {
                                *x += gi;
                            }
                        }
                    });
                }
                Op::MulCol(a, s) => {
                    let (va, vs) = (&self.values[a.0], &self.values[s.0]);
                    let c = g.cols();
                    self.accumulate(&mut grads, *a, |acc| {
                        if c == 0 {
                            return;
                        }
                        for ((arow, grow), f) in acc
                            .as_mut_slice()
                            .chunks_mut(c)
                            .zip(g.as_slice().chunks(c))
                            .zip(vs.as_slice())
                        {
                            for (x, gi) in arow.iter_mut().zip(grow) {
                                *x += gi * f;
                            }
                        }
                    });
                    self.accumulate(&mut grads, *s, |acc| {
                        if c == 0 {
                            return;
                        }
                        for ((x, grow), arow) in acc
                            .as_mut_slice()
                            .iter_mut()
                            .zip(g.as_slice().chunks(c))
                            .zip(va.as_slice().chunks(c))
                        {
                            *x += grow.iter().zip(arow).map(|(p, q)| p * q).sum::<f64>();
                        }
                    });
                }
                Op::Tanh(a) => {
                    let out = &self.values[i];
                    self.accumulate(&mut grads, *a, |acc| {
                        for ((x, gi), yi) in acc.as_mut_slice().iter_mut().zip(g.as_slice()).zip(out.as_slice()) {
                            *x += gi * (1.0 - yi * yi);
                        }
                    });
                }
                Op::Square(a) => {
                    let va = &self.values[a.0];
                    self.accumulate(&mut grads, *a, |acc| {
                        for ((x, gi), ai) in acc.as_mut_slice().iter_mut().zip(g.as_slice()).zip(va.as_slice()) {
                            *x += 2.0 * gi * ai;
                        }
                    });
                }
                Op::Sum(a) => {
                    let gs = g.item();
                    self.accumulate(&mut grads, *a, |acc| {
                        for x in acc.as_mut_slice() {
                            *x += gs;
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.values[p.0].cols();
                        self.accumulate(&mut grads, *p, |acc| {
                            for r in 0..g.rows() {
                                let src = &g.row_slice(r)[offset..offset + w];
                                for (x, gi) in acc.as_mut_slice()[r * w..(r + 1) * w].iter_mut().zip(src) {
                                    *x += gi;
                                }
                            }
                        });
                        offset += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let ca = self.values[a.0].cols();
                    let w = g.cols();
                    self.accumulate(&mut grads, *a, |acc| {
                        for r in 0..g.rows() {
                            let dst = &mut acc.as_mut_slice()[r * ca + start..r * ca + start + w];
                            for (x, gi) in dst.iter_mut().zip(g.row_slice(r)) {
                                *x += gi;
                            }
                        }
                    });
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: NodeId, f: impl FnOnce(&mut Tensor)) {
        if !self.tracked[target.0] {
            return;
        }
        let slot = &mut grads[target.0];
        if slot.is_none() {
            let v = &self.values[target.0];
            *slot = Some(Tensor::zeros(v.rows(), v.cols()));
        }
        f(slot.as_mut().expect("initialized above"));
    }
}
