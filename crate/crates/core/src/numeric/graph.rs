use std::collections::HashMap;

use super::gemm::gemm;
use super::{Gradients, ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

/// A differentiable operation defined outside the primitive set.
///
/// The forward value is computed by the caller and handed to
/// [`Graph::custom`]; the op only has to map the upstream gradient of its
/// output onto its inputs.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// One entry per input; `None` means no gradient flows to that input.
    fn backward(
        &self,
        upstream: &Tensor,
        inputs: &[&Tensor],
        output: &Tensor,
    ) -> Vec<Option<Tensor>>;
}

enum Op {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Scale(NodeId, Real),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Concat(Vec<NodeId>),
    Slice {
        x: NodeId,
        start: usize,
        end: usize,
    },
    ConcatRows(Vec<NodeId>),
    SliceRows {
        x: NodeId,
        start: usize,
        end: usize,
    },
    LogSumExp {
        x: NodeId,
        axis: usize,
    },
    Sum(NodeId),
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    SelectRows {
        mask: Vec<bool>,
        a: NodeId,
        b: NodeId,
    },
    Custom {
        inputs: Vec<NodeId>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    op: Op,
    /// `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor>,
    requires_grad: bool,
}

/// Eagerly evaluated computation graph recorded for one backward pass.
///
/// Nodes are appended in evaluation order, so the node list is always a
/// valid topological order.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Shape of a matmul operand viewed as a matrix; rank-1 is a row vector.
fn as_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [n] => Ok((1, *n)),
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, format!("expected rank 1 or 2, got {s:?}"))),
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(p)) => self.params.get(*p),
            (None, _) => unreachable!("only parameter nodes borrow their value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    /// Leaf node for a registered parameter; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: true,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = as_matrix("matmul", ta)?;
        let (k2, n) = match tb.shape() {
            [r, c] => (*r, *c),
            s => {
                return Err(Error::shape(
                    "matmul",
                    format!("rhs must be rank 2, got {s:?}"),
                ))
            }
        };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} · {:?}", ta.shape(), tb.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            ta.data(),
            (k as isize, 1),
            tb.data(),
            (n as isize, 1),
            0.0,
            &mut out,
        );
        let shape = if ta.rank() == 1 { vec![n] } else { vec![m, n] };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::new(shape, out)?, rg))
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(Real, Real) -> Real,
        op: Op,
    ) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(op, out, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rank() != 1 || tb.len() != tx.cols() {
            return Err(Error::shape(
                "add_bias",
                format!("{:?} + bias {:?}", tx.shape(), tb.shape()),
            ));
        }
        let mut out = tx.clone();
        let cols = tx.cols();
        if cols > 0 {
            for row in out.data_mut().chunks_mut(cols) {
                for (v, b) in row.iter_mut().zip(tb.data()) {
                    *v += b;
                }
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Op::AddBias(x, bias), out, rg))
    }

    pub fn scale(&mut self, x: NodeId, factor: Real) -> NodeId {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.rg(x);
        self.push(Op::Scale(x, factor), out, rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(Op::Sigmoid(x), out, rg)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(Real::tanh);
        let rg = self.rg(x);
        self.push(Op::Tanh(x), out, rg)
    }

    /// Concatenates along the last axis; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = xs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let lead = self
            .value(*first)
            .shape()
            .split_last()
            .map(|(_, l)| l.to_vec());
        let lead = lead.ok_or_else(|| Error::shape("concat", "scalar input"))?;
        let rows = self.value(*first).rows();
        let mut total = 0;
        for &x in xs {
            let t = self.value(x);
            if t.rank() == 0 || t.shape()[..t.rank() - 1] != lead[..] {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?}", self.value(*first).shape(), t.shape()),
                ));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &x in xs {
                data.extend_from_slice(self.value(x).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(Op::Concat(xs.to_vec()), Tensor::new(shape, data)?, rg))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let t = self.value(x);
        if t.rank() == 0 || start > end || end > t.cols() {
            return Err(Error::shape(
                "slice",
                format!("{start}..{end} of {:?}", t.shape()),
            ));
        }
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = end - start;
        let rg = self.rg(x);
        Ok(self.push(Op::Slice { x, start, end }, Tensor::new(shape, data)?, rg))
    }

    /// Stacks rank-2 tensors with equal column counts vertically.
    pub fn concat_rows(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = xs
            .first()
            .ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let cols = self.value(*first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &x in xs {
            let t = self.value(x);
            if t.rank() != 2 || t.cols() != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("{:?} vs {:?}", self.value(*first).shape(), t.shape()),
                ));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(
            Op::ConcatRows(xs.to_vec()),
            Tensor::matrix(rows, cols, data)?,
            rg,
        ))
    }

    /// Rows `start..end` of a rank-2 tensor.
    pub fn slice_rows(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let t = self.value(x);
        if t.rank() != 2 || start > end || end > t.rows() {
            return Err(Error::shape(
                "slice_rows",
                format!("{start}..{end} of {:?}", t.shape()),
            ));
        }
        let c = t.cols();
        let data = t.data()[start * c..end * c].to_vec();
        let rg = self.rg(x);
        Ok(self.push(
            Op::SliceRows { x, start, end },
            Tensor::matrix(end - start, c, data)?,
            rg,
        ))
    }

    /// `log Σ exp` along `axis`; a matrix reduced over axis 1 yields one value
    /// per row, over axis 0 one value per column; a vector yields a scalar.
    pub fn logsumexp(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let t = self.value(x);
        let out = match (t.shape(), axis) {
            ([_], 0) => Tensor::scalar(lse(t.data().iter().copied())),
            ([r, c], 1) => Tensor::vector(
                (0..*r)
                    .map(|i| lse(t.data()[i * c..(i + 1) * c].iter().copied()))
                    .collect(),
            ),
            ([r, c], 0) => Tensor::vector(
                (0..*c)
                    .map(|j| lse((0..*r).map(|i| t.data()[i * c + j])))
                    .collect(),
            ),
            (s, a) => return Err(Error::shape("logsumexp", format!("axis {a} of {s:?}"))),
        };
        let rg = self.rg(x);
        Ok(self.push(Op::LogSumExp { x, axis }, out, rg))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(Op::Sum(x), out, rg)
    }

    /// Rows of `table` at `ids`; the adjoint scatters back into the table.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(Error::shape(
                "gather",
                format!("table shape {:?}", t.shape()),
            ));
        }
        let (v, d) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= v {
                return Err(Error::OutOfRange {
                    what: "embedding table",
                    index: i,
                    size: v,
                });
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::matrix(ids.len(), d, data)?;
        let rg = self.rg(table);
        Ok(self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            out,
            rg,
        ))
    }

    /// Row-wise choice: row `r` comes from `a` where `mask[r]`, else from `b`.
    pub fn select_rows(&mut self, mask: &[bool], a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("select_rows", ta, tb)?;
        if ta.rank() != 2 || mask.len() != ta.rows() {
            return Err(Error::shape(
                "select_rows",
                format!("mask of {} for {:?}", mask.len(), ta.shape()),
            ));
        }
        let c = ta.cols();
        let mut data = Vec::with_capacity(ta.len());
        for (r, &m) in mask.iter().enumerate() {
            let src = if m { ta } else { tb };
            data.extend_from_slice(&src.data()[r * c..(r + 1) * c]);
        }
        let out = Tensor::matrix(ta.rows(), c, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Op::SelectRows {
                mask: mask.to_vec(),
                a,
                b,
            },
            out,
            rg,
        ))
    }

    pub fn custom(&mut self, inputs: Vec<NodeId>, output: Tensor, op: Box<dyn CustomOp>) -> NodeId {
        let rg = inputs.iter().any(|&x| self.rg(x));
        self.push(Op::Custom { inputs, op }, output, rg)
    }

    /// Reverse pass from a scalar node. Every parameter of the store gets a
    /// gradient; those not reachable from `loss` get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut out = Gradients::zeros_like(self.params);
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut send = |id: NodeId, t: Tensor| {
                if self.rg(id) {
                    accumulate(&mut grads, id, t);
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(p) => out.get_mut(*p).add_assign(&g),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = as_matrix("matmul", ta)?;
                    let n = tb.cols();
                    if self.rg(*a) {
                        // dA = dC · Bᵀ
                        let mut da = vec![0.0; m * k];
                        gemm(
                            m,
                            n,
                            k,
                            g.data(),
                            (n as isize, 1),
                            tb.data(),
                            (1, n as isize),
                            0.0,
                            &mut da,
                        );
                        send(*a, Tensor::new(ta.shape().to_vec(), da)?);
                    }
                    if self.rg(*b) {
                        // dB = Aᵀ · dC
                        let mut db = vec![0.0; k * n];
                        gemm(
                            k,
                            m,
                            n,
                            ta.data(),
                            (1, k as isize),
                            g.data(),
                            (n as isize, 1),
                            0.0,
                            &mut db,
                        );
                        send(*b, Tensor::new(tb.shape().to_vec(), db)?);
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.map(|v| -v));
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        send(*a, zip(&g, tb, |x, y| x * y));
                    }
                    if self.rg(*b) {
                        send(*b, zip(&g, ta, |x, y| x * y));
                    }
                }
                Op::AddBias(x, b) => {
                    if self.rg(*b) {
                        let cols = g.cols();
                        let mut gb = vec![0.0; cols];
                        if cols > 0 {
                            for row in g.data().chunks(cols) {
                                for (acc, v) in gb.iter_mut().zip(row) {
                                    *acc += v;
                                }
                            }
                        }
                        send(*b, Tensor::vector(gb));
                    }
                    send(*x, g);
                }
                Op::Scale(x, f) => send(*x, g.map(|v| v * f)),
                Op::Sigmoid(x) => {
                    let y = node.value.as_ref().unwrap();
                    send(*x, zip(&g, y, |gv, yv| gv * yv * (1.0 - yv)));
                }
                Op::Tanh(x) => {
                    let y = node.value.as_ref().unwrap();
                    send(*x, zip(&g, y, |gv, yv| gv * (1.0 - yv * yv)));
                }
                Op::Concat(xs) => {
                    let rows = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for &x in xs {
                        let t = self.value(x);
                        let c = t.cols();
                        if self.rg(x) {
                            let mut data = Vec::with_capacity(rows * c);
                            for r in 0..rows {
                                data.extend_from_slice(
                                    &g.data()[r * total + offset..r * total + offset + c],
                                );
                            }
                            send(x, Tensor::new(t.shape().to_vec(), data)?);
                        }
                        offset += c;
                    }
                }
                Op::Slice { x, start, end } => {
                    let t = self.value(*x);
                    let c = t.cols();
                    let w = end - start;
                    let mut gx = Tensor::zeros(t.shape());
                    for r in 0..t.rows() {
                        gx.data_mut()[r * c + start..r * c + end]
                            .copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                    }
                    send(*x, gx);
                }
                Op::ConcatRows(xs) => {
                    let mut offset = 0;
                    for &x in xs {
                        let n = self.value(x).len();
                        if self.rg(x) {
                            let shape = self.value(x).shape().to_vec();
                            send(
                                x,
                                Tensor::new(shape, g.data()[offset..offset + n].to_vec())?,
                            );
                        }
                        offset += n;
                    }
                }
                Op::SliceRows { x, start, end } => {
                    let t = self.value(*x);
                    let c = t.cols();
                    let mut gx = Tensor::zeros(t.shape());
                    gx.data_mut()[start * c..end * c].copy_from_slice(g.data());
                    send(*x, gx);
                }
                Op::LogSumExp { x, axis } => {
                    let t = self.value(*x);
                    let y = node.value.as_ref().unwrap();
                    let mut gx = Tensor::zeros(t.shape());
                    let c = t.cols();
                    for (idx, v) in gx.data_mut().iter_mut().enumerate() {
                        let (r, col) = (idx / c, idx % c);
                        // Which reduced output this element fed into.
                        let o = match (t.rank(), axis) {
                            (1, _) => 0,
                            (_, 1) => r,
                            _ => col,
                        };
                        *v = g.data()[o] * (t.data()[idx] - y.data()[o]).exp();
                    }
                    send(*x, gx);
                }
                Op::Sum(x) => {
                    let t = self.value(*x);
                    send(*x, Tensor::full(t.shape(), g.item()));
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let d = t.cols();
                    let mut gt = Tensor::zeros(t.shape());
                    for (r, &i) in ids.iter().enumerate() {
                        let src = &g.data()[r * d..(r + 1) * d];
                        for (acc, v) in gt.data_mut()[i * d..(i + 1) * d].iter_mut().zip(src) {
                            *acc += v;
                        }
                    }
                    send(*table, gt);
                }
                Op::SelectRows { mask, a, b } => {
                    let c = g.cols();
                    let mut ga = Tensor::zeros(g.shape());
                    let mut gb = Tensor::zeros(g.shape());
                    for (r, &m) in mask.iter().enumerate() {
                        let dst = if m { &mut ga } else { &mut gb };
                        dst.data_mut()[r * c..(r + 1) * c]
                            .copy_from_slice(&g.data()[r * c..(r + 1) * c]);
                    }
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Custom { inputs, op } => {
                    let values: Vec<&Tensor> = inputs.iter().map(|&x| self.value(x)).collect();
                    let y = node.value.as_ref().unwrap();
                    let gs = op.backward(&g, &values, y);
                    if gs.len() != inputs.len() {
                        return Err(Error::shape(
                            op.name(),
                            format!(
                                "backward produced {} gradients for {} inputs",
                                gs.len(),
                                inputs.len()
                            ),
                        ));
                    }
                    for (&x, gx) in inputs.iter().zip(gs) {
                        if let Some(gx) = gx {
                            same_shape(op.name(), &gx, self.value(x))?;
                            send(x, gx);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, t: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(Real, Real) -> Real) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip of equal shapes")
}

/// Numerically stable `log Σ exp(x)`; `-inf` for an empty input.
pub(crate) fn lse(xs: impl Iterator<Item = Real> + Clone) -> Real {
    let max = xs.clone().fold(Real::NEG_INFINITY, Real::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<Real>().ln()
}
