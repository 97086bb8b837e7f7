//! Reverse-mode automatic differentiation over an append-only node arena.
//!
//! Every node's parents are created before it, so node index order is a
//! topological order and the backward pass is a single reverse sweep.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::math;
use crate::tensor::{matmul_into, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("backward root must hold a single value, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("gradients from a previous backward pass were not reset")]
    GradientsNotReset,
    #[error("node {0} refers to a parent that is not older than itself")]
    Cycle(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifies the operation that produced a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Matmul,
    Add,
    Sub,
    MulScalar,
    RowSoftmax,
    RowLogSoftmax,
    Log,
    GatherRows,
    Sum,
    Concat,
    Relu,
    ConvWindow,
    Transpose,
    ShiftRows,
    LogMatmul,
    Pick,
    SliceRows,
    RowLogSumExp,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    MulScalar(NodeId, f64),
    RowSoftmax(NodeId),
    RowLogSoftmax(NodeId),
    Log(NodeId),
    GatherRows(NodeId, Vec<usize>),
    Sum(NodeId),
    Concat(Vec<NodeId>),
    Relu(NodeId),
    ConvWindow { input: NodeId, kernel: NodeId, width: usize },
    Transpose(NodeId),
    ShiftRows(NodeId, isize),
    LogMatmul(NodeId, NodeId),
    Pick(NodeId, Vec<(usize, usize)>),
    SliceRows(NodeId, usize, usize),
    RowLogSumExp(NodeId),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Matmul(..) => OpKind::Matmul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::MulScalar(..) => OpKind::MulScalar,
            Op::RowSoftmax(..) => OpKind::RowSoftmax,
            Op::RowLogSoftmax(..) => OpKind::RowLogSoftmax,
            Op::Log(..) => OpKind::Log,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::Sum(..) => OpKind::Sum,
            Op::Concat(..) => OpKind::Concat,
            Op::Relu(..) => OpKind::Relu,
            Op::ConvWindow { .. } => OpKind::ConvWindow,
            Op::Transpose(..) => OpKind::Transpose,
            Op::ShiftRows(..) => OpKind::ShiftRows,
            Op::LogMatmul(..) => OpKind::LogMatmul,
            Op::Pick(..) => OpKind::Pick,
            Op::SliceRows(..) => OpKind::SliceRows,
            Op::RowLogSumExp(..) => OpKind::RowLogSumExp,
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Matmul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::LogMatmul(a, b) => vec![*a, *b],
            Op::ConvWindow { input, kernel, .. } => vec![*input, *kernel],
            Op::Concat(xs) => xs.clone(),
            Op::MulScalar(a, _)
            | Op::RowSoftmax(a)
            | Op::RowLogSoftmax(a)
            | Op::Log(a)
            | Op::GatherRows(a, _)
            | Op::Sum(a)
            | Op::Relu(a)
            | Op::Transpose(a)
            | Op::ShiftRows(a, _)
            | Op::Pick(a, _)
            | Op::SliceRows(a, _, _)
            | Op::RowLogSumExp(a) => vec![*a],
        }
    }
}

enum Value<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

impl Value<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
    needs_grad: bool,
}

/// A computation graph. Parameters may be borrowed for the graph's lifetime
/// so that building a graph per batch does not copy large tables.
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    grads: Vec<Option<Tensor>>,
    tracking: bool,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> GraphError {
    GraphError::Tensor(TensorError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    })
}

fn expect_2d(op: &'static str, a: &Tensor) -> Result<(), GraphError> {
    if a.rank() == 2 {
        Ok(())
    } else {
        Err(GraphError::Tensor(TensorError::Shape {
            op,
            left: a.shape().to_vec(),
            right: vec![],
        }))
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            tracking: true,
        }
    }

    /// A graph that records values only; no node ever requires a gradient.
    pub fn inference() -> Self {
        Self {
            tracking: false,
            ..Self::new()
        }
    }

    pub fn is_tracking(&self) -> bool {
        self.tracking
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0].value.get()
    }

    pub fn kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.parents()
    }

    /// Accumulated gradient, `None` meaning zero.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn grad_or_zeros(&self, id: NodeId) -> Tensor {
        self.grads[id.0].clone().unwrap_or_else(|| Tensor::zeros(self.value(id).shape()))
    }

    pub fn take_grad(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads[id.0].take()
    }

    pub fn zero_grads(&mut self, nodes: &[NodeId]) {
        for id in nodes {
            self.grads[id.0] = None;
        }
    }

    pub fn zero_all_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn push(&mut self, value: Value<'p>, op: Op, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            needs_grad: needs_grad && self.tracking,
        });
        self.grads.push(None);
        id
    }

    fn derived(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<NodeId, GraphError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name }.into());
        }
        let needs = op.parents().iter().any(|p| self.nodes[p.0].needs_grad);
        Ok(self.push(Value::Owned(value), op, needs))
    }

    /// A constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Value::Owned(value), Op::Leaf, false)
    }

    /// An owned leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(Value::Owned(value), Op::Leaf, true)
    }

    /// A borrowed leaf that receives a gradient.
    pub fn param(&mut self, value: &'p Tensor) -> NodeId {
        self.push(Value::Borrowed(value), Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(shape_err("matmul", av, bv));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        matmul_into(av.data(), bv.data(), out.data_mut(), m, k, n);
        self.derived("matmul", out, Op::Matmul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av, bv));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        self.derived("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("sub", av, bv));
        }
        let mut out = av.clone();
        out.axpy(-1.0, bv);
        self.derived("sub", out, Op::Sub(a, b))
    }

    pub fn mul_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId, GraphError> {
        let mut out = self.value(a).clone();
        out.scale(c);
        self.derived("mul_scalar", out, Op::MulScalar(a, c))
    }

    pub fn row_softmax(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let av = self.value(a);
        expect_2d("row_softmax", av)?;
        let mut out = av.clone();
        for i in 0..out.rows() {
            math::softmax_in_place(out.row_mut(i));
        }
        self.derived("row_softmax", out, Op::RowSoftmax(a))
    }

    pub fn row_log_softmax(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let av = self.value(a);
        expect_2d("row_log_softmax", av)?;
        let mut out = av.clone();
        for i in 0..out.rows() {
            math::log_softmax_in_place(out.row_mut(i));
        }
        self.derived("row_log_softmax", out, Op::RowLogSoftmax(a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            *v = math::ln(*v);
        }
        self.derived("log", out, Op::Log(a))
    }

    /// Selects rows of a 2-D table by index.
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, GraphError> {
        let tv = self.value(table);
        expect_2d("gather_rows", tv)?;
        let (rows, cols) = (tv.rows(), tv.cols());
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            if i >= rows {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: i,
                    bound: rows,
                }
                .into());
            }
            data.extend_from_slice(tv.row(i));
        }
        let out = Tensor::new(vec![ids.len(), cols], data)?;
        self.derived("gather_rows", out, Op::GatherRows(table, ids.to_vec()))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let s: f64 = self.value(a).data().iter().sum();
        self.derived("sum", Tensor::scalar(s), Op::Sum(a))
    }

    /// Stacks 2-D tensors with equal column counts along rows.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, GraphError> {
        let first = match parts.first() {
            Some(&p) => self.value(p),
            None => {
                return Err(TensorError::Shape {
                    op: "concat",
                    left: vec![],
                    right: vec![],
                }
                .into())
            }
        };
        expect_2d("concat", first)?;
        let cols = first.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 2 || v.cols() != cols {
                return Err(shape_err("concat", first, v));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        self.derived("concat", out, Op::Concat(parts.to_vec()))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.derived("relu", out, Op::Relu(a))
    }

    /// 1-D convolution over rows: `input` is n×e, `kernel` is (width·e)×d,
    /// rows outside the sequence read as zeros. `width` must be odd.
    pub fn conv_window(&mut self, input: NodeId, kernel: NodeId, width: usize) -> Result<NodeId, GraphError> {
        let (xv, kv) = (self.value(input), self.value(kernel));
        expect_2d("conv_window", xv)?;
        expect_2d("conv_window", kv)?;
        let (n, e) = (xv.rows(), xv.cols());
        if width % 2 == 0 || kv.rows() != width * e {
            return Err(shape_err("conv_window", xv, kv));
        }
        let d = kv.cols();
        let half = width / 2;
        let mut out = Tensor::zeros(&[n, d]);
        for i in 0..n {
            let orow = out.row_mut(i);
            for o in 0..width {
                let Some(j) = (i + o).checked_sub(half).filter(|&j| j < n) else {
                    continue;
                };
                let xrow = xv.row(j);
                for (p, &x) in xrow.iter().enumerate() {
                    let krow = kv.row(o * e + p);
                    for (acc, &k) in orow.iter_mut().zip(krow) {
                        *acc += x * k;
                    }
                }
            }
        }
        self.derived("conv_window", out, Op::ConvWindow { input, kernel, width })
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let av = self.value(a);
        expect_2d("transpose", av)?;
        let out = av.transpose();
        self.derived("transpose", out, Op::Transpose(a))
    }

    /// `out[i] = a[i - offset]`, zero where `i - offset` falls outside.
    pub fn shift_rows(&mut self, a: NodeId, offset: isize) -> Result<NodeId, GraphError> {
        let av = self.value(a);
        expect_2d("shift_rows", av)?;
        let (n, c) = (av.rows(), av.cols());
        let mut out = Tensor::zeros(&[n, c]);
        for i in 0..n {
            let src = i as isize - offset;
            if src >= 0 && (src as usize) < n {
                out.row_mut(i).copy_from_slice(av.row(src as usize));
            }
        }
        self.derived("shift_rows", out, Op::ShiftRows(a, offset))
    }

    /// Log-semiring product: `out[i][j] = logsumexp_p(a[i][p] + b[p][j])`.
    pub fn log_matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(shape_err("log_matmul", av, bv));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = Tensor::zeros(&[m, n]);
        let mut col = vec![0.0; k];
        for i in 0..m {
            for j in 0..n {
                for (p, c) in col.iter_mut().enumerate() {
                    *c = av.at(i, p) + bv.at(p, j);
                }
                out.set(i, j, math::logsumexp(&col));
            }
        }
        self.derived("log_matmul", out, Op::LogMatmul(a, b))
    }

    /// Picks individual entries `(row, col)` of a 2-D tensor into a vector.
    pub fn pick(&mut self, a: NodeId, at: &[(usize, usize)]) -> Result<NodeId, GraphError> {
        let av = self.value(a);
        expect_2d("pick", av)?;
        let mut data = Vec::with_capacity(at.len());
        for &(r, c) in at {
            if r >= av.rows() || c >= av.cols() {
                return Err(TensorError::Index {
                    op: "pick",
                    index: if r >= av.rows() { r } else { c },
                    bound: if r >= av.rows() { av.rows() } else { av.cols() },
                }
                .into());
            }
            data.push(av.at(r, c));
        }
        let out = Tensor::new(vec![at.len()], data)?;
        self.derived("pick", out, Op::Pick(a, at.to_vec()))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, GraphError> {
        let av = self.value(a);
        expect_2d("slice_rows", av)?;
        if start >= end || end > av.rows() {
            return Err(TensorError::Index {
                op: "slice_rows",
                index: end,
                bound: av.rows(),
            }
            .into());
        }
        let c = av.cols();
        let out = Tensor::new(vec![end - start, c], av.data()[start * c..end * c].to_vec())?;
        self.derived("slice_rows", out, Op::SliceRows(a, start, end))
    }

    /// Per-row log-sum-exp of a 2-D tensor; result has one entry per row.
    pub fn row_logsumexp(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let av = self.value(a);
        expect_2d("row_logsumexp", av)?;
        let data: Vec<f64> = (0..av.rows()).map(|i| math::logsumexp(av.row(i))).collect();
        let out = Tensor::new(vec![av.rows()], data)?;
        self.derived("row_logsumexp", out, Op::RowLogSumExp(a))
    }

    fn accumulate(&mut self, id: NodeId, delta: Tensor) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut self.grads[id.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate_with(&mut self, id: NodeId, f: impl FnOnce(&mut Tensor)) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let shape = self.nodes[id.0].value.get().shape().to_vec();
        let g = self.grads[id.0].get_or_insert_with(|| Tensor::zeros(&shape));
        f(g);
    }

    /// Fills every reachable node's accumulator with the derivative of
    /// `root` with respect to that node.
    pub fn backward(&mut self, root: NodeId) -> Result<(), GraphError> {
        if self.value(root).len() != 1 {
            return Err(GraphError::NonScalarRoot(self.value(root).shape().to_vec()));
        }
        if self.grads.iter().any(Option::is_some) {
            return Err(GraphError::GradientsNotReset);
        }
        for (i, node) in self.nodes.iter().enumerate().take(root.0 + 1) {
            if node.op.parents().iter().any(|p| p.0 >= i) {
                return Err(GraphError::Cycle(i));
            }
        }
        self.grads[root.0] = Some(Tensor::filled(self.value(root).shape(), 1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &Tensor) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.nodes[a.0].needs_grad {
                    // g · bᵀ
                    let mut ga = Tensor::zeros(&[m, k]);
                    for r in 0..m {
                        let grow = g.row(r);
                        for p in 0..k {
                            let brow = bv.row(p);
                            let mut s = 0.0;
                            for (x, y) in grow.iter().zip(brow) {
                                s += x * y;
                            }
                            ga.set(r, p, s);
                        }
                    }
                    self.accumulate(a, ga);
                }
                if self.nodes[b.0].needs_grad {
                    // aᵀ · g
                    let av = self.value(a);
                    let mut gb = Tensor::zeros(&[k, n]);
                    for r in 0..m {
                        let grow = g.row(r);
                        for p in 0..k {
                            let x = av.at(r, p);
                            if x == 0.0 {
                                continue;
                            }
                            for (o, &y) in gb.row_mut(p).iter_mut().zip(grow) {
                                *o += x * y;
                            }
                        }
                    }
                    self.accumulate(b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate_with(a, |t| t.add_assign(g));
                self.accumulate_with(b, |t| t.add_assign(g));
            }
            Op::Sub(a, b) => {
                self.accumulate_with(a, |t| t.add_assign(g));
                self.accumulate_with(b, |t| t.axpy(-1.0, g));
            }
            Op::MulScalar(a, c) => self.accumulate_with(a, |t| t.axpy(c, g)),
            Op::RowSoftmax(a) => {
                let y = self.nodes[i].value.get();
                let mut ga = Tensor::zeros(y.shape());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((o, &p), &q) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = p * (q - dot);
                    }
                }
                self.accumulate(a, ga);
            }
            Op::RowLogSoftmax(a) => {
                let y = self.nodes[i].value.get();
                let mut ga = Tensor::zeros(y.shape());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let total: f64 = gr.iter().sum();
                    for ((o, &ly), &q) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = q - math::exp(ly) * total;
                    }
                }
                self.accumulate(a, ga);
            }
            Op::Log(a) => {
                let x = self.value(a);
                let mut ga = g.clone();
                for (o, &xv) in ga.data_mut().iter_mut().zip(x.data()) {
                    *o /= xv;
                }
                self.accumulate(a, ga);
            }
            Op::GatherRows(a, ids) => {
                self.accumulate_with(a, |t| {
                    for (r, &src) in ids.iter().enumerate() {
                        for (o, &q) in t.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o += q;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let s = g.item();
                self.accumulate_with(a, |t| {
                    for o in t.data_mut() {
                        *o += s;
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let rows = self.value(p).rows();
                    let c = g.cols();
                    let piece = &g.data()[offset * c..(offset + rows) * c];
                    self.accumulate_with(p, |t| {
                        for (o, &q) in t.data_mut().iter_mut().zip(piece) {
                            *o += q;
                        }
                    });
                    offset += rows;
                }
            }
            Op::Relu(a) => {
                let y = self.nodes[i].value.get();
                let mut ga = g.clone();
                for (o, &yv) in ga.data_mut().iter_mut().zip(y.data()) {
                    if yv <= 0.0 {
                        *o = 0.0;
                    }
                }
                self.accumulate(a, ga);
            }
            Op::ConvWindow { input, kernel, width } => {
                let (xv, kv) = (self.value(input), self.value(kernel));
                let (n, e, d) = (xv.rows(), xv.cols(), kv.cols());
                let half = width / 2;
                let want_x = self.nodes[input.0].needs_grad;
                let want_k = self.nodes[kernel.0].needs_grad;
                let mut gx = if want_x { Some(Tensor::zeros(&[n, e])) } else { None };
                let mut gk = if want_k { Some(Tensor::zeros(&[width * e, d])) } else { None };
                for r in 0..n {
                    let grow = g.row(r);
                    for o in 0..width {
                        let Some(j) = (r + o).checked_sub(half).filter(|&j| j < n) else {
                            continue;
                        };
                        for p in 0..e {
                            let krow = kv.row(o * e + p);
                            if let Some(gx) = gx.as_mut() {
                                let s: f64 = krow.iter().zip(grow).map(|(k, q)| k * q).sum();
                                let v = gx.at(j, p) + s;
                                gx.set(j, p, v);
                            }
                            if let Some(gk) = gk.as_mut() {
                                let x = xv.at(j, p);
                                for (acc, &q) in gk.row_mut(o * e + p).iter_mut().zip(grow) {
                                    *acc += x * q;
                                }
                            }
                        }
                    }
                }
                if let Some(gx) = gx {
                    self.accumulate(input, gx);
                }
                if let Some(gk) = gk {
                    self.accumulate(kernel, gk);
                }
            }
            Op::Transpose(a) => self.accumulate(a, g.transpose()),
            Op::ShiftRows(a, offset) => {
                let n = g.rows();
                self.accumulate_with(a, |t| {
                    for r in 0..n {
                        let src = r as isize - offset;
                        if src >= 0 && (src as usize) < n {
                            for (o, &q) in t.row_mut(src as usize).iter_mut().zip(g.row(r)) {
                                *o += q;
                            }
                        }
                    }
                });
            }
            Op::LogMatmul(a, b) => {
                let out = self.nodes[i].value.get();
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let mut ga = Tensor::zeros(&[m, k]);
                let mut gb = Tensor::zeros(&[k, n]);
                for r in 0..m {
                    for j in 0..n {
                        let q = g.at(r, j);
                        let o = out.at(r, j);
                        for p in 0..k {
                            let w = q * math::exp(av.at(r, p) + bv.at(p, j) - o);
                            ga.set(r, p, ga.at(r, p) + w);
                            gb.set(p, j, gb.at(p, j) + w);
                        }
                    }
                }
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::Pick(a, at) => {
                self.accumulate_with(a, |t| {
                    for (&(r, c), &q) in at.iter().zip(g.data()) {
                        let v = t.at(r, c) + q;
                        t.set(r, c, v);
                    }
                });
            }
            Op::SliceRows(a, start, end) => {
                self.accumulate_with(a, |t| {
                    let c = t.cols();
                    for (o, &q) in t.data_mut()[start * c..end * c].iter_mut().zip(g.data()) {
                        *o += q;
                    }
                });
            }
            Op::RowLogSumExp(a) => {
                let out = self.nodes[i].value.get();
                let x = self.value(a);
                let mut ga = Tensor::zeros(x.shape());
                for r in 0..x.rows() {
                    let (q, lse) = (g.data()[r], out.data()[r]);
                    for (o, &v) in ga.row_mut(r).iter_mut().zip(x.row(r)) {
                        *o = q * math::exp(v - lse);
                    }
                }
                self.accumulate(a, ga);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zero_row_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[[0.0, 0.0]]));
        let y = g.row_softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_closed_form() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[[1.0, 0.0]]));
        let y = g.row_softmax(x).unwrap();
        // e / (e + 1) evaluated by hand
        assert!((g.value(y).data()[0] - 0.731_058_578_630_004_9).abs() < 1e-5);
        assert!((g.value(y).data()[1] - 0.268_941_421_369_995_1).abs() < 1e-5);
    }

    #[test]
    fn identity_matmul_node() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::identity(2));
        let x = g.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
        let y = g.matmul(i, x).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn shape_mismatch_names_operation() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4, 2]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("matmul") && msg.contains("[2, 3]") && msg.contains("[4, 2]"));
        let v = g.constant(Tensor::zeros(&[3]));
        assert!(g.row_softmax(v).is_err());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::new(vec![3], vec![1.0, -2.0, 5.0]).unwrap());
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn constant_root_leaves_others_zero() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(2.0));
        let c = g.variable(Tensor::scalar(3.0));
        let _ = g.mul_scalar(x, 4.0).unwrap();
        g.backward(c).unwrap();
        assert_eq!(g.grad(c).unwrap().item(), 1.0);
        assert!(g.grad_or_zeros(x).is_all_zero());
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::zeros(&[2, 2]));
        assert_eq!(g.backward(x), Err(GraphError::NonScalarRoot(vec![2, 2])));
    }

    #[test]
    fn repeated_backward_requires_reset() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.backward(s), Err(GraphError::GradientsNotReset));
        g.zero_grads(&[x, s]);
        assert!(g.grad_or_zeros(x).is_all_zero());
        g.zero_grads(&[x, s]);
        g.zero_grads(&[]);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::from_rows(&[[1.0, 2.0]]));
        let y = g.add(x, x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn log_of_zero_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0));
        assert!(matches!(g.log(x), Err(GraphError::Tensor(TensorError::NonFinite { op: "log" }))));
    }

    #[test]
    fn inference_graph_tracks_nothing() {
        let mut g = Graph::inference();
        let w = Tensor::identity(2);
        let p = g.param(&w);
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(p).is_none());
    }

    #[test]
    fn gather_rows_rejects_bad_index() {
        let mut g = Graph::new();
        let t = g.constant(Tensor::zeros(&[3, 2]));
        assert!(g.gather_rows(t, &[0, 3]).is_err());
    }

    #[test]
    fn conv_window_single_row_uses_center_tap() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[[2.0]]));
        let k = g.constant(Tensor::from_rows(&[[10.0], [3.0], [10.0]]));
        let y = g.conv_window(x, k, 3).unwrap();
        assert_eq!(g.value(y).data(), &[6.0]);
    }
}
