//! Mean-field variational inference on the linear chain, unrolled for a
//! fixed number of iterations so that it can be trained end to end.
//!
//! Each iteration is a Jacobi update: position `i` reads only the previous
//! iteration's distributions at its neighbours, so all positions of one
//! iteration can be computed independently. Messages are expected
//! potentials under the neighbour's distribution:
//!
//! ```text
//! left[y]   = Σ_y' Q[i-1][y'] · U[y'][y]
//! right[y]  = Σ_y' Q[i+1][y'] · U[y][y']
//! left2[y]  = Σ_y' Q[i-2][y'] · Ũ[y'][y]      (second order only)
//! right2[y] = Σ_y' Q[i+2][y'] · Ũ[y][y']
//! Q'[i]     = softmax(unary[i] + left + right + left2 + right2)
//! ```
//!
//! Neighbours outside the sentence send zero messages.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Graph, NodeId};
use crate::encoder::{PotentialNodes, Potentials};
use crate::exact::{check_gold, InferenceError};
use crate::exec::{chunk_len_for, Executor};
use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Order {
    First,
    SecondFactorized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MfviConfig {
    pub iterations: usize,
    pub order: Order,
}

impl MfviConfig {
    pub const DEFAULT_ITERATIONS: usize = 3;

    pub fn new(iterations: usize, order: Order) -> Self {
        assert!(iterations >= 1, "at least one mean-field iteration");
        Self { iterations, order }
    }
}

impl Default for MfviConfig {
    fn default() -> Self {
        Self::new(Self::DEFAULT_ITERATIONS, Order::First)
    }
}

/// Distributions after each iteration, `Q⁰` through `Q^M`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTable {
    pub iterations: Vec<Tensor>,
}

impl MarginalTable {
    pub fn last(&self) -> &Tensor {
        self.iterations.last().expect("Q⁰ always present")
    }
}

/// `Q⁰ = row_softmax(unary)`.
pub fn mfvi_init(pot: &Potentials) -> Tensor {
    let mut q = pot.unary.clone();
    for i in 0..q.rows() {
        math::softmax_in_place(q.row_mut(i));
    }
    q
}

#[inline]
fn message_from_left(q: &[f64], table: &Tensor, acc: &mut [f64]) {
    acc.fill(0.0);
    for (k, &qk) in q.iter().enumerate() {
        for (a, &t) in acc.iter_mut().zip(table.row(k)) {
            *a += qk * t;
        }
    }
}

#[inline]
fn message_from_right(q: &[f64], table: &Tensor, acc: &mut [f64]) {
    for (y, a) in acc.iter_mut().enumerate() {
        let mut s = 0.0;
        for (&qk, &t) in q.iter().zip(table.row(y)) {
            s += qk * t;
        }
        *a = s;
    }
}

/// New distribution for position `i`, written to `out`. Reads only
/// `q_prev`; the result does not depend on which other positions have been
/// updated.
pub fn update_position(i: usize, q_prev: &Tensor, pot: &Potentials, order: Order, out: &mut [f64]) {
    let n = q_prev.rows();
    let l = q_prev.cols();
    let mut msg = [0.0f64; 64];
    let mut heap;
    let msg: &mut [f64] = if l <= msg.len() {
        &mut msg[..l]
    } else {
        heap = vec![0.0; l];
        &mut heap
    };
    out.copy_from_slice(pot.unary.row(i));
    let add = |out: &mut [f64], msg: &[f64]| {
        for (o, m) in out.iter_mut().zip(msg) {
            *o += m;
        }
    };
    // Absent neighbours contribute an explicit zero vector so the
    // arithmetic matches the graph formulation exactly.
    let u = &pot.transition;
    if i >= 1 {
        message_from_left(q_prev.row(i - 1), u, msg);
    } else {
        msg.fill(0.0);
    }
    add(out, msg);
    if i + 1 < n {
        message_from_right(q_prev.row(i + 1), u, msg);
    } else {
        msg.fill(0.0);
    }
    add(out, msg);
    if order == Order::SecondFactorized {
        let u2 = pot.transition2.as_ref().expect("second-order potentials carry Ũ");
        if i >= 2 {
            message_from_left(q_prev.row(i - 2), u2, msg);
        } else {
            msg.fill(0.0);
        }
        add(out, msg);
        if i + 2 < n {
            message_from_right(q_prev.row(i + 2), u2, msg);
        } else {
            msg.fill(0.0);
        }
        add(out, msg);
    }
    math::softmax_in_place(out);
}

/// One synchronous update of every position, split across the executor's
/// workers by contiguous position blocks.
pub fn mfvi_step<E: Executor>(q_prev: &Tensor, pot: &Potentials, order: Order, exec: &E) -> Tensor {
    let (n, l) = (q_prev.rows(), q_prev.cols());
    let mut next = Tensor::zeros(&[n, l]);
    let chunk = chunk_len_for(n * l, exec.workers(), l);
    exec.run_chunks(next.data_mut(), chunk, &|offset, rows| {
        let first = offset / l;
        for (r, out) in rows.chunks_mut(l).enumerate() {
            update_position(first + r, q_prev, pot, order, out);
        }
    });
    next
}

/// One update with positions visited in the given order. Only useful for
/// checking that the result is order-independent.
pub fn mfvi_step_in_order(q_prev: &Tensor, pot: &Potentials, order: Order, positions: &[usize]) -> Tensor {
    let mut next = Tensor::zeros(q_prev.shape());
    for &i in positions {
        update_position(i, q_prev, pot, order, next.row_mut(i));
    }
    next
}

pub fn mfvi_step_first_order<E: Executor>(q_prev: &Tensor, pot: &Potentials, exec: &E) -> Tensor {
    mfvi_step(q_prev, pot, Order::First, exec)
}

pub fn mfvi_step_second_order<E: Executor>(q_prev: &Tensor, pot: &Potentials, exec: &E) -> Tensor {
    mfvi_step(q_prev, pot, Order::SecondFactorized, exec)
}

/// All iterates `Q⁰..Q^M`.
pub fn run<E: Executor>(pot: &Potentials, cfg: MfviConfig, exec: &E) -> MarginalTable {
    let mut qs = Vec::with_capacity(cfg.iterations + 1);
    qs.push(mfvi_init(pot));
    for _ in 0..cfg.iterations {
        let next = mfvi_step(qs.last().unwrap(), pot, cfg.order, exec);
        qs.push(next);
    }
    MarginalTable { iterations: qs }
}

/// Per-position argmax of `Q^M`; ties resolve to the smaller label id.
pub fn ain_decode<E: Executor>(pot: &Potentials, cfg: MfviConfig, exec: &E) -> Vec<usize> {
    let mut q = mfvi_init(pot);
    for _ in 0..cfg.iterations {
        q = mfvi_step(&q, pot, cfg.order, exec);
    }
    (0..q.rows()).map(|i| math::argmax(q.row(i))).collect()
}

/// Transposed transition tables, built once per graph.
struct MessageTables {
    u: NodeId,
    ut: NodeId,
    second: Option<(NodeId, NodeId)>,
}

fn tables(g: &mut Graph<'_>, pot: &PotentialNodes, order: Order) -> Result<MessageTables, InferenceError> {
    let ut = g.transpose(pot.transition)?;
    let second = match order {
        Order::First => None,
        Order::SecondFactorized => {
            let u2 = pot.transition2.expect("second-order potentials carry Ũ");
            Some((u2, g.transpose(u2)?))
        }
    };
    Ok(MessageTables {
        u: pot.transition,
        ut,
        second,
    })
}

fn step_logits(g: &mut Graph<'_>, q: NodeId, unary: NodeId, t: &MessageTables) -> Result<NodeId, InferenceError> {
    let from_left = g.shift_rows(q, 1)?;
    let left = g.matmul(from_left, t.u)?;
    let from_right = g.shift_rows(q, -1)?;
    let right = g.matmul(from_right, t.ut)?;
    let mut logits = g.add(unary, left)?;
    logits = g.add(logits, right)?;
    if let Some((u2, u2t)) = t.second {
        let from_left2 = g.shift_rows(q, 2)?;
        let left2 = g.matmul(from_left2, u2)?;
        let from_right2 = g.shift_rows(q, -2)?;
        let right2 = g.matmul(from_right2, u2t)?;
        logits = g.add(logits, left2)?;
        logits = g.add(logits, right2)?;
    }
    Ok(logits)
}

/// Unrolled network as graph nodes. Returns the iterates `Q⁰..Q^{M-1}` and
/// the pre-softmax scores of iteration `M`.
pub fn unrolled_nodes(g: &mut Graph<'_>, pot: &PotentialNodes, cfg: MfviConfig) -> Result<(Vec<NodeId>, NodeId), InferenceError> {
    let t = tables(g, pot, cfg.order)?;
    let mut qs = vec![g.row_softmax(pot.unary)?];
    let mut logits = step_logits(g, qs[0], pot.unary, &t)?;
    for _ in 1..cfg.iterations {
        qs.push(g.row_softmax(logits)?);
        logits = step_logits(g, *qs.last().unwrap(), pot.unary, &t)?;
    }
    Ok((qs, logits))
}

/// `Q⁰..Q^M` as graph nodes.
pub fn marginal_nodes(g: &mut Graph<'_>, pot: &PotentialNodes, cfg: MfviConfig) -> Result<Vec<NodeId>, InferenceError> {
    let (mut qs, logits) = unrolled_nodes(g, pot, cfg)?;
    qs.push(g.row_softmax(logits)?);
    Ok(qs)
}

/// `−Σ_i log Q^M_i(gold_i)`, differentiable through every iteration.
pub fn ain_nll(g: &mut Graph<'_>, pot: &PotentialNodes, cfg: MfviConfig, gold: &[usize]) -> Result<NodeId, InferenceError> {
    let v = g.value(pot.unary);
    check_gold(gold, v.rows(), v.cols())?;
    let (_, logits) = unrolled_nodes(g, pot, cfg)?;
    nll_of_scores(g, logits, gold)
}

/// `−Σ_i log softmax(scores_i)[gold_i]`.
pub(crate) fn nll_of_scores(g: &mut Graph<'_>, scores: NodeId, gold: &[usize]) -> Result<NodeId, InferenceError> {
    let logq = g.row_log_softmax(scores)?;
    let at: Vec<(usize, usize)> = gold.iter().copied().enumerate().collect();
    let picked = g.pick(logq, &at)?;
    let total = g.sum(picked)?;
    Ok(g.mul_scalar(total, -1.0)?)
}
