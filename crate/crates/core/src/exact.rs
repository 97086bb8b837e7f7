//! Exact inference on the first-order linear chain: forward (log Z),
//! forward-backward marginals, Viterbi, and the CRF negative log-likelihood.
//!
//! There is no start or stop transition; the first label only pays its
//! emission score.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::autodiff::{Graph, GraphError, NodeId};
use crate::encoder::{PotentialNodes, Potentials};
use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("label {label} at position {position} is not below the label count {labels}")]
    LabelOutOfRange { position: usize, label: usize, labels: usize },
    #[error("gold sequence has {gold} labels for a sentence of {tokens} tokens")]
    LengthMismatch { gold: usize, tokens: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub(crate) fn check_gold(gold: &[usize], n: usize, labels: usize) -> Result<(), InferenceError> {
    if gold.len() != n {
        return Err(InferenceError::LengthMismatch {
            gold: gold.len(),
            tokens: n,
        });
    }
    match gold.iter().enumerate().find(|(_, &y)| y >= labels) {
        Some((position, &label)) => Err(InferenceError::LabelOutOfRange { position, label, labels }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiResult {
    pub path: Vec<usize>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalResult {
    /// n×L, `P(y_i = y | x)`.
    pub unary_marginals: Tensor,
    pub log_partition: f64,
}

/// Total first-order potential of a label path.
pub fn path_score(pot: &Potentials, path: &[usize]) -> f64 {
    let mut s = 0.0;
    for (i, &y) in path.iter().enumerate() {
        s += pot.unary.at(i, y);
        if i > 0 {
            s += pot.transition.at(path[i - 1], y);
        }
    }
    s
}

/// Log-space forward table `alpha[i][y]`.
fn forward(pot: &Potentials) -> Vec<f64> {
    let (n, l) = (pot.len(), pot.labels());
    let u = &pot.transition;
    let mut alpha = vec![0.0; n * l];
    alpha[..l].copy_from_slice(pot.unary.row(0));
    let mut scratch = vec![0.0; l];
    for i in 1..n {
        let (prev, cur) = alpha.split_at_mut(i * l);
        let prev = &prev[(i - 1) * l..];
        for y in 0..l {
            for (yp, s) in scratch.iter_mut().enumerate() {
                *s = prev[yp] + u.at(yp, y);
            }
            cur[y] = math::logsumexp(&scratch) + pot.unary.at(i, y);
        }
    }
    alpha
}

/// Log-space backward table `beta[i][y]` (excluding position i's emission).
fn backward(pot: &Potentials) -> Vec<f64> {
    let (n, l) = (pot.len(), pot.labels());
    let u = &pot.transition;
    let mut beta = vec![0.0; n * l];
    let mut scratch = vec![0.0; l];
    for i in (0..n.saturating_sub(1)).rev() {
        let (cur, next) = beta.split_at_mut((i + 1) * l);
        let cur = &mut cur[i * l..];
        let next = &next[..l];
        for y in 0..l {
            for (yn, s) in scratch.iter_mut().enumerate() {
                *s = u.at(y, yn) + pot.unary.at(i + 1, yn) + next[yn];
            }
            cur[y] = math::logsumexp(&scratch);
        }
    }
    beta
}

/// `log Σ_y exp(score(y))` over all label sequences.
pub fn log_partition(pot: &Potentials) -> f64 {
    let (n, l) = (pot.len(), pot.labels());
    let alpha = forward(pot);
    math::logsumexp(&alpha[(n - 1) * l..])
}

/// Highest-scoring label sequence; ties resolve to the smaller label id.
pub fn viterbi(pot: &Potentials) -> ViterbiResult {
    let (n, l) = (pot.len(), pot.labels());
    let u = &pot.transition;
    let mut delta: Vec<f64> = pot.unary.row(0).to_vec();
    let mut next = vec![0.0; l];
    let mut back = vec![0usize; n * l];
    for i in 1..n {
        for y in 0..l {
            let mut best = 0;
            let mut best_score = delta[0] + u.at(0, y);
            for yp in 1..l {
                let s = delta[yp] + u.at(yp, y);
                if s > best_score {
                    best = yp;
                    best_score = s;
                }
            }
            back[i * l + y] = best;
            next[y] = best_score + pot.unary.at(i, y);
        }
        core::mem::swap(&mut delta, &mut next);
    }
    let last = math::argmax(&delta);
    let score = delta[last];
    let mut path = vec![0; n];
    path[n - 1] = last;
    for i in (1..n).rev() {
        path[i - 1] = back[i * l + path[i]];
    }
    ViterbiResult { path, score }
}

/// Posterior marginals by forward-backward.
pub fn marginals(pot: &Potentials) -> MarginalResult {
    let (n, l) = (pot.len(), pot.labels());
    let alpha = forward(pot);
    let beta = backward(pot);
    let log_z = math::logsumexp(&alpha[(n - 1) * l..]);
    let mut m = Tensor::zeros(&[n, l]);
    for i in 0..n {
        let row = m.row_mut(i);
        for y in 0..l {
            row[y] = math::exp(alpha[i * l + y] + beta[i * l + y] - log_z);
        }
        // renormalise away accumulated rounding
        let s: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    MarginalResult {
        unary_marginals: m,
        log_partition: log_z,
    }
}

/// `log Z − score(gold)` computed without a graph.
pub fn crf_nll_value(pot: &Potentials, gold: &[usize]) -> Result<f64, InferenceError> {
    check_gold(gold, pot.len(), pot.labels())?;
    Ok(log_partition(pot) - path_score(pot, gold))
}

/// Forward recursion as graph nodes: one log-semiring product per position.
pub fn log_partition_node(g: &mut Graph<'_>, pot: &PotentialNodes) -> Result<NodeId, InferenceError> {
    let n = g.value(pot.unary).rows();
    let mut alpha = g.slice_rows(pot.unary, 0, 1)?;
    for i in 1..n {
        let carried = g.log_matmul(alpha, pot.transition)?;
        let emit = g.slice_rows(pot.unary, i, i + 1)?;
        alpha = g.add(carried, emit)?;
    }
    Ok(g.row_logsumexp(alpha)?)
}

/// Gold path score as a graph node.
pub fn gold_score_node(g: &mut Graph<'_>, pot: &PotentialNodes, gold: &[usize]) -> Result<NodeId, InferenceError> {
    let emit_at: Vec<(usize, usize)> = gold.iter().copied().enumerate().collect();
    let emit = g.pick(pot.unary, &emit_at)?;
    let emit = g.sum(emit)?;
    if gold.len() < 2 {
        return Ok(emit);
    }
    let trans_at: Vec<(usize, usize)> = gold.windows(2).map(|w| (w[0], w[1])).collect();
    let trans = g.pick(pot.transition, &trans_at)?;
    let trans = g.sum(trans)?;
    Ok(g.add(emit, trans)?)
}

/// CRF negative log-likelihood of `gold`, differentiable in unary and U.
pub fn crf_nll(g: &mut Graph<'_>, pot: &PotentialNodes, gold: &[usize]) -> Result<NodeId, InferenceError> {
    let v = g.value(pot.unary);
    check_gold(gold, v.rows(), v.cols())?;
    let log_z = log_partition_node(g, pot)?;
    let score = gold_score_node(g, pot, gold)?;
    Ok(g.sub(log_z, score)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pot(unary: &[&[f64]], l: usize) -> Potentials {
        Potentials::new(Tensor::from_rows(unary), Tensor::zeros(&[l, l]), None)
    }

    #[test]
    fn single_uniform_position() {
        let p = pot(&[&[0.0, 0.0]], 2);
        assert!((log_partition(&p) - math::ln(2.0)).abs() < 1e-15);
    }

    #[test]
    fn two_by_two_enumeration() {
        let p = pot(&[&[1.0, 0.0], &[0.0, 1.0]], 2);
        let e = core::f64::consts::E;
        let expected = math::ln(e + e * e + 1.0 + e);
        assert!((log_partition(&p) - expected).abs() < 1e-12);
        let v = viterbi(&p);
        assert_eq!(v.path, [0, 1]);
        assert_eq!(v.score, 2.0);
    }

    #[test]
    fn decoupled_viterbi_is_rowwise_argmax() {
        let p = pot(&[&[0.1, 0.5, 0.2], &[0.9, 0.0, 0.3], &[0.0, 0.0, 0.1]], 3);
        assert_eq!(viterbi(&p).path, [1, 0, 2]);
    }

    #[test]
    fn viterbi_tie_break_prefers_small_ids() {
        let p = pot(&[&[0.0, 0.0], &[0.0, 0.0]], 2);
        assert_eq!(viterbi(&p).path, [0, 0]);
    }

    #[test]
    fn independent_marginals_are_softmax() {
        let p = pot(&[&[1.0, 0.0], &[0.3, -0.2]], 2);
        let m = marginals(&p).unary_marginals;
        for i in 0..2 {
            let mut row = p.unary.row(i).to_vec();
            math::softmax_in_place(&mut row);
            for y in 0..2 {
                assert!((m.at(i, y) - row[y]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn uniform_nll_is_n_log_l() {
        let p = Potentials::new(Tensor::zeros(&[4, 3]), Tensor::zeros(&[3, 3]), None);
        let nll = crf_nll_value(&p, &[0, 2, 1, 1]).unwrap();
        assert!((nll - 4.0 * math::ln(3.0)).abs() < 1e-12);
    }

    #[test]
    fn extreme_potentials_give_zero_nll() {
        let unary = Tensor::from_rows(&[[50.0, -50.0], [-50.0, 50.0], [50.0, -50.0]]);
        let p = Potentials::new(unary, Tensor::zeros(&[2, 2]), None);
        let gold = viterbi(&p).path;
        assert!(crf_nll_value(&p, &gold).unwrap().abs() < 1e-6);
    }

    #[test]
    fn bad_gold_is_rejected() {
        let p = pot(&[&[0.0, 0.0]], 2);
        assert!(matches!(
            crf_nll_value(&p, &[2]),
            Err(InferenceError::LabelOutOfRange { position: 0, label: 2, .. })
        ));
        assert!(matches!(crf_nll_value(&p, &[0, 1]), Err(InferenceError::LengthMismatch { .. })));
    }

    #[test]
    fn long_sequences_do_not_overflow() {
        let n = 1000;
        let mut rng = crate::rng::SplitMix64::new(9);
        let unary = Tensor::new(vec![n, 4], (0..4 * n).map(|_| rng.uniform(-50.0, 50.0)).collect()).unwrap();
        let trans = Tensor::new(vec![4, 4], (0..16).map(|_| rng.uniform(-50.0, 50.0)).collect()).unwrap();
        let p = Potentials::new(unary, trans, None);
        assert!(log_partition(&p).is_finite());
        let m = marginals(&p);
        assert!(m.unary_marginals.is_finite());
    }

    #[test]
    fn graph_forward_matches_plain_forward() {
        let mut rng = crate::rng::SplitMix64::new(4);
        let unary = Tensor::new(vec![5, 3], (0..15).map(|_| rng.uniform(-3.0, 3.0)).collect()).unwrap();
        let trans = Tensor::new(vec![3, 3], (0..9).map(|_| rng.uniform(-3.0, 3.0)).collect()).unwrap();
        let p = Potentials::new(unary.clone(), trans.clone(), None);
        let mut g = Graph::new();
        let nodes = PotentialNodes {
            unary: g.variable(unary),
            transition: g.variable(trans),
            transition2: None,
        };
        let gold = [0, 2, 2, 1, 0];
        let loss = crf_nll(&mut g, &nodes, &gold).unwrap();
        assert!((g.value(loss).item() - crf_nll_value(&p, &gold).unwrap()).abs() < 1e-12);
    }
}
