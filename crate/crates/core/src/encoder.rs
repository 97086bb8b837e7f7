//! Token ids to contextual features to unary potentials.

use thiserror::Error;

use crate::autodiff::{Graph, GraphError, NodeId};
use crate::mfvi::Order;
use crate::model::{EncoderConfig, EncoderKind, ModelBundle, ParamName, Params};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncoderError {
    #[error("token id {id} at position {position} is outside the vocabulary of size {vocab}")]
    TokenOutOfRange { position: usize, id: usize, vocab: usize },
    #[error("cannot encode an empty sentence")]
    Empty,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Potential values for one sentence, detached from any graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Potentials {
    /// n×L emission scores.
    pub unary: Tensor,
    /// L×L scores between adjacent labels, indexed `[left][right]`.
    pub transition: Tensor,
    /// L×L scores between labels two apart; second-order models only.
    pub transition2: Option<Tensor>,
}

impl Potentials {
    pub fn new(unary: Tensor, transition: Tensor, transition2: Option<Tensor>) -> Self {
        let pot = Self {
            unary,
            transition,
            transition2,
        };
        debug_assert!(pot.is_consistent());
        pot
    }

    pub fn len(&self) -> usize {
        self.unary.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.unary.rows() == 0
    }

    pub fn labels(&self) -> usize {
        self.unary.cols()
    }

    pub fn is_consistent(&self) -> bool {
        let l = self.unary.cols();
        self.unary.rank() == 2 && self.transition.shape() == [l, l] && self.transition2.as_ref().map_or(true, |t| t.shape() == [l, l])
    }
}

/// Potentials as graph nodes, for building losses.
#[derive(Debug, Clone, Copy)]
pub struct PotentialNodes {
    pub unary: NodeId,
    pub transition: NodeId,
    pub transition2: Option<NodeId>,
}

/// Parameter leaves registered in a graph.
#[derive(Debug, Clone, Copy)]
pub struct ParamNodes {
    pub embedding: NodeId,
    pub encoder: NodeId,
    pub emission: NodeId,
    pub transition: NodeId,
    pub transition2: NodeId,
}

impl ParamNodes {
    pub fn attach<'p>(g: &mut Graph<'p>, params: &'p Params) -> Self {
        Self {
            embedding: g.param(&params.embedding),
            encoder: g.param(&params.encoder),
            emission: g.param(&params.emission),
            transition: g.param(&params.transition),
            transition2: g.param(&params.transition2),
        }
    }

    pub fn get(&self, name: ParamName) -> NodeId {
        match name {
            ParamName::Embedding => self.embedding,
            ParamName::Encoder => self.encoder,
            ParamName::Emission => self.emission,
            ParamName::Transition => self.transition,
            ParamName::Transition2 => self.transition2,
        }
    }

    pub fn all(&self) -> [NodeId; 5] {
        [self.embedding, self.encoder, self.emission, self.transition, self.transition2]
    }

    /// Moves accumulated parameter gradients out of the graph.
    pub fn collect_grads(&self, g: &mut Graph<'_>, template: &Params) -> Params {
        let mut out = template.zeros_like();
        for name in ParamName::ALL {
            if let Some(t) = g.take_grad(self.get(name)) {
                *out.get_mut(name) = t;
            }
        }
        out
    }
}

/// Contextual features `r` (n×d) for a token-id sequence.
pub fn encode(g: &mut Graph<'_>, p: &ParamNodes, cfg: &EncoderConfig, tokens: &[usize]) -> Result<NodeId, EncoderError> {
    if tokens.is_empty() {
        return Err(EncoderError::Empty);
    }
    if let Some((position, &id)) = tokens.iter().enumerate().find(|(_, &t)| t >= cfg.vocab_size) {
        return Err(EncoderError::TokenOutOfRange {
            position,
            id,
            vocab: cfg.vocab_size,
        });
    }
    let x = g.gather_rows(p.embedding, tokens)?;
    let r = match cfg.kind {
        EncoderKind::WordOnlyLinear => g.matmul(x, p.encoder)?,
        EncoderKind::WordCnn => {
            let c = g.conv_window(x, p.encoder, cfg.kernel_width)?;
            g.relu(c)?
        }
    };
    Ok(r)
}

/// `unary[i][y] = r_i · W[:, y]`.
pub fn unary_potentials(g: &mut Graph<'_>, r: NodeId, emission: NodeId) -> Result<NodeId, EncoderError> {
    Ok(g.matmul(r, emission)?)
}

/// Encoder plus emission scores plus the shared transition tables.
pub fn potential_nodes(
    g: &mut Graph<'_>,
    p: &ParamNodes,
    cfg: &EncoderConfig,
    tokens: &[usize],
    order: Option<Order>,
) -> Result<PotentialNodes, EncoderError> {
    let r = encode(g, p, cfg, tokens)?;
    let unary = unary_potentials(g, r, p.emission)?;
    Ok(PotentialNodes {
        unary,
        transition: p.transition,
        transition2: matches!(order, Some(Order::SecondFactorized)).then_some(p.transition2),
    })
}

/// Potentials for one sentence without gradient bookkeeping.
pub fn compute_potentials(model: &ModelBundle, tokens: &[usize]) -> Result<Potentials, EncoderError> {
    let mut g = Graph::inference();
    let p = ParamNodes::attach(&mut g, &model.params);
    let order = model.mfvi().map(|c| c.order);
    let nodes = potential_nodes(&mut g, &p, &model.encoder, tokens, order)?;
    Ok(Potentials::new(
        g.value(nodes.unary).clone(),
        model.params.transition.clone(),
        order
            .filter(|o| *o == Order::SecondFactorized)
            .map(|_| model.params.transition2.clone()),
    ))
}

/// Feature rows `r` for one sentence, for inspection and tests.
pub fn compute_features(params: &Params, cfg: &EncoderConfig, tokens: &[usize]) -> Result<Tensor, EncoderError> {
    let mut g = Graph::inference();
    let p = ParamNodes::attach(&mut g, params);
    let r = encode(&mut g, &p, cfg, tokens)?;
    Ok(g.value(r).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use alloc::vec;
    use alloc::vec::Vec;

    fn cfg(kind: EncoderKind) -> EncoderConfig {
        EncoderConfig {
            kind,
            embedding_dim: 3,
            hidden_dim: 4,
            kernel_width: 3,
            label_count: 2,
            vocab_size: 6,
        }
    }

    fn params(c: &EncoderConfig, seed: u64) -> Params {
        let mut p = Params::init(c, &mut SplitMix64::new(seed));
        // relu would hide half the features at init; shift the kernel up.
        for v in p.encoder.data_mut() {
            *v += 0.2;
        }
        p
    }

    #[test]
    fn linear_is_position_independent() {
        let c = cfg(EncoderKind::WordOnlyLinear);
        let p = params(&c, 1);
        let r = compute_features(&p, &c, &[2, 2, 2, 2]).unwrap();
        for i in 1..4 {
            assert_eq!(r.row(i), r.row(0));
        }
    }

    #[test]
    fn cnn_receptive_field() {
        let c = cfg(EncoderKind::WordCnn);
        let p = params(&c, 2);
        let base = [1, 2, 3, 4, 5, 1, 2];
        let r0 = compute_features(&p, &c, &base).unwrap();
        let j = 3;
        let mut perturbed = base;
        perturbed[j] = 0;
        let r1 = compute_features(&p, &c, &perturbed).unwrap();
        for i in 0..base.len() {
            let changed = r0.row(i) != r1.row(i);
            if i + 1 < j || i > j + 1 {
                assert!(!changed, "position {i} changed");
            }
        }
        assert!(r0.row(j) != r1.row(j));
    }

    #[test]
    fn cnn_single_token_uses_zero_pads() {
        let c = cfg(EncoderKind::WordCnn);
        let p = params(&c, 3);
        let r = compute_features(&p, &c, &[4]).unwrap();
        // only the centre tap sees data
        let e = c.embedding_dim;
        for k in 0..c.hidden_dim {
            let mut s = 0.0;
            for q in 0..e {
                s += p.embedding.at(4, q) * p.encoder.at(e + q, k);
            }
            assert!((r.at(0, k) - s.max(0.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_range_token_names_position() {
        let c = cfg(EncoderKind::WordOnlyLinear);
        let p = params(&c, 1);
        assert_eq!(
            compute_features(&p, &c, &[0, 9]).unwrap_err(),
            EncoderError::TokenOutOfRange {
                position: 1,
                id: 9,
                vocab: 6
            }
        );
        assert_eq!(compute_features(&p, &c, &[]).unwrap_err(), EncoderError::Empty);
    }

    #[test]
    fn unary_zero_weights() {
        let mut g = Graph::new();
        let r = g.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, -4.0]]));
        let w = g.constant(Tensor::zeros(&[2, 3]));
        let u = unary_potentials(&mut g, r, w).unwrap();
        assert!(g.value(u).is_all_zero());
    }

    #[test]
    fn unary_one_dimensional() {
        let mut g = Graph::new();
        let r = g.constant(Tensor::from_rows(&[[2.0]]));
        let w = g.constant(Tensor::from_rows(&[[3.0, -1.0]]));
        let u = unary_potentials(&mut g, r, w).unwrap();
        assert_eq!(g.value(u).data(), &[6.0, -2.0]);
    }

    #[test]
    fn unary_matches_triple_loop() {
        let mut rng = SplitMix64::new(5);
        let (n, d, l) = (5, 7, 4);
        let rv: Vec<f64> = (0..n * d).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let wv: Vec<f64> = (0..d * l).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let mut g = Graph::new();
        let r = g.constant(Tensor::new(vec![n, d], rv.clone()).unwrap());
        let w = g.constant(Tensor::new(vec![d, l], wv.clone()).unwrap());
        let u = unary_potentials(&mut g, r, w).unwrap();
        for i in 0..n {
            for y in 0..l {
                let mut s = 0.0;
                for k in 0..d {
                    s += rv[i * d + k] * wv[k * l + y];
                }
                assert!((g.value(u).at(i, y) - s).abs() < 1e-12);
            }
        }
    }
}
