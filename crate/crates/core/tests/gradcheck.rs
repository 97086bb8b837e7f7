//! Reverse-mode gradients against central finite differences.

mod oracles;

use oracles::{central_difference, random_tensor, relative_error};
use parcrf_core::autodiff::{Graph, NodeId};
use parcrf_core::encoder::{potential_nodes, ParamNodes};
use parcrf_core::rng::SplitMix64;
use parcrf_core::train::loss_for;
use parcrf_core::{DecoderKind, EncoderConfig, EncoderKind, ModelBundle, ParamName, Tensor};

const H: f64 = 1e-6;

/// Reduces a 2-D node to a scalar with fixed random row and column weights.
fn project(g: &mut Graph<'_>, o: NodeId, seed: u64) -> NodeId {
    let v = g.value(o);
    if v.rank() == 1 {
        return g.sum(o).unwrap();
    }
    let (r, c) = (v.rows(), v.cols());
    let mut rng = SplitMix64::new(seed);
    let s = g.constant(random_tensor(&mut rng, 1, r, 1.0));
    let w = g.constant(random_tensor(&mut rng, c, 1, 1.0));
    let left = g.matmul(s, o).unwrap();
    g.matmul(left, w).unwrap()
}

fn check_op(name: &str, inputs: Vec<Tensor>, build: impl Fn(&mut Graph<'_>, &[NodeId]) -> NodeId, tol: f64) {
    let eval = |xs: &[Tensor], track: bool| {
        let mut g = if track { Graph::new() } else { Graph::inference() };
        let ids: Vec<NodeId> = xs.iter().map(|t| g.variable(t.clone())).collect();
        let out = build(&mut g, &ids);
        let root = project(&mut g, out, 99);
        (g, ids, root)
    };
    let (mut g, ids, root) = eval(&inputs, true);
    g.backward(root).unwrap();
    let grads: Vec<Tensor> = ids.iter().map(|&id| g.grad_or_zeros(id)).collect();
    let mut xs = inputs.clone();
    for (a, grad) in grads.iter().enumerate() {
        for k in 0..xs[a].len() {
            let mut data = xs[a].data().to_vec();
            let shape = xs[a].shape().to_vec();
            let num = central_difference(&mut data, k, H, |d| {
                xs[a] = Tensor::new(shape.clone(), d.to_vec()).unwrap();
                let (g, _, root) = eval(&xs, false);
                g.value(root).item()
            });
            xs[a] = inputs[a].clone();
            let ana = grad.data()[k];
            let err = relative_error(ana, num);
            assert!(
                err < tol,
                "{name}: input {a} coordinate {k}: analytic {ana} numeric {num} (rel {err})"
            );
        }
    }
}

fn rt(seed: u64, r: usize, c: usize) -> Tensor {
    random_tensor(&mut SplitMix64::new(seed), r, c, 1.5)
}

#[test]
fn elementwise_and_linear_ops() {
    check_op("matmul", vec![rt(1, 3, 4), rt(2, 4, 2)], |g, x| g.matmul(x[0], x[1]).unwrap(), 1e-5);
    check_op("add", vec![rt(3, 3, 2), rt(4, 3, 2)], |g, x| g.add(x[0], x[1]).unwrap(), 1e-5);
    check_op("sub", vec![rt(5, 3, 2), rt(6, 3, 2)], |g, x| g.sub(x[0], x[1]).unwrap(), 1e-5);
    check_op("mul_scalar", vec![rt(7, 2, 3)], |g, x| g.mul_scalar(x[0], -2.5).unwrap(), 1e-5);
    check_op("transpose", vec![rt(8, 2, 3)], |g, x| g.transpose(x[0]).unwrap(), 1e-5);
    check_op("sum", vec![rt(9, 2, 3)], |g, x| g.sum(x[0]).unwrap(), 1e-5);
}

#[test]
fn normalizing_ops() {
    check_op("row_softmax", vec![rt(10, 3, 4)], |g, x| g.row_softmax(x[0]).unwrap(), 1e-5);
    check_op("row_log_softmax", vec![rt(11, 3, 4)], |g, x| g.row_log_softmax(x[0]).unwrap(), 1e-5);
    check_op(
        "row_logsumexp",
        vec![rt(12, 3, 4), rt(13, 4, 3)],
        |g, x| {
            let m = g.matmul(x[0], x[1]).unwrap();
            g.row_logsumexp(m).unwrap()
        },
        1e-5,
    );
    check_op(
        "log_matmul",
        vec![rt(14, 2, 3), rt(15, 3, 4)],
        |g, x| g.log_matmul(x[0], x[1]).unwrap(),
        1e-5,
    );
    let mut pos = rt(16, 2, 3);
    pos.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.5);
    check_op("log", vec![pos], |g, x| g.log(x[0]).unwrap(), 1e-5);
}

#[test]
fn indexing_ops() {
    check_op(
        "gather_rows",
        vec![rt(17, 5, 3)],
        |g, x| g.gather_rows(x[0], &[4, 0, 4, 2]).unwrap(),
        1e-5,
    );
    check_op(
        "concat",
        vec![rt(18, 2, 3), rt(19, 1, 3)],
        |g, x| g.concat(&[x[0], x[1], x[0]]).unwrap(),
        1e-5,
    );
    for off in [-2isize, -1, 1, 2] {
        check_op("shift_rows", vec![rt(20, 4, 3)], move |g, x| g.shift_rows(x[0], off).unwrap(), 1e-5);
    }
    check_op(
        "pick",
        vec![rt(21, 3, 3), rt(22, 3, 2)],
        |g, x| {
            let m = g.matmul(x[0], x[1]).unwrap();
            let p = g.pick(m, &[(0, 1), (2, 0), (0, 1)]).unwrap();
            let l = g.row_softmax(m).unwrap();
            let q = g.pick(l, &[(1, 1)]).unwrap();
            let a = g.sum(p).unwrap();
            let b = g.sum(q).unwrap();
            let b = g.mul_scalar(b, 3.0).unwrap();
            g.add(a, b).unwrap()
        },
        1e-5,
    );
    check_op("slice_rows", vec![rt(23, 5, 2)], |g, x| g.slice_rows(x[0], 1, 4).unwrap(), 1e-5);
}

#[test]
fn nonlinear_feature_ops() {
    // keep inputs away from the relu kink
    let mut x = rt(24, 3, 4);
    x.data_mut().iter_mut().for_each(|v| *v += if *v >= 0.0 { 0.1 } else { -0.1 });
    check_op("relu", vec![x], |g, x| g.relu(x[0]).unwrap(), 1e-5);
    check_op(
        "conv_window",
        vec![rt(25, 4, 2), rt(26, 6, 3)],
        |g, x| g.conv_window(x[0], x[1], 3).unwrap(),
        1e-5,
    );
    check_op(
        "conv_window_single_row",
        vec![rt(27, 1, 2), rt(28, 10, 3)],
        |g, x| g.conv_window(x[0], x[1], 5).unwrap(),
        1e-5,
    );
}

fn model(kind: DecoderKind, enc: EncoderKind, seed: u64) -> ModelBundle {
    let words = parcrf_core::Vocab::from_items((0..7).map(|i| if i == 0 { "<unk>".into() } else { format!("w{i}") }).collect()).unwrap();
    let labels = parcrf_core::LabelVocab::from_labels((0..4).map(|i| format!("L{i}")).collect()).unwrap();
    let mut cfg = EncoderConfig::new(enc, 7, 4);
    cfg.embedding_dim = 3;
    cfg.hidden_dim = 4;
    let mut m = ModelBundle::new(cfg, kind, 3, words, labels, seed).unwrap();
    let mut rng = SplitMix64::new(seed + 100);
    for name in [ParamName::Transition, ParamName::Transition2] {
        m.params
            .get_mut(name)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.uniform(-1.0, 1.0));
    }
    m
}

fn loss_value(m: &ModelBundle, tokens: &[usize], gold: &[usize]) -> f64 {
    let mut g = Graph::inference();
    let p = ParamNodes::attach(&mut g, &m.params);
    let pot = potential_nodes(&mut g, &p, &m.encoder, tokens, m.mfvi().map(|c| c.order)).unwrap();
    let l = loss_for(m.decoder, &mut g, &pot, gold, m.mfvi()).unwrap();
    g.value(l).item()
}

#[test]
fn decoder_losses_match_finite_differences_on_every_parameter() {
    let tokens = [1, 5, 2, 5, 6];
    let gold = [0, 3, 1, 1, 2];
    for kind in DecoderKind::ALL {
        for enc in [EncoderKind::WordOnlyLinear, EncoderKind::WordCnn] {
            let mut m = model(kind, enc, 3);
            let mut g = Graph::new();
            let p = ParamNodes::attach(&mut g, &m.params);
            let pot = potential_nodes(&mut g, &p, &m.encoder, &tokens, m.mfvi().map(|c| c.order)).unwrap();
            let l = loss_for(kind, &mut g, &pot, &gold, m.mfvi()).unwrap();
            g.backward(l).unwrap();
            let grads = p.collect_grads(&mut g, &m.params);
            drop(g);
            for name in ParamName::ALL {
                let ana = grads.get(name).clone();
                for k in 0..ana.len() {
                    let mut data = m.params.get(name).data().to_vec();
                    let num = central_difference(&mut data, k, H, |d| {
                        m.params.get_mut(name).data_mut().copy_from_slice(d);
                        loss_value(&m, &tokens, &gold)
                    });
                    m.params.get_mut(name).data_mut().copy_from_slice(&data);
                    let err = relative_error(ana.data()[k], num);
                    assert!(err < 1e-4, "{kind:?}/{enc:?} {name:?}[{k}]: {} vs {num}", ana.data()[k]);
                    if !kind.uses(name) {
                        assert_eq!(ana.data()[k], 0.0);
                    }
                }
            }
        }
    }
}
