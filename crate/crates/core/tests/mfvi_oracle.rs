//! Mean-field updates against a scalar-loop reference, plus the structural
//! properties of the Jacobi iteration.

mod oracles;

use oracles::{max_abs_diff, random_potentials, rows, scalar_mfvi, scalar_mfvi_step};
use parcrf_core::exact::viterbi;
use parcrf_core::exec::{chunk_len_for, Executor};
use parcrf_core::math::argmax;
use parcrf_core::mfvi::{ain_decode, mfvi_init, mfvi_step, mfvi_step_in_order, run};
use parcrf_core::rng::SplitMix64;
use parcrf_core::{MfviConfig, Order, Potentials, Sequential, Tensor};

/// Splits work into a fixed number of chunks and runs them last-first.
struct Reversed(usize);

impl Executor for Reversed {
    fn workers(&self) -> usize {
        self.0
    }

    fn run_chunks<T: Send>(&self, items: &mut [T], chunk_len: usize, f: &(dyn Fn(usize, &mut [T]) + Sync)) {
        let chunk_len = chunk_len.max(1);
        let mut chunks: Vec<(usize, &mut [T])> = items.chunks_mut(chunk_len).enumerate().map(|(c, s)| (c * chunk_len, s)).collect();
        while let Some((off, c)) = chunks.pop() {
            f(off, c);
        }
    }
}

fn order_of(second: bool) -> Order {
    if second {
        Order::SecondFactorized
    } else {
        Order::First
    }
}

#[test]
fn step_matches_scalar_loops() {
    let mut rng = SplitMix64::new(1);
    for trial in 0..200 {
        let second = trial % 2 == 1;
        let n = 1 + rng.below(8);
        let l = 1 + rng.below(5);
        let pot = random_potentials(&mut rng, n, l, 2.0, second);
        let q0 = mfvi_init(&pot);
        let unary = rows(&pot.unary);
        let oracle_q0 = oracles::scalar_softmax_rows(&unary);
        assert!(max_abs_diff(&oracle_q0, &q0) < 1e-12);
        let next = mfvi_step(&q0, &pot, order_of(second), &Sequential);
        let u2 = pot.transition2.as_ref().map(rows);
        let oracle = scalar_mfvi_step(&oracle_q0, &unary, &rows(&pot.transition), u2.as_deref());
        assert!(max_abs_diff(&oracle, &next) < 1e-12, "trial {trial}");
        let cfg = MfviConfig::new(3, order_of(second));
        let table = run(&pot, cfg, &Sequential);
        assert!(max_abs_diff(&scalar_mfvi(&pot, 3), table.last()) < 1e-12);
    }
}

#[test]
fn step_is_independent_of_workers_and_position_order() {
    let mut rng = SplitMix64::new(2);
    for trial in 0..50 {
        let second = trial % 2 == 0;
        let n = 1 + rng.below(40);
        let pot = random_potentials(&mut rng, n, 5, 2.0, second);
        let q = mfvi_step(&mfvi_init(&pot), &pot, order_of(second), &Sequential);
        let base = mfvi_step(&q, &pot, order_of(second), &Sequential);
        for w in [2, 3, 8] {
            let other = mfvi_step(&q, &pot, order_of(second), &Reversed(w));
            assert_eq!(bits(&base), bits(&other));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        assert_eq!(bits(&base), bits(&mfvi_step_in_order(&q, &pot, order_of(second), &perm)));
    }
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn every_iterate_is_a_strictly_positive_distribution() {
    let mut rng = SplitMix64::new(3);
    for _ in 0..50 {
        let n = 1 + rng.below(12);
        let pot = random_potentials(&mut rng, n, 4, 5.0, true);
        let table = run(&pot, MfviConfig::new(6, Order::SecondFactorized), &Sequential);
        for q in &table.iterations {
            for i in 0..q.rows() {
                assert!((q.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-10);
                assert!(q.row(i).iter().all(|&p| p > 0.0));
            }
        }
    }
}

#[test]
fn shifting_a_unary_row_changes_nothing() {
    let mut rng = SplitMix64::new(4);
    for _ in 0..50 {
        let n = 2 + rng.below(8);
        let pot = random_potentials(&mut rng, n, 4, 2.0, true);
        let mut shifted = pot.clone();
        let i = rng.below(n);
        let c = rng.uniform(-5.0, 5.0);
        shifted.unary.row_mut(i).iter_mut().for_each(|v| *v += c);
        let cfg = MfviConfig::new(3, Order::SecondFactorized);
        let a = run(&pot, cfg, &Sequential);
        let b = run(&shifted, cfg, &Sequential);
        for (qa, qb) in a.iterations.iter().zip(&b.iterations) {
            assert!(qa.max_abs_diff(qb) < 1e-12);
        }
    }
}

#[test]
fn degenerate_tables_reduce_to_simpler_decoders() {
    let mut rng = SplitMix64::new(5);
    for _ in 0..100 {
        let n = 1 + rng.below(10);
        let l = 1 + rng.below(5);
        let mut pot = random_potentials(&mut rng, n, l, 2.0, true);
        // Ũ = 0: second order is first order, bit for bit
        pot.transition2 = Some(Tensor::zeros(&[l, l]));
        let a = run(&pot, MfviConfig::new(3, Order::First), &Sequential);
        let b = run(&pot, MfviConfig::new(3, Order::SecondFactorized), &Sequential);
        for (qa, qb) in a.iterations.iter().zip(&b.iterations) {
            assert_eq!(bits(qa), bits(qb));
        }
        // U = Ũ = 0: argmax of the unary scores
        pot.transition = Tensor::zeros(&[l, l]);
        let maxent: Vec<usize> = (0..n).map(|i| argmax(pot.unary.row(i))).collect();
        assert_eq!(ain_decode(&pot, MfviConfig::new(3, Order::SecondFactorized), &Sequential), maxent);
    }
}

#[test]
fn single_token_ignores_transitions() {
    let mut rng = SplitMix64::new(6);
    for _ in 0..20 {
        let pot = random_potentials(&mut rng, 1, 4, 3.0, true);
        let q0 = mfvi_init(&pot);
        let q1 = mfvi_step(&q0, &pot, Order::SecondFactorized, &Sequential);
        assert!(q0.max_abs_diff(&q1) < 1e-15);
        let best = argmax(pot.unary.row(0));
        assert_eq!(viterbi(&pot).path, vec![best]);
        assert_eq!(ain_decode(&pot, MfviConfig::default(), &Sequential), vec![best]);
    }
}

/// Regression statistic for approximation quality, not a theorem.
#[test]
fn mean_field_decode_mostly_agrees_with_viterbi() {
    let mut rng = SplitMix64::new(7);
    let (mut agree, mut total) = (0usize, 0usize);
    for _ in 0..200 {
        let n = 1 + rng.below(6);
        let l = 1 + rng.below(4);
        let pot: Potentials = random_potentials(&mut rng, n, l, 2.0, false);
        let exact = viterbi(&pot).path;
        let approx = ain_decode(&pot, MfviConfig::default(), &Sequential);
        agree += exact.iter().zip(&approx).filter(|(a, b)| a == b).count();
        total += n;
    }
    let rate = agree as f64 / total as f64;
    assert!(rate >= 0.90, "agreement {rate}");
}

#[test]
fn chunking_covers_all_positions() {
    for n in [1, 5, 17, 100] {
        for w in [1, 2, 3, 8] {
            let c = chunk_len_for(n * 4, w, 4);
            assert_eq!(c % 4, 0);
            assert!(c * w >= n * 4);
        }
    }
}
