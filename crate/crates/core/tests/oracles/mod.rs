//! Independent reference implementations used by the integration tests.
//! Everything here is written with plain loops over nested vectors and
//! shares no code with the library beyond the data types.

#![allow(dead_code)]

use parcrf_core::rng::SplitMix64;
use parcrf_core::{Potentials, Tensor};

pub fn random_tensor(rng: &mut SplitMix64, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.uniform(-scale, scale)).collect()).unwrap()
}

pub fn random_potentials(rng: &mut SplitMix64, n: usize, l: usize, scale: f64, second: bool) -> Potentials {
    let unary = random_tensor(rng, n, l, scale);
    let u = random_tensor(rng, l, l, scale);
    let u2 = second.then(|| random_tensor(rng, l, l, scale));
    Potentials::new(unary, u, u2)
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

/// Every label sequence of length `n` over `l` labels, in lexicographic order.
pub fn all_paths(n: usize, l: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut path = vec![0usize; n];
    loop {
        out.push(path.clone());
        let mut i = n;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            path[i] += 1;
            if path[i] < l {
                break;
            }
            path[i] = 0;
        }
    }
}

pub fn score(unary: &[Vec<f64>], u: &[Vec<f64>], path: &[usize]) -> f64 {
    let mut s = 0.0;
    for i in 0..path.len() {
        s += unary[i][path[i]];
        if i > 0 {
            s += u[path[i - 1]][path[i]];
        }
    }
    s
}

pub struct Enumeration {
    pub log_z: f64,
    pub best_score: f64,
    pub best_paths: Vec<Vec<usize>>,
    pub marginals: Vec<Vec<f64>>,
}

pub fn enumerate(pot: &Potentials) -> Enumeration {
    let unary = rows(&pot.unary);
    let u = rows(&pot.transition);
    let (n, l) = (unary.len(), unary[0].len());
    let paths = all_paths(n, l);
    let scores: Vec<f64> = paths.iter().map(|p| score(&unary, &u, p)).collect();
    let best_score = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let best_paths = paths
        .iter()
        .zip(&scores)
        .filter(|(_, &s)| s == best_score)
        .map(|(p, _)| p.clone())
        .collect();
    let total: f64 = scores.iter().map(|s| (s - best_score).exp()).sum();
    let log_z = best_score + total.ln();
    let mut marginals = vec![vec![0.0; l]; n];
    for (p, s) in paths.iter().zip(&scores) {
        let w = (s - log_z).exp();
        for (i, &y) in p.iter().enumerate() {
            marginals[i][y] += w;
        }
    }
    Enumeration {
        log_z,
        best_score,
        best_paths,
        marginals,
    }
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub fn scalar_softmax_rows(unary: &[Vec<f64>]) -> Vec<Vec<f64>> {
    unary.iter().map(|r| softmax(r)).collect()
}

/// One mean-field step written out term by term.
pub fn scalar_mfvi_step(q: &[Vec<f64>], unary: &[Vec<f64>], u: &[Vec<f64>], u2: Option<&[Vec<f64>]>) -> Vec<Vec<f64>> {
    let n = q.len();
    let l = unary[0].len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut logits = vec![0.0; l];
        for y in 0..l {
            let mut s = unary[i][y];
            if i >= 1 {
                for yp in 0..l {
                    s += q[i - 1][yp] * u[yp][y];
                }
            }
            if i + 1 < n {
                for yp in 0..l {
                    s += q[i + 1][yp] * u[y][yp];
                }
            }
            if let Some(u2) = u2 {
                if i >= 2 {
                    for yp in 0..l {
                        s += q[i - 2][yp] * u2[yp][y];
                    }
                }
                if i + 2 < n {
                    for yp in 0..l {
                        s += q[i + 2][yp] * u2[y][yp];
                    }
                }
            }
            logits[y] = s;
        }
        out.push(softmax(&logits));
    }
    out
}

/// `Q^M` from the scalar oracle.
pub fn scalar_mfvi(pot: &Potentials, iterations: usize) -> Vec<Vec<f64>> {
    let unary = rows(&pot.unary);
    let u = rows(&pot.transition);
    let u2 = pot.transition2.as_ref().map(rows);
    let mut q = scalar_softmax_rows(&unary);
    for _ in 0..iterations {
        q = scalar_mfvi_step(&q, &unary, &u, u2.as_deref());
    }
    q
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &Tensor) -> f64 {
    let mut m: f64 = 0.0;
    for (i, r) in a.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            m = m.max((v - b.at(i, j)).abs());
        }
    }
    m
}

/// Central difference of `f` along one coordinate of `x`.
pub fn central_difference(x: &mut [f64], k: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[k];
    x[k] = orig + h;
    let plus = f(x);
    x[k] = orig - h;
    let minus = f(x);
    x[k] = orig;
    (plus - minus) / (2.0 * h)
}

/// Relative error with an absolute floor, so that two tiny numbers agree.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff < 1e-9 {
        return 0.0;
    }
    diff / a.abs().max(b.abs())
}
