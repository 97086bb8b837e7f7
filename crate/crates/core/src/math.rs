//! Scalar kernels shared by the graph ops and the graph-free inference paths.
//!
//! Both paths call these so that their results agree bit for bit.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn max_of(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn logsumexp(row: &[f64]) -> f64 {
    let m = max_of(row);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = row.iter().map(|&v| exp(v - m)).sum();
    m + ln(s)
}

/// In-place max-shifted softmax over one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let m = max_of(row);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = exp(*v - m);
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

pub fn log_softmax_in_place(row: &mut [f64]) {
    let lse = logsumexp(row);
    for v in row.iter_mut() {
        *v -= lse;
    }
}
