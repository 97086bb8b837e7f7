//! Synthetic corpora sampled from a hidden Markov model.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::corpus::TaggedSentence;
use crate::labels::bioes_inventory;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("{0} must be at least 1")]
    Zero(&'static str),
    #[error("sentence length range {min}..={max} is empty")]
    LengthRange { min: usize, max: usize },
    #[error("{what} has shape {actual:?}, expected {expected:?}")]
    Shape {
        what: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("row {row} of {what} is not a distribution (sum {sum})")]
    NotStochastic { what: &'static str, row: usize, sum: f64 },
    #[error("{0} must be positive and finite")]
    Concentration(&'static str),
}

/// Recipe for drawing an HMM: Dirichlet rows for the transition and emission
/// matrices, optionally with extra mass on the transition diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub label_count: usize,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Symmetric Dirichlet concentration for transition and emission rows.
    pub alpha: f64,
    /// Added to the concentration of `T[y][y]`.
    pub diagonal: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            label_count: 9,
            vocab_size: 2000,
            min_len: 8,
            max_len: 40,
            alpha: 0.5,
            diagonal: 0.0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    /// Draws the HMM. The same config always gives the same matrices.
    pub fn build(&self) -> Result<SynthSpec, SynthError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(SynthError::Concentration("alpha"));
        }
        if !(self.diagonal >= 0.0 && self.diagonal.is_finite()) {
            return Err(SynthError::Concentration("diagonal"));
        }
        let (l, v) = (self.label_count, self.vocab_size);
        if l == 0 {
            return Err(SynthError::Zero("label_count"));
        }
        if v == 0 {
            return Err(SynthError::Zero("vocab_size"));
        }
        let mut rng = SplitMix64::new(self.seed);
        let mut t = Vec::with_capacity(l * l);
        for y in 0..l {
            let mut a = alloc::vec![self.alpha; l];
            a[y] += self.diagonal;
            t.extend(rng.dirichlet(&a));
        }
        let mut e = Vec::with_capacity(l * v);
        let a = alloc::vec![self.alpha; v];
        for _ in 0..l {
            e.extend(rng.dirichlet(&a));
        }
        SynthSpec::new(
            Tensor::new(alloc::vec![l, l], t).expect("shape"),
            Tensor::new(alloc::vec![l, v], e).expect("shape"),
            alloc::vec![1.0 / l as f64; l],
            self.min_len,
            self.max_len,
            self.seed,
        )
    }
}

/// A fully specified HMM plus sentence-length range and sampling seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// `T[y][y']`, probability of `y'` following `y`.
    pub transition: Tensor,
    /// `E[y][w]`, probability of word `w` under label `y`.
    pub emission: Tensor,
    pub initial: Vec<f64>,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

fn check_rows(what: &'static str, rows: &[&[f64]]) -> Result<(), SynthError> {
    for (row, r) in rows.iter().enumerate() {
        let sum: f64 = r.iter().sum();
        if r.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(SynthError::NotStochastic { what, row, sum });
        }
    }
    Ok(())
}

impl SynthSpec {
    pub fn new(
        transition: Tensor,
        emission: Tensor,
        initial: Vec<f64>,
        min_len: usize,
        max_len: usize,
        seed: u64,
    ) -> Result<Self, SynthError> {
        let l = initial.len();
        if l == 0 {
            return Err(SynthError::Zero("label_count"));
        }
        if min_len == 0 {
            return Err(SynthError::Zero("min_len"));
        }
        if min_len > max_len {
            return Err(SynthError::LengthRange {
                min: min_len,
                max: max_len,
            });
        }
        if transition.shape() != [l, l] {
            return Err(SynthError::Shape {
                what: "transition",
                expected: alloc::vec![l, l],
                actual: transition.shape().to_vec(),
            });
        }
        if emission.rank() != 2 || emission.rows() != l || emission.cols() == 0 {
            return Err(SynthError::Shape {
                what: "emission",
                expected: alloc::vec![l, emission.cols().max(1)],
                actual: emission.shape().to_vec(),
            });
        }
        check_rows("initial", &[&initial])?;
        let rows: Vec<&[f64]> = (0..l).map(|y| transition.row(y)).collect();
        check_rows("transition", &rows)?;
        let rows: Vec<&[f64]> = (0..l).map(|y| emission.row(y)).collect();
        check_rows("emission", &rows)?;
        Ok(Self {
            transition,
            emission,
            initial,
            min_len,
            max_len,
            seed,
        })
    }

    /// Label `y` always emits word `y`; transitions uniform.
    pub fn separable(label_count: usize, min_len: usize, max_len: usize, seed: u64) -> Result<Self, SynthError> {
        let l = label_count.max(1);
        Self::new(
            Tensor::filled(&[l, l], 1.0 / l as f64),
            Tensor::identity(l),
            alloc::vec![1.0 / l as f64; l],
            min_len,
            max_len,
            seed,
        )
    }

    pub fn label_count(&self) -> usize {
        self.initial.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.emission.cols()
    }
}

/// Label names for `count` labels: a BIOES inventory when `count = 1 + 4k`,
/// otherwise `L0, L1, ...`.
pub fn label_names(count: usize) -> Vec<String> {
    const TYPES: [&str; 4] = ["PER", "LOC", "ORG", "MISC"];
    if count > 1 && (count - 1) % 4 == 0 {
        let k = (count - 1) / 4;
        let extra: Vec<String> = (TYPES.len()..k).map(|j| format!("T{j}")).collect();
        let types: Vec<&str> = TYPES.iter().copied().chain(extra.iter().map(String::as_str)).take(k).collect();
        bioes_inventory(&types)
    } else {
        (0..count).map(|y| format!("L{y}")).collect()
    }
}

pub fn word_name(id: usize) -> String {
    format!("w{id}")
}

struct Cumulative {
    width: usize,
    data: Vec<f64>,
}

impl Cumulative {
    fn new(rows: usize, width: usize, row: impl Fn(usize) -> Vec<f64>) -> Self {
        let mut data = Vec::with_capacity(rows * width);
        for y in 0..rows {
            let mut acc = 0.0;
            for p in row(y) {
                acc += p;
                data.push(acc);
            }
        }
        Self { width, data }
    }

    fn sample(&self, row: usize, rng: &mut SplitMix64) -> usize {
        let c = &self.data[row * self.width..(row + 1) * self.width];
        let u = rng.next_f64() * c[self.width - 1];
        c.partition_point(|&x| x <= u).min(self.width - 1)
    }
}

/// `count` sentences from the HMM, with label ids in `gold_labels` and word
/// ids in `token_ids` (both indexing the spec's own inventories).
pub fn generate_synthetic(spec: &SynthSpec, count: usize) -> Vec<TaggedSentence> {
    let l = spec.label_count();
    let v = spec.vocab_size();
    let names = label_names(l);
    let start = Cumulative::new(1, l, |_| spec.initial.clone());
    let trans = Cumulative::new(l, l, |y| spec.transition.row(y).to_vec());
    let emit = Cumulative::new(l, v, |y| spec.emission.row(y).to_vec());
    // Separate stream from the one `SynthConfig::build` used for the matrices.
    let mut rng = SplitMix64::new(spec.seed ^ 0x5EED_C0DE_D00D_F00D);
    let span = spec.max_len - spec.min_len + 1;
    (0..count)
        .map(|_| {
            let n = spec.min_len + rng.below(span);
            let mut labels = Vec::with_capacity(n);
            let mut words = Vec::with_capacity(n);
            let mut y = start.sample(0, &mut rng);
            for i in 0..n {
                if i > 0 {
                    y = trans.sample(y, &mut rng);
                }
                labels.push(y);
                words.push(emit.sample(y, &mut rng));
            }
            TaggedSentence {
                tokens: words.iter().map(|&w| word_name(w)).collect(),
                labels: labels.iter().map(|&y| names[y].clone()).collect(),
                token_ids: words,
                gold_labels: labels,
            }
        })
        .collect()
}
