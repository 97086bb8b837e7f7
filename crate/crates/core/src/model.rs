//! Model configuration, parameters and the serializable bundle.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::corpus::{LabelVocab, Vocab};
use crate::mfvi::{MfviConfig, Order};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("{0} must be at least 1")]
    Zero(&'static str),
    #[error("kernel width {0} must be odd")]
    EvenKernel(usize),
    #[error("unknown {what} {value:?}")]
    Unknown { what: &'static str, value: String },
    #[error("parameter {name} has shape {actual:?}, expected {expected:?}")]
    ParamShape {
        name: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("parameter {0} holds a non-finite value")]
    NonFinite(&'static str),
    #[error("{what} vocabulary has {actual} entries but the model expects {expected}")]
    VocabSize {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    /// One linear layer over the word embedding; no context.
    WordOnlyLinear,
    /// One convolution over a window of word embeddings, then relu.
    WordCnn,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::WordOnlyLinear => "linear",
            EncoderKind::WordCnn => "cnn",
        }
    }
}

impl FromStr for EncoderKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" | "word_only_linear" => Ok(EncoderKind::WordOnlyLinear),
            "cnn" | "word_cnn" => Ok(EncoderKind::WordCnn),
            _ => Err(ConfigError::Unknown {
                what: "encoder",
                value: s.into(),
            }),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub kernel_width: usize,
    pub label_count: usize,
    pub vocab_size: usize,
}

impl EncoderConfig {
    pub fn new(kind: EncoderKind, vocab_size: usize, label_count: usize) -> Self {
        Self {
            kind,
            embedding_dim: 64,
            hidden_dim: 128,
            kernel_width: 3,
            label_count,
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("embedding_dim", self.embedding_dim),
            ("hidden_dim", self.hidden_dim),
            ("kernel_width", self.kernel_width),
            ("label_count", self.label_count),
            ("vocab_size", self.vocab_size),
        ] {
            if v == 0 {
                return Err(ConfigError::Zero(name));
            }
        }
        if self.kind == EncoderKind::WordCnn && self.kernel_width % 2 == 0 {
            return Err(ConfigError::EvenKernel(self.kernel_width));
        }
        Ok(())
    }

    pub fn encoder_rows(&self) -> usize {
        match self.kind {
            EncoderKind::WordOnlyLinear => self.embedding_dim,
            EncoderKind::WordCnn => self.kernel_width * self.embedding_dim,
        }
    }

    pub fn param_shape(&self, name: ParamName) -> [usize; 2] {
        match name {
            ParamName::Embedding => [self.vocab_size, self.embedding_dim],
            ParamName::Encoder => [self.encoder_rows(), self.hidden_dim],
            ParamName::Emission => [self.hidden_dim, self.label_count],
            ParamName::Transition | ParamName::Transition2 => [self.label_count, self.label_count],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DecoderKind {
    MaxEnt,
    Crf,
    /// Mean-field inference network over the first-order chain.
    Ain1,
    /// Mean-field inference network over the factorized second-order chain.
    Ain2,
}

impl DecoderKind {
    pub const ALL: [DecoderKind; 4] = [DecoderKind::MaxEnt, DecoderKind::Crf, DecoderKind::Ain1, DecoderKind::Ain2];

    pub fn as_str(self) -> &'static str {
        match self {
            DecoderKind::MaxEnt => "maxent",
            DecoderKind::Crf => "crf",
            DecoderKind::Ain1 => "ain1",
            DecoderKind::Ain2 => "ain2",
        }
    }

    pub fn mfvi(self, iterations: usize) -> Option<MfviConfig> {
        match self {
            DecoderKind::Ain1 => Some(MfviConfig::new(iterations, Order::First)),
            DecoderKind::Ain2 => Some(MfviConfig::new(iterations, Order::SecondFactorized)),
            _ => None,
        }
    }

    /// Parameters this decoder's loss depends on.
    pub fn uses(self, name: ParamName) -> bool {
        match name {
            ParamName::Transition => self != DecoderKind::MaxEnt,
            ParamName::Transition2 => self == DecoderKind::Ain2,
            _ => true,
        }
    }
}

impl FromStr for DecoderKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "maxent" => Ok(DecoderKind::MaxEnt),
            "crf" => Ok(DecoderKind::Crf),
            "ain1" | "ain-1o" => Ok(DecoderKind::Ain1),
            "ain2" | "ain-f2o" => Ok(DecoderKind::Ain2),
            _ => Err(ConfigError::Unknown {
                what: "decoder",
                value: s.into(),
            }),
        }
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamName {
    Embedding,
    Encoder,
    Emission,
    Transition,
    Transition2,
}

impl ParamName {
    pub const ALL: [ParamName; 5] = [
        ParamName::Embedding,
        ParamName::Encoder,
        ParamName::Emission,
        ParamName::Transition,
        ParamName::Transition2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamName::Embedding => "embedding",
            ParamName::Encoder => "encoder",
            ParamName::Emission => "emission",
            ParamName::Transition => "transition",
            ParamName::Transition2 => "transition2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|n| n.as_str() == s)
    }
}

/// Trainable tensors. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub embedding: Tensor,
    pub encoder: Tensor,
    pub emission: Tensor,
    pub transition: Tensor,
    pub transition2: Tensor,
}

fn glorot(rows: usize, cols: usize, rng: &mut SplitMix64) -> Tensor {
    let bound = crate::math::sqrt(6.0 / (rows + cols) as f64);
    let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::new(alloc::vec![rows, cols], data).expect("shape matches data")
}

impl Params {
    /// Glorot-uniform weights, zero transition tables.
    pub fn init(cfg: &EncoderConfig, rng: &mut SplitMix64) -> Self {
        let [v, e] = cfg.param_shape(ParamName::Embedding);
        let [er, d] = cfg.param_shape(ParamName::Encoder);
        let [_, l] = cfg.param_shape(ParamName::Emission);
        Self {
            embedding: glorot(v, e, rng),
            encoder: glorot(er, d, rng),
            emission: glorot(d, l, rng),
            transition: Tensor::zeros(&[l, l]),
            transition2: Tensor::zeros(&[l, l]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embedding: Tensor::zeros(self.embedding.shape()),
            encoder: Tensor::zeros(self.encoder.shape()),
            emission: Tensor::zeros(self.emission.shape()),
            transition: Tensor::zeros(self.transition.shape()),
            transition2: Tensor::zeros(self.transition2.shape()),
        }
    }

    pub fn get(&self, name: ParamName) -> &Tensor {
        match name {
            ParamName::Embedding => &self.embedding,
            ParamName::Encoder => &self.encoder,
            ParamName::Emission => &self.emission,
            ParamName::Transition => &self.transition,
            ParamName::Transition2 => &self.transition2,
        }
    }

    pub fn get_mut(&mut self, name: ParamName) -> &mut Tensor {
        match name {
            ParamName::Embedding => &mut self.embedding,
            ParamName::Encoder => &mut self.encoder,
            ParamName::Emission => &mut self.emission,
            ParamName::Transition => &mut self.transition,
            ParamName::Transition2 => &mut self.transition2,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamName, &Tensor)> {
        ParamName::ALL.into_iter().map(move |n| (n, self.get(n)))
    }

    pub fn add_assign(&mut self, other: &Params) {
        for n in ParamName::ALL {
            self.get_mut(n).add_assign(other.get(n));
        }
    }

    pub fn check(&self, cfg: &EncoderConfig) -> Result<(), ConfigError> {
        for (name, t) in self.iter() {
            let expected = cfg.param_shape(name);
            if t.shape() != expected {
                return Err(ConfigError::ParamShape {
                    name: name.as_str(),
                    expected: expected.to_vec(),
                    actual: t.shape().to_vec(),
                });
            }
            if !t.is_finite() {
                return Err(ConfigError::NonFinite(name.as_str()));
            }
        }
        Ok(())
    }
}

/// Everything needed to run a trained tagger.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub encoder: EncoderConfig,
    pub decoder: DecoderKind,
    pub iterations: usize,
    pub params: Params,
    pub words: Vocab,
    pub labels: LabelVocab,
}

impl ModelBundle {
    pub fn new(
        encoder: EncoderConfig,
        decoder: DecoderKind,
        iterations: usize,
        words: Vocab,
        labels: LabelVocab,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        let mut rng = SplitMix64::new(seed);
        let params = Params::init(&encoder, &mut rng);
        let bundle = Self {
            encoder,
            decoder,
            iterations,
            params,
            words,
            labels,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.encoder.validate()?;
        if self.iterations == 0 {
            return Err(ConfigError::Zero("iterations"));
        }
        if self.words.len() != self.encoder.vocab_size {
            return Err(ConfigError::VocabSize {
                what: "word",
                expected: self.encoder.vocab_size,
                actual: self.words.len(),
            });
        }
        if self.labels.len() != self.encoder.label_count {
            return Err(ConfigError::VocabSize {
                what: "label",
                expected: self.encoder.label_count,
                actual: self.labels.len(),
            });
        }
        self.params.check(&self.encoder)
    }

    pub fn mfvi(&self) -> Option<MfviConfig> {
        self.decoder.mfvi(self.iterations)
    }
}
