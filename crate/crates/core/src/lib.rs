//! Linear-chain CRF sequence labelling with exact inference (forward-backward,
//! Viterbi) and mean-field inference unrolled into a trainable,
//! position-parallel network.
//!
//! The crate is `no_std` and needs only `alloc`. Threading, file formats and
//! the command line live in the `parcrf` crate; parallel execution enters
//! through [`exec::Executor`].

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod exact;
pub mod exec;
pub mod labels;
pub mod math;
pub mod mfvi;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, GraphError, NodeId};
pub use corpus::{LabelVocab, TaggedSentence, Vocab};
pub use encoder::Potentials;
pub use exec::{Executor, Sequential};
pub use mfvi::{MfviConfig, Order};
pub use model::{DecoderKind, EncoderConfig, EncoderKind, ModelBundle, ParamName, Params};
pub use tensor::Tensor;
