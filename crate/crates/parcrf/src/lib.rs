//! File formats, a thread-pool executor, the speed benchmark and the
//! command-line front end for `parcrf-core`.

pub mod bench;
pub mod cli;
pub mod conll;
pub mod embeddings;
pub mod model_io;
pub mod parallel;
pub mod report;

pub use parallel::Pool;
