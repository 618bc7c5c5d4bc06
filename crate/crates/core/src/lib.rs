//! Allocation-only building blocks for hybrid sequence classifiers.
//!
//! A contextual encoder (the toy transformer in [`encoder`] or embeddings
//! imported from elsewhere) feeds a recurrent head from [`heads`], which is
//! trained end to end through the reverse-mode tape in [`tape`]. The crate
//! also carries the byte-pair tokenizer, an n-gram language-model baseline,
//! the optimizers, and the evaluation metrics. Everything here is pure
//! computation; file formats and the command line live in the `seqfuse`
//! crate.

#![no_std]

extern crate alloc;

pub mod data;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod heads;
pub mod math;
pub mod metrics;
pub mod model;
pub mod ngram;
mod ops;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
pub use rng::RandomSource;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
