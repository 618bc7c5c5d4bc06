//! File formats, dataset loading and the command-line runner around
//! [`seqfuse_core`].

mod binary;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod results;
pub mod run;
pub mod vocab;

pub use error::{Error, Result};
