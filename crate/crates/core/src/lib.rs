//! Kernel-based information measures for embedding sequences.
//!
//! Entropy is read off the eigenvalue spectrum of a trace-normalized Gaussian
//! Gram matrix, so no density estimate is needed. The crate provides:
//!
//! | Item | Purpose |
//! |------|---------|
//! | [`kernel`] | bandwidth selection, self and block joint Gaussian kernels |
//! | [`spectrum`] | symmetric eigenvalues of a kernel |
//! | [`entropy`] | matrix Rényi entropy, sequence entropy, conditional entropy proxy |
//! | [`synth`] | seeded cluster and dependency generators plus the sensitivity experiments |
//!
//! The crate is `no_std` and needs only `alloc`. IO, file formats and the
//! command-line front end live in the `infoprobe` crate.
//!
//! ```
//! use infoprobe_core::{entropy, kernel::Bandwidth, EmbeddingSequence, EntropyParams};
//!
//! let seq = EmbeddingSequence::from_rows(vec![vec![0.0, 0.0]; 8]).unwrap();
//! let h = entropy::sequence_entropy(&seq, &EntropyParams::default(), Bandwidth::Median).unwrap();
//! assert!(h.value.abs() < 1e-9);
//! ```
#![no_std]

extern crate alloc;

pub mod entropy;
mod error;
pub mod kernel;
mod sequence;
pub mod spectrum;
pub mod synth;

pub use entropy::{ConditionalEntropyResult, EntropyParams, EntropyResult, LogBase, SigmaScope};
pub use error::{Error, Result};
pub use kernel::{Bandwidth, KernelKind, KernelMatrix};
pub use sequence::{EmbeddingSequence, Modality, Role};
