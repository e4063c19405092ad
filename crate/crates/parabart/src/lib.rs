//! Syntax-guided paraphrase generation with an adversarial syntax
//! discriminator, built from scratch for single-CPU experiments.
//!
//! The crate trains a small sequence-to-sequence model whose decoder is
//! conditioned on (a) a pooled semantic embedding of the source sentence and
//! (b) an encoding of the *target* constituency parse, while an adversarial
//! classifier pushes syntactic information out of the semantic embedding.
//! Everything — reverse-mode autodiff, the transformer stacks, AdamW, the
//! evaluation suite — is implemented here with no external ML dependencies.
//!
//! Module map:
//! - [`tensor`]: autodiff tape, AdamW, gradient checking, checkpoints
//! - [`check`]: finite-difference suites over every op and the full objective
//! - [`syntax`]: bracketed constituency trees and tag statistics
//! - [`data`]: vocabulary, corpus I/O, synthetic corpus generation
//! - [`model`]: encoders, decoder, discriminator, losses
//! - [`training`]: the alternating adversarial training loop
//! - [`eval`]: similarity metrics, probing, paraphrase-detection splits

pub mod check;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod syntax;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
