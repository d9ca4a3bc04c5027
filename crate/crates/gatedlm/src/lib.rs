//! Desk-scale gated linear-RNN language modeling toolkit.
//!
//! The pipeline, end to end:
//!
//! 1. [`corpus`] — domain-stratified subsampling of raw text to a word budget.
//! 2. [`tokenizer`] — byte-level BPE trained from scratch.
//! 3. [`dataset`] — concatenate-and-chunk packing into fixed-length sequences.
//! 4. [`model`] — HGRN2-style gated linear recurrence (sequential and
//!    chunkwise-scan execution) and a vanilla LSTM baseline, assembled into
//!    causal language models.
//! 5. [`train`] — cross-entropy and knowledge-distillation training with Adam,
//!    linear LR decay, gradient clipping, and a learning-rate sweep.
//! 6. [`eval`] — zero-shot minimal-pair / multiple-choice / perplexity
//!    evaluation with macro-average reporting.
//!
//! Everything numeric runs on the reverse-mode [`tensor::Tape`], so a single
//! finite-difference harness covers gradients of every composite.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod synthetic;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
