//! Selective state space sequence models with a trainable document reranker.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`autograd`], [`nn`]: dense `f64` tensors, a gradient tape,
//!   layers, AdamW, the warmup schedule and checkpoint files.
//! - [`ssm`]: zero-order-hold discretization, recurrent / convolutional LTI
//!   modes, sequential and work-efficient parallel scans, the selective scan
//!   with store-all or recompute backward, and the Mamba block.
//! - [`models`]: byte tokenizer, Mamba and attention backbones, scoring head.
//! - [`rerank`]: input templates, hard-negative sampling, InfoNCE, training.
//! - [`retrieval`]: BM25 over an inverted index, reranking, MRR/NDCG, TREC I/O.
//! - [`bench`]: forward+backward throughput and peak-memory harness.
//! - [`cli`]: the stage-per-subcommand pipeline behind the `rankssm` binary.

pub mod autograd;
pub mod bench;
pub mod cli;
pub mod error;
pub mod memory;
pub mod models;
pub mod nn;
pub mod rerank;
pub mod retrieval;
pub mod ssm;
pub mod tensor;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use tensor::Tensor;
