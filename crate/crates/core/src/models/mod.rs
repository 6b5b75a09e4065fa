//! Byte tokenizer, backbones and the relevance scoring head.

mod attention;
mod backbone;
mod config;
mod reranker;
pub mod vocab;

pub use attention::{attention, AttentionLayer};
pub use backbone::{Backbone, Layer};
pub use config::{BackboneConfig, BackboneKind, LoraSpec};
pub use reranker::{ParamSummary, RankingHead, Reranker};
pub use vocab::{decode, encode, tokenize, CLS, EOS, PAD, SEP, VOCAB_SIZE};
