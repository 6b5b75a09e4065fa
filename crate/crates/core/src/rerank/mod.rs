//! Reranker training: input templates, hard negatives, InfoNCE and the
//! one-pass training loop.

mod experiment;
mod format;
mod infonce;
mod samples;
mod train;

pub use experiment::{rerank_with_model, Experiment, DEPTH};
pub use format::{format_input, input_ids, segments_to_ids, Segment};
pub use infonce::{infonce, infonce_loss};
pub use samples::{
    build_samples, negative_pool, read_samples, sample_negatives, write_samples, NegativeDoc, TrainingSample,
    NEGATIVE_POOL_DEPTH,
};
pub use train::{checkpoint_schedule, smoothed, train, TrainConfig, TrainReport};
