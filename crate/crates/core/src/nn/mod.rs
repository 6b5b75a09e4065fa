//! Layers, optimizer, learning-rate schedule and checkpoint I/O.

pub mod checkpoint;
pub mod init;
mod linear;
mod optim;

pub use linear::{lora_wrap, Linear, LoraLinear, Projection};
pub use optim::{adamw_update, warmup_linear_lr, AdamW, AdamWConfig};
