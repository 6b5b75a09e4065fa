//! Tape-based reverse-mode differentiation over [`Tensor`](crate::tensor::Tensor).
//!
//! A [`Tape`] records every op in execution order. Inputs always precede
//! the node that consumes them, so [`Tape::backward`] is a single pass in
//! reverse insertion order. Ops whose inputs do not require gradients keep
//! no saved context, so a tape built with [`Tape::no_grad`] is a plain
//! forward evaluator.

mod ops;
mod params;
mod tape;

pub use params::{ParamId, ParamSet};
pub use tape::{CustomOp, Gradients, Tape, Var};
pub(crate) use ops::softplus;
