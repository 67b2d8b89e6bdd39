//! Tensor operations with reverse-mode differentiation.

pub mod gradcheck;
pub mod kernels;
pub mod loss;
pub mod tape;

pub use gradcheck::{grad_check, DEFAULT_EPS, REL_ERR_FLOOR};
pub use loss::cross_entropy;
pub use tape::{sigmoid, softmax, Activation, Op, OpRecord, PoolKind, Tape, Var};

#[cfg(test)]
mod tests;
