//! Attention-condenser convolutional networks for binary ultrasound frame
//! classification.

pub mod analyzer;
pub mod cli;
pub mod error;
pub mod explain;
pub mod condenser;
pub mod data;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod search;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
