//! Script identification for cropped scene-text words: a spatial-attention
//! residual CNN feeding a projected bidirectional LSTM, trained with CTC and
//! decoded by majority vote over per-frame script predictions.
//!
//! Everything, including backpropagation, is implemented directly on a small
//! dense tensor type; there is no autodiff framework underneath.

pub mod attention;
pub mod cli;
pub mod ctc;
pub mod data;
pub mod error;
pub mod layers;
pub mod model;
pub mod parallel;
pub mod recurrent;
pub mod residual;
pub mod tensor;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, ErrorClass, Result};
pub use tensor::{Rng, Tensor};
