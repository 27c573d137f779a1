//! Frequency-robustness toolkit: severity-graded image corruptions, Fourier
//! diagnostics, a small CNN with total-variation regularized training,
//! frequency-biased fine-tuning, BN adaptation and corruption-error metrics.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod config;
pub mod corruption;
pub mod data;
pub mod error;
pub mod eval;
pub mod fourier;
pub mod nn;
pub mod par;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod tv;

pub use error::{Error, Result};
pub use tensor::{Shape4, Tensor};
