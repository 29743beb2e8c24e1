// Range checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod constraints;
pub mod datasets;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod sampler;
pub mod tasks;

pub use error::{Error, Result};
