// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cis;
pub mod conditioning;
pub mod error;
pub mod harness;
mod im2col;
pub mod img;
pub mod metrics;
pub mod monitor;
pub mod nets;
pub mod nn;
pub mod sessions;
pub mod training;

pub use error::{Error, Result};
