//! Minimum-impulse fall planning on an abstract pendulum model.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dp;
pub mod error;
pub mod harness;
pub mod io;
pub mod model;
pub mod net;
pub mod policy;
pub mod trainer;

pub use error::{Error, Result};
