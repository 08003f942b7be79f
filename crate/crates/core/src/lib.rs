//! First-passage laws of a continuous martingale `dM = h(t) dB` across a
//! moving boundary `f(t)`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boundary;
pub mod bridge_kernel;
pub mod cli;
pub mod clock;
pub mod error;
pub mod fpt_pipeline;
pub mod gauge;
pub mod level_hitting;
pub mod montecarlo;
pub mod numerics;
pub mod propagator;
pub mod selftest;

pub use error::{FptError, Result};
