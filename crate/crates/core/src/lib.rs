//! Probabilistic neural radiance fields with conditional normalizing flows.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod diff;
pub mod error;
pub mod field;
pub mod metrics;
pub mod objective;
pub mod pipeline;
pub mod raster;
pub mod render;
pub mod rng;
pub mod scenes;
pub mod train;

pub use error::{Error, Result};
