#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod energy;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod mla;
pub mod rfm;
pub mod rng;
pub mod state;
pub mod steer;
pub mod tempering;

pub use error::{Error, Result};
