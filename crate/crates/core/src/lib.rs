//! Geometric message-passing potentials and neural scaling-law tooling.

// Negated comparisons reject NaN on purpose; numeric kernels index several arrays in step.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod data;
pub mod error;
pub mod fit;
pub mod flops;
pub mod graph;
pub mod model;
pub mod pipeline;
pub mod so3;
pub mod train;

pub use error::{Error, Result};
