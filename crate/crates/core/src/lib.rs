// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod instances;
pub mod linalg;
pub mod local;
pub mod parallel;
pub mod pdmm;
pub mod problem;
pub mod stepsize;

pub use error::{PdmmError, Result};
