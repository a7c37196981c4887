//! Free-Kummer and free-Poisson distributions, their transform calculus, a
//! random-matrix Monte Carlo for the HV transformation, and the regression
//! characterization pipeline.

// `!(x > 0.0)` is used throughout so that NaN is rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod combinatorics;
pub mod dist_free;
pub mod error;
pub mod hv;
pub mod matrix_rand;
pub mod par;
pub mod quad;
pub mod roots;
pub mod series;
pub mod transforms;

pub use error::{Error, Result};
