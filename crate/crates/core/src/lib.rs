//! Effective Hamiltonians for multiscale first-order Hamilton–Jacobi–Bellman
//! equations.

// `!(x > 0.0)` deliberately rejects NaN; index loops mirror the stencils.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod average;
pub mod cell;
pub mod cli;
pub mod config;
pub mod effective;
pub mod error;
pub mod field;
pub mod hamiltonians;
pub mod homogenizer;
pub mod scales;
pub mod scheme;
pub mod verify;

pub use error::{Error, Result};
