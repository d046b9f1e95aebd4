//! Mean-variance regression as a lattice field theory.
//!
//! The crate fits a mean field `μ` and a log-precision field `η` by direct
//! minimization of a regularized Gaussian likelihood on a 1D lattice, and
//! compares that against neural mean-variance networks trained under the same
//! regularization.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bft;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod ft;
mod io;
pub mod lattice;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod sweep;

pub use error::{Error, Result};
