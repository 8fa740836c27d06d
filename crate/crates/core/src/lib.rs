//! Learning interaction kernels of stochastic particle systems from trajectory data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod hypospace;
pub mod io;
pub mod measure;
pub mod model;
pub mod par;
pub mod sim;

pub use error::{Error, Result};
