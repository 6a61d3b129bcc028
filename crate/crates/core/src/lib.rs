//! Sparse-regression laboratory.
//!
//! Implements Lasso and Group Lasso estimation with theoretically motivated
//! regularization parameters, cone-condition and restricted-eigenvalue
//! diagnostics, and a seeded Monte-Carlo harness that checks the predicted
//! L2 estimation-error rates empirically.

pub mod cli;
pub mod error;
pub mod linalg;
pub mod mc;
pub mod model;
pub mod seeds;
pub mod solver;
pub mod theory;

pub use error::{Error, Result};
