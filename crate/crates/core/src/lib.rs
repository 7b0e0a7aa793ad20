//! Spatial blind source separation.
//!
//! Estimates the unmixing matrix of `X(s) = Ω Z(s)` by diagonalizing
//! kernel-weighted local covariance matrices, and evaluates the limiting
//! covariance of the estimators.
#![no_std]

extern crate alloc;

pub mod asymptotics;
pub mod diagonalizer;
pub mod error;
pub mod field_sim;
pub mod kernels;
pub mod linalg;
pub mod local_cov;
pub mod metrics;
pub mod pipeline;
pub mod spatial;
pub mod special;

pub use error::{Error, Result};
pub use kernels::Kernel;
pub use linalg::Mat;
pub use spatial::{FieldSample, LocationSet};
