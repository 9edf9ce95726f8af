//! Low-rank Kalman filtering for the random-walk forecast model.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod covariance;
pub mod error;
pub mod filters;
pub mod io;
pub mod linalg;
pub mod lowrank;
pub mod noise;
pub mod tomography;
pub mod uq;

pub use error::{Error, Result};
