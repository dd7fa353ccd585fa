//! Surface measures on level sets of functionals of a Gaussian measure,
//! estimated by Monte Carlo in whitened coordinates.

// `!(x > 0.0)` style checks are there to reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod density;
pub mod disintegration;
pub mod error;
pub mod expr;
pub mod functional;
pub mod gauss_model;
pub mod oracle;
pub mod quadrature;
pub mod report;
pub mod rng;
pub mod runner;
pub mod selftest;
pub mod stats;
pub mod surface;

pub use error::{Error, Result};
pub use functional::{Functional, FunctionalOracle};
pub use gauss_model::{build_model, GaussianModel, HVector, ModelDescriptor, Point, SampleBatch};
