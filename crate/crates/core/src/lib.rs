//! Multivariable fractional polynomial regression and the battery
//! state-of-health pipeline built on it.

// Negated comparisons deliberately treat NaN as failing the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod error;
pub mod exec;
pub mod features;
pub mod fp;
pub mod hexfloat;
pub mod ingest;
pub mod linreg;
pub mod metrics;
pub mod mfp;
pub mod pchip;
pub mod pipeline;
pub mod prelim;
pub mod report;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
pub use exec::Exec;

#[cfg(test)]
mod testutil;
