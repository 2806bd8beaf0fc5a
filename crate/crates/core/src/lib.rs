//! Equilibrium threshold strategies for time-inconsistent singular control
//! of one-dimensional diffusions under a mixture of exponential discount
//! rates: closed-form candidates, numerical verification, boundary
//! classification and Monte Carlo cross-checks.

// `!(a < b)` guards double as NaN rejection.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod mild;
pub mod model;
pub mod quad;
pub mod report;
pub mod scale;
pub mod sim;
pub mod strong;
pub mod value;
pub mod verify;

pub use error::{Error, Result};
