//! Deterministic risk equivalents for ridge regression under covariate and
//! regression shift, optimal (possibly negative) penalties, sign conditions
//! for the optimum, subsampling equivalences and a Monte Carlo harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditions;
pub mod error;
pub mod fixed_point;
pub mod model;
pub mod risk;
mod roots;
pub mod simulate;

pub use error::{Error, Result};
