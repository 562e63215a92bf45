//! Mass and planar moment-of-inertia identification for a thruster-actuated
//! rigid body from pose measurements.
//!
//! The crate covers the augmented planar dynamics ([`dynamics`]), duty-cycle
//! thrust curves ([`thrust`]), excitation inputs and sensitivity analysis
//! ([`excitation`]), batch least squares and the extended Kalman filter
//! ([`estimators`]), Monte Carlo consistency checks ([`montecarlo`]),
//! synthetic datasets ([`scenario`]), and file formats ([`io`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod excitation;
pub mod io;
pub mod montecarlo;
pub mod replicate;
pub mod scenario;
pub mod thrust;

pub use error::{Error, Result};
