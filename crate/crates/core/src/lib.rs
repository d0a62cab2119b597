//! Energy-efficient handover in ultra-dense networks with mobile users and
//! time-varying fading, under a mean-field interference model.

// `!(x > 0.0)` deliberately rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod config;
pub mod error;
pub mod experiments;
pub mod simulator;
pub mod specfun;
pub mod stochastic;

pub use error::{Error, Result};
