//! Simulators for the stochastic F-KPP equation with seed bank and for its
//! moment dual, the on/off branching coalescing Brownian motion with killing.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analytics;
pub mod error;
pub mod model;
pub mod rng;
pub mod spde;
pub mod stats;
pub mod suite;
pub mod dual;
pub mod duality;

pub use error::{Error, Result};
