//! Predictive tracking control: a condensed jerk MPC driven by learned
//! human-motion predictors.

pub mod bench;
pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod mpc;
pub mod predictors;
pub mod session;
pub mod sim;
pub mod training;

pub use error::{Error, Result};
