//! Deep second-order FBSDE controller for stochastic optimal control with
//! control-multiplicative noise, plus a Riccati oracle for linear systems.

pub mod control;
pub mod cost;
pub mod dynamics;
pub mod error;
pub mod net;
pub mod problem;
pub mod riccati;
pub mod sde;
pub mod training;

#[cfg(test)]
mod test_support;

pub use error::{Error, Result};
pub use problem::Problem;
