//! Shared fixtures for unit tests.

use nalgebra::{DMatrix, DVector};

use crate::cost::CostSpec;
use crate::dynamics::linear_model;
use crate::problem::Problem;
use crate::sde::TimeGrid;

/// `dx = 0.2x dt + u dt + 0.5u dv + 0.1 dw`, `Q = 0`, `Q_T = 80`, `R = 2`, `x0 = 1`.
pub fn scalar_problem(n_steps: usize, dt: f64) -> Problem {
    let model = linear_model(
        DMatrix::from_element(1, 1, 0.2),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 0.1),
        0.5,
        DVector::from_element(1, 1.0),
    )
    .unwrap();
    let cost = CostSpec::new(
        DMatrix::zeros(1, 1),
        DMatrix::from_element(1, 1, 2.0),
        DMatrix::from_element(1, 1, 80.0),
        DVector::zeros(1),
    )
    .unwrap();
    Problem::new(model, cost, TimeGrid::new(n_steps, dt).unwrap()).unwrap()
}
