#![allow(dead_code)]

use deep2fbsde::cost::CostSpec;
use deep2fbsde::dynamics::linear_model;
use deep2fbsde::sde::TimeGrid;
use deep2fbsde::Problem;
use nalgebra::{DMatrix, DVector};

pub fn m1(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

/// `A = 0.2, B = 1, C = 0.1, Q = 0, R = 2, Q_T = 80, x0 = 1` with the given `σ`.
pub fn scalar(sigma: f64, diffusion: f64, n_steps: usize, dt: f64) -> Problem {
    let model = linear_model(m1(0.2), m1(1.0), m1(diffusion), sigma, DVector::from_element(1, 1.0)).unwrap();
    let cost = CostSpec::new(m1(0.0), m1(2.0), m1(80.0), DVector::zeros(1)).unwrap();
    Problem::new(model, cost, TimeGrid::new(n_steps, dt).unwrap()).unwrap()
}

/// Double integrator tracking a nonzero target.
pub fn double_integrator(sigma: f64, diffusion: f64, n_steps: usize, dt: f64) -> Problem {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.5, -0.1]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let c = DMatrix::identity(2, 2) * diffusion;
    let model = linear_model(a, b, c, sigma, DVector::from_vec(vec![1.0, 0.0])).unwrap();
    let cost = CostSpec::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
        m1(0.5),
        DMatrix::identity(2, 2) * 10.0,
        DVector::from_vec(vec![-0.5, 0.3]),
    )
    .unwrap();
    Problem::new(model, cost, TimeGrid::new(n_steps, dt).unwrap()).unwrap()
}
