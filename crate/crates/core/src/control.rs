//! Noise-adjusted control law `u* = -R̂⁻¹GᵀVx` with `R̂ = R + σ²GᵀVxxG`.
//!
//! `R̂` is factorized once per step and reused by the value-function step and
//! by the reverse pass.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalue floor below which `R̂` receives diagonal jitter.
pub const RHAT_EIGEN_FLOOR: f64 = 1e-8;
/// Relative jitter magnitude, scaled by `max(1, trace(R̂)/n_u)`.
pub const RHAT_JITTER: f64 = 1e-6;

/// Factorized `R̂` together with the control it produced.
#[derive(Clone, Debug)]
pub struct ControlSolution {
    pub u: DVector<f64>,
    pub rhat: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    /// Diagonal jitter that was added to `R̂` (0 when none was needed).
    pub jitter: f64,
}

impl ControlSolution {
    /// Solves `R̂ y = rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }
}

/// Builds `R̂ = R + σ²GᵀVxxG`, applies the jitter policy, and factorizes it.
pub fn factor_rhat(
    g: &DMatrix<f64>,
    vxx: &DMatrix<f64>,
    r: &DMatrix<f64>,
    sigma: f64,
) -> Result<(DMatrix<f64>, Cholesky<f64, Dyn>, f64)> {
    let n_u = r.nrows();
    if g.ncols() != n_u || g.nrows() != vxx.nrows() || !vxx.is_square() || !r.is_square() {
        return Err(Error::Dimension(format!(
            "G is {}x{}, Vxx is {}x{}, R is {}x{}",
            g.nrows(),
            g.ncols(),
            vxx.nrows(),
            vxx.ncols(),
            r.nrows(),
            r.ncols()
        )));
    }
    let mut rhat = r.clone();
    if sigma != 0.0 {
        rhat += (g.transpose() * vxx * g) * (sigma * sigma);
    }
    let rhat = (&rhat + rhat.transpose()) * 0.5;
    if rhat.iter().any(|v| !v.is_finite()) {
        return Err(Error::PathFailure { step: 0, quantity: "R̂" });
    }

    let min_eig = if n_u == 1 {
        rhat[(0, 0)]
    } else {
        SymmetricEigen::new(rhat.clone()).eigenvalues.min()
    };
    let mut jitter = 0.0;
    let mut factored = rhat.clone();
    if min_eig <= RHAT_EIGEN_FLOOR {
        jitter = RHAT_JITTER * (rhat.trace() / n_u as f64).max(1.0);
        for i in 0..n_u {
            factored[(i, i)] += jitter;
        }
    }
    match Cholesky::new(factored.clone()) {
        Some(chol) => Ok((factored, chol, jitter)),
        None => Err(Error::SingularControl { step: 0 }),
    }
}

/// Solves `R̂ u* = -Gᵀ Vx`.
pub fn solve_control(
    vx: &DVector<f64>,
    vxx: &DMatrix<f64>,
    g: &DMatrix<f64>,
    r: &DMatrix<f64>,
    sigma: f64,
) -> Result<ControlSolution> {
    if vx.len() != g.nrows() {
        return Err(Error::Dimension(format!(
            "Vx has length {}, G has {} rows",
            vx.len(),
            g.nrows()
        )));
    }
    let (rhat, chol, jitter) = factor_rhat(g, vxx, r, sigma)?;
    let rhs = -(g.transpose() * vx);
    let u = chol.solve(&rhs);
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::PathFailure { step: 0, quantity: "control" });
    }
    Ok(ControlSolution { u, rhat, chol, jitter })
}
