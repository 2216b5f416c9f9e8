//! Quadratic tracking cost
//!
//! ```text
//! J = Σ_t (q(x_t) + ½ u_tᵀ R u_t) dt + φ(x_N)
//! q(x) = ½ (x-η)ᵀ Q (x-η),   φ(x) = ½ (x-η)ᵀ Q_T (x-η)
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CostSpec {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_terminal: DMatrix<f64>,
    pub target: DVector<f64>,
}

fn symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= 1e-12 * scale
}

impl CostSpec {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, q_terminal: DMatrix<f64>, target: DVector<f64>) -> Result<Self> {
        let n = target.len();
        if q.shape() != (n, n) || q_terminal.shape() != (n, n) || !r.is_square() || r.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "cost: Q {:?}, Q_T {:?}, R {:?}, target {}",
                q.shape(),
                q_terminal.shape(),
                r.shape(),
                n
            )));
        }
        if !symmetric(&q) || !symmetric(&q_terminal) || !symmetric(&r) {
            return Err(Error::InvalidParameter("Q, Q_T and R must be symmetric".into()));
        }
        if r.clone().cholesky().is_none() {
            return Err(Error::InvalidParameter("R must be positive definite".into()));
        }
        Ok(Self { q, r, q_terminal, target })
    }

    pub fn n_x(&self) -> usize {
        self.target.len()
    }

    pub fn n_u(&self) -> usize {
        self.r.nrows()
    }

    pub fn running(&self, x: &DVector<f64>) -> f64 {
        let e = x - &self.target;
        0.5 * e.dot(&(&self.q * &e))
    }

    /// `∂q/∂x = Q(x-η)`.
    pub fn running_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * (x - &self.target)
    }

    pub fn control(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.r * u))
    }

    pub fn terminal(&self, x: &DVector<f64>) -> f64 {
        let e = x - &self.target;
        0.5 * e.dot(&(&self.q_terminal * &e))
    }

    pub fn terminal_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q_terminal * (x - &self.target)
    }

    pub fn terminal_hessian(&self) -> &DMatrix<f64> {
        &self.q_terminal
    }
}
