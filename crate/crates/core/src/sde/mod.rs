//! Time grid, Brownian increments and the explicit Euler–Maruyama steps of the
//! coupled forward/backward system
//!
//! ```text
//! dx  = f dt + G(u dt + σ u dv) + Σ dw
//! dV  = -(q - ½ VxᵀG R̂⁻ᵀ(R + 2σ²GᵀVxxG) R̂⁻¹GᵀVx) dt + VxᵀG(u dt + σ u dv) + VxᵀΣ dw
//! dVx = (A + Vxx f) dt + Vxx G(u dt + σ u dv) + Vxx Σ dw
//! ```
//!
//! All coefficients are evaluated at the left end of the step. The three step
//! functions take the same [`StepNoise`] so that one step consumes a single set
//! of increments.

mod noise;
pub mod rollout;

pub use noise::{noise_digest, sample_noise, sample_noise_from, sample_path, NoisePath};
pub use rollout::{rollout, ControlLaw, Rollout, StepRecord, Trajectory, ValuePredictor};

use nalgebra::{DMatrix, DVector};

use crate::control::solve_control;
use crate::dynamics::Coefficients;
use crate::error::{Error, Result};

/// Uniform grid `t_k = k·dt`, `k = 0..=N`, with horizon `T = N·dt`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(n_steps: usize, dt: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidParameter("time grid needs at least one step".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        Ok(Self { n_steps, dt })
    }

    /// Grid with step `dt` covering `horizon`; the horizon must be an integer
    /// multiple of `dt` up to rounding.
    pub fn from_horizon(dt: f64, horizon: f64) -> Result<Self> {
        if !(dt > 0.0 && horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dt and horizon must be positive (dt = {dt}, T = {horizon})"
            )));
        }
        let n = (horizon / dt).round();
        if n < 1.0 || ((n * dt) - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon {horizon} is not a whole number of steps of {dt}"
            )));
        }
        Self::new(n as usize, dt)
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }
}

/// `(x, V, Vx)` at one grid node of one sample path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathState {
    pub x: DVector<f64>,
    pub v: f64,
    pub vx: DVector<f64>,
}

impl PathState {
    pub fn new(x: DVector<f64>, v: f64, vx: DVector<f64>) -> Self {
        Self { x, v, vx }
    }

    pub fn check_finite(&self, step: usize) -> Result<()> {
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::PathFailure { step, quantity: "state" });
        }
        if !self.v.is_finite() {
            return Err(Error::PathFailure { step, quantity: "value" });
        }
        if self.vx.iter().any(|v| !v.is_finite()) {
            return Err(Error::PathFailure { step, quantity: "value gradient" });
        }
        Ok(())
    }
}

/// Increments shared by the three step functions within one step.
#[derive(Clone, Copy, Debug)]
pub struct StepNoise<'a> {
    pub step: usize,
    pub dt: f64,
    pub dv: f64,
    pub dw: &'a [f64],
}

impl StepNoise<'_> {
    /// Scalar multiplying `G u`: `dt + σ dv`.
    pub fn control_factor(&self, sigma: f64) -> f64 {
        self.dt + sigma * self.dv
    }
}

/// `G u (dt + σ dv) + Σ dw`, the stochastic-plus-control displacement that
/// all three equations share.
pub(crate) fn shared_displacement(
    coeff: &Coefficients,
    u: &DVector<f64>,
    sigma: f64,
    noise: &StepNoise<'_>,
) -> DVector<f64> {
    let mut d = &coeff.actuation * u * noise.control_factor(sigma);
    let n_w = coeff.diffusion.ncols();
    for (k, &dw) in noise.dw.iter().enumerate().take(n_w) {
        if dw != 0.0 {
            d.axpy(dw, &coeff.diffusion.column(k), 1.0);
        }
    }
    d
}

/// `½ uᵀ (R + 2σ²GᵀVxxG) u`; with `u = -R̂⁻¹GᵀVx` this is the quadratic form
/// in the value drift.
pub(crate) fn value_quadratic(
    u: &DVector<f64>,
    g: &DMatrix<f64>,
    vxx: &DMatrix<f64>,
    r: &DMatrix<f64>,
    sigma: f64,
) -> f64 {
    let gu = g * u;
    let ru = r * u;
    0.5 * u.dot(&ru) + sigma * sigma * gu.dot(&(vxx * &gu))
}

fn check_noise(coeff: &Coefficients, noise: &StepNoise<'_>) -> Result<()> {
    if noise.dw.len() != coeff.diffusion.ncols() {
        return Err(Error::Dimension(format!(
            "dw has length {}, Σ has {} columns",
            noise.dw.len(),
            coeff.diffusion.ncols()
        )));
    }
    if !(noise.dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {}", noise.dt)));
    }
    Ok(())
}

fn finite_vec(v: DVector<f64>, step: usize, quantity: &'static str) -> Result<DVector<f64>> {
    if v.iter().all(|e| e.is_finite()) {
        Ok(v)
    } else {
        Err(Error::PathFailure { step, quantity })
    }
}

/// Forward step: `x' = x + f dt + G(u dt + σ u dv) + Σ dw`.
pub fn fsde_step(
    x: &DVector<f64>,
    coeff: &Coefficients,
    u: &DVector<f64>,
    sigma: f64,
    noise: &StepNoise<'_>,
) -> Result<DVector<f64>> {
    check_noise(coeff, noise)?;
    if x.len() != coeff.drift.len() || u.len() != coeff.actuation.ncols() {
        return Err(Error::Dimension("state or control does not match coefficients".into()));
    }
    let next = x + &coeff.drift * noise.dt + shared_displacement(coeff, u, sigma, noise);
    finite_vec(next, noise.step, "state")
}

/// Value step. The quadratic drift term is computed from `Vx` through its own
/// solve against `R̂`; `u` only enters the martingale-like terms.
#[allow(clippy::too_many_arguments)]
pub fn bsde_v_step(
    state: &PathState,
    q: f64,
    coeff: &Coefficients,
    vxx: &DMatrix<f64>,
    u: &DVector<f64>,
    r: &DMatrix<f64>,
    sigma: f64,
    noise: &StepNoise<'_>,
) -> Result<f64> {
    check_noise(coeff, noise)?;
    let y = solve_control(&state.vx, vxx, &coeff.actuation, r, sigma)
        .map_err(|e| e.at_step(noise.step))?
        .u;
    let quad = value_quadratic(&y, &coeff.actuation, vxx, r, sigma);
    let disp = shared_displacement(coeff, u, sigma, noise);
    let next = state.v - (q - quad) * noise.dt + state.vx.dot(&disp);
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::PathFailure { step: noise.step, quantity: "value" })
    }
}

/// Gradient step: `Vx' = Vx + (A + Vxx f) dt + Vxx G(u dt + σ u dv) + Vxx Σ dw`.
pub fn bsde_vx_step(
    state: &PathState,
    a: &DVector<f64>,
    coeff: &Coefficients,
    vxx: &DMatrix<f64>,
    u: &DVector<f64>,
    sigma: f64,
    noise: &StepNoise<'_>,
) -> Result<DVector<f64>> {
    check_noise(coeff, noise)?;
    if a.len() != state.vx.len() || vxx.nrows() != state.vx.len() {
        return Err(Error::Dimension("A or Vxx does not match Vx".into()));
    }
    let disp = shared_displacement(coeff, u, sigma, noise);
    let next = &state.vx + (a + vxx * &coeff.drift) * noise.dt + vxx * disp;
    finite_vec(next, noise.step, "value gradient")
}
