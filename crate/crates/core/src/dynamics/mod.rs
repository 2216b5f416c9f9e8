//! Control-affine SDE models `dx = (f + Gu) dt + σGu dv + Σ dw`.

mod cartpole;
pub mod dual;
mod quadcopter;

pub use cartpole::Cartpole;
pub use quadcopter::Quadcopter;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use dual::{Dual, Real};

/// Gravitational acceleration, m/s².
pub const GRAVITY: f64 = 9.81;

/// `(f, G, Σ)` evaluated at one `(t, x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Coefficients {
    pub drift: DVector<f64>,
    pub actuation: DMatrix<f64>,
    pub diffusion: DMatrix<f64>,
}

/// Linear time-invariant system `f = Ax`, `G = B`, constant `Σ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub diffusion: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind {
    Linear(LinearSystem),
    Cartpole(Cartpole),
    Quadcopter(Quadcopter),
}

/// A dynamics model: coefficient functions, control-multiplicative noise
/// std `σ`, and the initial state `ξ`.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsModel {
    kind: ModelKind,
    sigma: f64,
    x0: DVector<f64>,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma >= 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("σ must be nonnegative, got {sigma}")))
    }
}

/// `dx = Ax dt + Bu dt + σBu dv + Σ dw`.
pub fn linear_model(
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    diffusion: DMatrix<f64>,
    sigma: f64,
    x0: DVector<f64>,
) -> Result<DynamicsModel> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || diffusion.nrows() != n || x0.len() != n {
        return Err(Error::Dimension(format!(
            "linear model: A {}x{}, B {}x{}, Σ {}x{}, x0 {}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols(),
            diffusion.nrows(),
            diffusion.ncols(),
            x0.len()
        )));
    }
    if b.ncols() == 0 {
        return Err(Error::Dimension("linear model needs at least one control".into()));
    }
    check_sigma(sigma)?;
    Ok(DynamicsModel {
        kind: ModelKind::Linear(LinearSystem { a, b, diffusion }),
        sigma,
        x0,
    })
}

/// Cart-pole starting at rest, hanging down.
pub fn cartpole_model(mass_pole: f64, mass_cart: f64, length: f64, sigma: f64) -> Result<DynamicsModel> {
    positive("pole mass", mass_pole)?;
    positive("cart mass", mass_cart)?;
    positive("pole length", length)?;
    check_sigma(sigma)?;
    Ok(DynamicsModel {
        kind: ModelKind::Cartpole(Cartpole {
            mass_pole,
            mass_cart,
            length,
            noise_scale: 1.0,
        }),
        sigma,
        x0: DVector::zeros(Cartpole::N_X),
    })
}

/// Quadcopter starting at the origin at rest.
#[allow(clippy::too_many_arguments)]
pub fn quadcopter_model(
    mass: f64,
    ixx: f64,
    iyy: f64,
    izz: f64,
    arm_length: f64,
    drag: f64,
    sigma: f64,
) -> Result<DynamicsModel> {
    positive("mass", mass)?;
    positive("Ixx", ixx)?;
    positive("Iyy", iyy)?;
    positive("Izz", izz)?;
    positive("arm length", arm_length)?;
    positive("drag coefficient", drag)?;
    check_sigma(sigma)?;
    Ok(DynamicsModel {
        kind: ModelKind::Quadcopter(Quadcopter {
            mass,
            ixx,
            iyy,
            izz,
            arm_length,
            drag,
            noise_scale: 1.0,
        }),
        sigma,
        x0: DVector::zeros(Quadcopter::N_X),
    })
}

impl DynamicsModel {
    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ModelKind::Linear(_) => "linear",
            ModelKind::Cartpole(_) => "cartpole",
            ModelKind::Quadcopter(_) => "quadcopter",
        }
    }

    pub fn n_x(&self) -> usize {
        match &self.kind {
            ModelKind::Linear(l) => l.a.nrows(),
            ModelKind::Cartpole(_) => Cartpole::N_X,
            ModelKind::Quadcopter(_) => Quadcopter::N_X,
        }
    }

    pub fn n_u(&self) -> usize {
        match &self.kind {
            ModelKind::Linear(l) => l.b.ncols(),
            ModelKind::Cartpole(_) => Cartpole::N_U,
            ModelKind::Quadcopter(_) => Quadcopter::N_U,
        }
    }

    pub fn n_w(&self) -> usize {
        match &self.kind {
            ModelKind::Linear(l) => l.diffusion.ncols(),
            ModelKind::Cartpole(_) => Cartpole::N_W,
            ModelKind::Quadcopter(_) => Quadcopter::N_W,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn with_x0(mut self, x0: DVector<f64>) -> Result<Self> {
        if x0.len() != self.n_x() {
            return Err(Error::Dimension(format!(
                "x0 has length {}, model has {} states",
                x0.len(),
                self.n_x()
            )));
        }
        self.x0 = x0;
        Ok(self)
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        self.sigma = sigma;
        Ok(self)
    }

    /// Scales the additive diffusion of the nonlinear models (the linear model
    /// carries its Σ explicitly and is scaled directly).
    pub fn with_noise_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise scale must be nonnegative, got {scale}")));
        }
        match &mut self.kind {
            ModelKind::Linear(l) => l.diffusion *= scale,
            ModelKind::Cartpole(c) => c.noise_scale = scale,
            ModelKind::Quadcopter(q) => q.noise_scale = scale,
        }
        Ok(self)
    }

    pub fn linear_parts(&self) -> Option<&LinearSystem> {
        match &self.kind {
            ModelKind::Linear(l) => Some(l),
            _ => None,
        }
    }

    pub fn drift(&self, _t: f64, x: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            ModelKind::Linear(l) => &l.a * x,
            ModelKind::Cartpole(c) => DVector::from_vec(c.drift(x.as_slice())),
            ModelKind::Quadcopter(q) => DVector::from_vec(q.drift(x.as_slice())),
        }
    }

    pub fn actuation(&self, _t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let (n_x, n_u) = (self.n_x(), self.n_u());
        match &self.kind {
            ModelKind::Linear(l) => l.b.clone(),
            ModelKind::Cartpole(c) => DMatrix::from_row_slice(n_x, n_u, &c.actuation(x.as_slice())),
            ModelKind::Quadcopter(q) => DMatrix::from_row_slice(n_x, n_u, &q.actuation(x.as_slice())),
        }
    }

    pub fn diffusion(&self, _t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let (n_x, n_w) = (self.n_x(), self.n_w());
        match &self.kind {
            ModelKind::Linear(l) => l.diffusion.clone(),
            ModelKind::Cartpole(c) => DMatrix::from_row_slice(n_x, n_w, &c.diffusion(x.as_slice())),
            ModelKind::Quadcopter(q) => DMatrix::from_row_slice(n_x, n_w, &q.diffusion(x.as_slice())),
        }
    }

    /// All three coefficients at `(t, x)`.
    pub fn eval(&self, t: f64, x: &DVector<f64>) -> Result<Coefficients> {
        if x.len() != self.n_x() {
            return Err(Error::Dimension(format!(
                "state has length {}, model has {} states",
                x.len(),
                self.n_x()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::PathFailure { step: 0, quantity: "state" });
        }
        Ok(Coefficients {
            drift: self.drift(t, x),
            actuation: self.actuation(t, x),
            diffusion: self.diffusion(t, x),
        })
    }

    /// Pulls adjoints of `(f, G, Σ)` back to the state:
    /// `x̄_k = (∂f/∂x_k)·f̄ + ⟨∂G/∂x_k, Ḡ⟩ + ⟨∂Σ/∂x_k, Σ̄⟩`.
    pub fn coefficient_vjp(
        &self,
        _t: f64,
        x: &DVector<f64>,
        drift_bar: &DVector<f64>,
        actuation_bar: &DMatrix<f64>,
        diffusion_bar: &DMatrix<f64>,
    ) -> DVector<f64> {
        match &self.kind {
            ModelKind::Linear(l) => l.a.tr_mul(drift_bar),
            ModelKind::Cartpole(c) => dual_vjp(
                x,
                |s| c.drift(s),
                |s| c.actuation(s),
                |s| c.diffusion(s),
                drift_bar,
                actuation_bar,
                diffusion_bar,
            ),
            ModelKind::Quadcopter(q) => dual_vjp(
                x,
                |s| q.drift(s),
                |s| q.actuation(s),
                |s| q.diffusion(s),
                drift_bar,
                actuation_bar,
                diffusion_bar,
            ),
        }
    }
}

/// One forward-mode sweep per state component.
fn dual_vjp(
    x: &DVector<f64>,
    drift: impl Fn(&[Dual]) -> Vec<Dual>,
    actuation: impl Fn(&[Dual]) -> Vec<Dual>,
    diffusion: impl Fn(&[Dual]) -> Vec<Dual>,
    drift_bar: &DVector<f64>,
    actuation_bar: &DMatrix<f64>,
    diffusion_bar: &DMatrix<f64>,
) -> DVector<f64> {
    let n = x.len();
    let n_u = actuation_bar.ncols();
    let n_w = diffusion_bar.ncols();
    let mut out = DVector::zeros(n);
    let mut seed: Vec<Dual> = x.iter().map(|&v| Dual::cst(v)).collect();
    for k in 0..n {
        seed[k].eps = 1.0;
        let mut acc = 0.0;
        for (i, d) in drift(&seed).iter().enumerate() {
            acc += d.eps * drift_bar[i];
        }
        for (idx, d) in actuation(&seed).iter().enumerate() {
            acc += d.eps * actuation_bar[(idx / n_u, idx % n_u)];
        }
        for (idx, d) in diffusion(&seed).iter().enumerate() {
            if d.eps != 0.0 {
                acc += d.eps * diffusion_bar[(idx / n_w, idx % n_w)];
            }
        }
        out[k] = acc;
        seed[k].eps = 0.0;
    }
    out
}
