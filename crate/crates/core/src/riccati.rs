//! Exact value function of the linear problem with control-multiplicative
//! noise. With the ansatz `V = ½xᵀPx + xᵀS + c`, `K = B R̂⁻¹ Bᵀ` and
//! `R̂ = R + σ²BᵀPB`:
//!
//! ```text
//! -Ṗ = Q + PA + AᵀP - PKP
//! -Ṡ = -Qη + AᵀS - PKS
//! -ċ = ½ηᵀQη - ½SᵀKS + ½tr(PΣΣᵀ)
//! P(T) = Q_T,  S(T) = -Q_Tη,  c(T) = ½ηᵀQ_Tη
//! ```
//!
//! integrated backwards with classical RK4.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::cost::CostSpec;
use crate::dynamics::{Coefficients, LinearSystem};
use crate::error::{Error, Result};
use crate::problem::Problem;
use crate::net::NetworkOutput;
use crate::sde::{fsde_step, NoisePath, StepNoise, TimeGrid, Trajectory, ValuePredictor};

pub const DEFAULT_SUBSTEPS: usize = 10;

#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    pub grid: TimeGrid,
    pub p: Vec<DMatrix<f64>>,
    pub s: Vec<DVector<f64>>,
    pub c: Vec<f64>,
    b: DMatrix<f64>,
    r: DMatrix<f64>,
    sigma: f64,
}

#[derive(Clone)]
struct Node {
    p: DMatrix<f64>,
    s: DVector<f64>,
    c: f64,
}

struct Rhs<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DMatrix<f64>,
    sigma_sigma_t: DMatrix<f64>,
    sigma: f64,
    q: &'a DMatrix<f64>,
    r: &'a DMatrix<f64>,
    q_eta: DVector<f64>,
    eta_q_eta: f64,
}

fn rhat_factor(b: &DMatrix<f64>, p: &DMatrix<f64>, r: &DMatrix<f64>, sigma: f64, node: usize) -> Result<Cholesky<f64, Dyn>> {
    let rhat = r + b.transpose() * p * b * (sigma * sigma);
    let rhat = (&rhat + rhat.transpose()) * 0.5;
    Cholesky::new(rhat).ok_or_else(|| Error::OracleFailure {
        node,
        reason: "R + σ²BᵀPB is not positive definite".into(),
    })
}

impl Rhs<'_> {
    /// Derivative with respect to time-to-go `τ = T - t`.
    fn eval(&self, y: &Node, node: usize) -> Result<Node> {
        let chol = rhat_factor(self.b, &y.p, self.r, self.sigma, node)?;
        let bt_p = self.b.transpose() * &y.p;
        let bt_s = self.b.transpose() * &y.s;
        let pkp = bt_p.transpose() * chol.solve(&bt_p);
        let ks = chol.solve(&bt_s);
        let pa = &y.p * self.a;
        let dp = self.q + &pa + pa.transpose() - pkp;
        let ds = -&self.q_eta + self.a.transpose() * &y.s - bt_p.transpose() * &ks;
        let dc = 0.5 * self.eta_q_eta - 0.5 * bt_s.dot(&ks) + 0.5 * (&y.p * &self.sigma_sigma_t).trace();
        Ok(Node { p: dp, s: ds, c: dc })
    }
}

fn axpy(y: &Node, h: f64, k: &Node) -> Node {
    Node { p: &y.p + &k.p * h, s: &y.s + &k.s * h, c: y.c + h * k.c }
}

/// Backward RK4 integration on `grid`, `substeps` sub-intervals per step,
/// symmetrizing `P` after every sub-step.
#[allow(clippy::too_many_arguments)]
pub fn solve_riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    diffusion: &DMatrix<f64>,
    sigma: f64,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    q_terminal: &DMatrix<f64>,
    eta: &DVector<f64>,
    grid: &TimeGrid,
    substeps: usize,
) -> Result<RiccatiSolution> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || diffusion.nrows() != n || q.shape() != (n, n)
        || q_terminal.shape() != (n, n) || eta.len() != n || r.shape() != (b.ncols(), b.ncols())
    {
        return Err(Error::Dimension("Riccati inputs have inconsistent shapes".into()));
    }
    if substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be at least 1".into()));
    }
    let rhs = Rhs {
        a,
        b,
        sigma_sigma_t: diffusion * diffusion.transpose(),
        sigma,
        q,
        r,
        q_eta: q * eta,
        eta_q_eta: eta.dot(&(q * eta)),
    };
    let n_steps = grid.n_steps();
    let h = grid.dt() / substeps as f64;
    let mut y = Node {
        p: q_terminal.clone(),
        s: -(q_terminal * eta),
        c: 0.5 * eta.dot(&(q_terminal * eta)),
    };
    rhat_factor(b, &y.p, r, sigma, n_steps)?;
    let mut nodes = vec![y.clone()];
    for k in (0..n_steps).rev() {
        for _ in 0..substeps {
            let k1 = rhs.eval(&y, k)?;
            let k2 = rhs.eval(&axpy(&y, 0.5 * h, &k1), k)?;
            let k3 = rhs.eval(&axpy(&y, 0.5 * h, &k2), k)?;
            let k4 = rhs.eval(&axpy(&y, h, &k3), k)?;
            y.p += (&k1.p + &k2.p * 2.0 + &k3.p * 2.0 + &k4.p) * (h / 6.0);
            y.s += (&k1.s + &k2.s * 2.0 + &k3.s * 2.0 + &k4.s) * (h / 6.0);
            y.c += (k1.c + 2.0 * k2.c + 2.0 * k3.c + k4.c) * (h / 6.0);
            y.p = (&y.p + y.p.transpose()) * 0.5;
        }
        if y.p.iter().any(|v| !v.is_finite()) || !y.c.is_finite() {
            return Err(Error::OracleFailure { node: k, reason: "non-finite solution".into() });
        }
        rhat_factor(b, &y.p, r, sigma, k)?;
        nodes.push(y.clone());
    }
    nodes.reverse();
    Ok(RiccatiSolution {
        grid: *grid,
        p: nodes.iter().map(|n| n.p.clone()).collect(),
        s: nodes.iter().map(|n| n.s.clone()).collect(),
        c: nodes.iter().map(|n| n.c).collect(),
        b: b.clone(),
        r: r.clone(),
        sigma,
    })
}

fn linear_parts(problem: &Problem) -> Result<&LinearSystem> {
    problem
        .model
        .linear_parts()
        .ok_or_else(|| Error::UnsupportedModel(format!("the Riccati oracle needs a linear model, got {}", problem.model.name())))
}

/// [`solve_riccati`] for a linear [`Problem`].
pub fn solve_problem(problem: &Problem, substeps: usize) -> Result<RiccatiSolution> {
    let lin = linear_parts(problem)?;
    let c: &CostSpec = &problem.cost;
    solve_riccati(
        &lin.a,
        &lin.b,
        &lin.diffusion,
        problem.model.sigma(),
        &c.q,
        &c.r,
        &c.q_terminal,
        &c.target,
        &problem.grid,
        substeps,
    )
}

impl RiccatiSolution {
    pub fn n_nodes(&self) -> usize {
        self.p.len()
    }

    /// `V(t_k, x) = ½xᵀP x + xᵀS + c`.
    pub fn value(&self, k: usize, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p[k] * x)) + x.dot(&self.s[k]) + self.c[k]
    }

    /// `Vx = P x + S`.
    pub fn gradient(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.p[k] * x + &self.s[k]
    }

    /// `u* = -(R + σ²BᵀPB)⁻¹Bᵀ(Px + S)`.
    pub fn control(&self, k: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        if k >= self.n_nodes() {
            return Err(Error::InvalidParameter(format!("time index {k} out of range")));
        }
        let chol = rhat_factor(&self.b, &self.p[k], &self.r, self.sigma, k).map_err(|_| Error::SingularControl { step: k })?;
        Ok(-chol.solve(&(self.b.transpose() * self.gradient(k, x))))
    }

    /// Largest `‖P - Pᵀ‖_∞` over the nodes.
    pub fn max_asymmetry(&self) -> f64 {
        self.p.iter().map(|p| (p - p.transpose()).amax()).fold(0.0, f64::max)
    }
}

/// [`RiccatiSolution::control`] as a free function.
pub fn riccati_control(sol: &RiccatiSolution, k: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
    sol.control(k, x)
}

/// Euler–Maruyama simulation of the linear model under the oracle feedback,
/// consuming noise in the same layout as the network rollout.
pub fn analytic_rollout(problem: &Problem, sol: &RiccatiSolution, noise: &NoisePath, x0: &DVector<f64>) -> Result<Trajectory> {
    let lin = linear_parts(problem)?;
    let grid = &problem.grid;
    if sol.grid != *grid {
        return Err(Error::Dimension("oracle solution was computed on a different grid".into()));
    }
    if noise.n_steps() != grid.n_steps() || noise.n_w() != lin.diffusion.ncols() {
        return Err(Error::Dimension("noise path does not match the grid and model".into()));
    }
    let sigma = problem.model.sigma();
    let mut x = x0.clone();
    let mut states = Vec::with_capacity(grid.n_steps() + 1);
    let mut controls = Vec::with_capacity(grid.n_steps());
    let mut values = Vec::with_capacity(grid.n_steps() + 1);
    for k in 0..grid.n_steps() {
        let u = sol.control(k, &x)?;
        let coeff = Coefficients {
            drift: &lin.a * &x,
            actuation: lin.b.clone(),
            diffusion: lin.diffusion.clone(),
        };
        let sn = StepNoise { step: k, dt: grid.dt(), dv: noise.dv(k), dw: noise.dw(k) };
        let next = fsde_step(&x, &coeff, &u, sigma, &sn)?;
        values.push(sol.value(k, &x));
        states.push(std::mem::replace(&mut x, next));
        controls.push(u);
    }
    values.push(sol.value(grid.n_steps(), &x));
    states.push(x);
    Ok(Trajectory { states, controls, values })
}

/// Supplies `Vxx = P(t)` and `A = Ṗx + Ṡ` from an oracle solution in place of
/// the network, with `V₀`, `Vx₀` read off the ansatz at `x0`.
pub struct OraclePredictor<'a> {
    sol: &'a RiccatiSolution,
    a: DMatrix<f64>,
    sigma_sigma_t: DMatrix<f64>,
    q: DMatrix<f64>,
    eta: DVector<f64>,
    x0: DVector<f64>,
}

impl<'a> OraclePredictor<'a> {
    pub fn new(problem: &Problem, sol: &'a RiccatiSolution, x0: &DVector<f64>) -> Result<Self> {
        let lin = linear_parts(problem)?;
        if sol.grid != problem.grid {
            return Err(Error::Dimension("oracle solution was computed on a different grid".into()));
        }
        Ok(Self {
            sol,
            a: lin.a.clone(),
            sigma_sigma_t: &lin.diffusion * lin.diffusion.transpose(),
            q: problem.cost.q.clone(),
            eta: problem.cost.target.clone(),
            x0: x0.clone(),
        })
    }
}

impl ValuePredictor for OraclePredictor<'_> {
    type Memory = ();
    type Record = ();

    fn initial_value(&self) -> (f64, DVector<f64>) {
        (self.sol.value(0, &self.x0), self.sol.gradient(0, &self.x0))
    }

    fn start(&self) {}

    fn predict(&self, step: usize, _t: f64, x: &DVector<f64>, _memory: &mut ()) -> Result<(NetworkOutput, ())> {
        let rhs = Rhs {
            a: &self.a,
            b: &self.sol.b,
            sigma_sigma_t: self.sigma_sigma_t.clone(),
            sigma: self.sol.sigma,
            q: &self.q,
            r: &self.sol.r,
            q_eta: &self.q * &self.eta,
            eta_q_eta: 0.0,
        };
        let node = Node { p: self.sol.p[step].clone(), s: self.sol.s[step].clone(), c: self.sol.c[step] };
        // `rhs` is d/dτ; time derivatives flip sign.
        let d = rhs.eval(&node, step)?;
        Ok((NetworkOutput { vxx: node.p, a: -(d.p * x + d.s) }, ()))
    }
}
