//! Central finite-difference check of analytic gradients, grouped by
//! parameter block.

use serde::Serialize;

use super::{batch_gradient, batch_loss, LossWeights};
use crate::error::Result;
use crate::net::NetworkParams;
use crate::problem::Problem;
use crate::sde::NoisePath;

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, per unit of loss magnitude.
///
/// Central differences at step `h` carry roundoff of order `ε·|L|/h`
/// (about `2e-11·|L|` at `h = 1e-5`), so gradient entries much smaller than
/// `1e-6·|L|` cannot be resolved to four digits by the numeric side.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct GroupCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_err: f64,
    /// Index within the group of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    /// Denominator floor used for the relative errors.
    pub floor: f64,
    pub step: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GroupCheck> {
        self.groups.iter().filter(|g| !g.passed)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central differences of `loss` with respect to every parameter.
pub fn finite_difference(
    params: &NetworkParams,
    loss: impl Fn(&NetworkParams) -> Result<f64>,
    step: f64,
) -> Result<Vec<f64>> {
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(params.n_params());
    for k in 0..params.n_params() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + step;
        let up = loss(&probe)?;
        probe.as_mut_slice()[k] = orig - step;
        let down = loss(&probe)?;
        probe.as_mut_slice()[k] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Compares `analytic` against central differences of `loss`, one report
/// line per parameter group.
pub fn check_gradients(
    params: &NetworkParams,
    analytic: &[f64],
    loss: impl Fn(&NetworkParams) -> Result<f64>,
    step: f64,
    tolerance: f64,
) -> Result<GradcheckReport> {
    let floor = REL_FLOOR * loss(params)?.abs().max(1.0);
    let numeric = finite_difference(params, loss, step)?;
    let groups = params
        .groups()
        .iter()
        .map(|g| {
            let mut worst = (0.0, 0usize);
            for (i, k) in g.range().enumerate() {
                let e = relative_error(analytic[k], numeric[k], floor);
                if e > worst.0 || e.is_nan() {
                    worst = (e, i);
                }
            }
            let k = g.offset + worst.1;
            GroupCheck {
                name: g.name.clone(),
                entries: g.len(),
                max_rel_err: worst.0,
                worst_index: worst.1,
                analytic: analytic[k],
                numeric: numeric[k],
                passed: worst.0 <= tolerance,
            }
        })
        .collect();
    Ok(GradcheckReport { tolerance, floor, step, groups })
}

/// Gradient check of the full training loss on a fixed batch.
pub fn check_problem(
    problem: &Problem,
    params: &NetworkParams,
    noise: &[NoisePath],
    weights: &LossWeights,
    tolerance: f64,
) -> Result<GradcheckReport> {
    let analytic = batch_gradient(problem, params, noise, weights, 1.0)?.grads;
    check_gradients(params, &analytic, |p| batch_loss(problem, p, noise, weights, 1.0), FD_STEP, tolerance)
}

/// A small randomized linear problem for gradient checking: `n_x ≤ 3`,
/// `n_u ≤ 2`, `N ≤ 8`, one or two LSTM layers of width ≤ 4, batch of 2.
pub struct RandomInstance {
    pub problem: Problem,
    pub params: NetworkParams,
    pub noise: Vec<NoisePath>,
    pub weights: LossWeights,
}

pub fn random_instance(seed: u64) -> Result<RandomInstance> {
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::cost::CostSpec;
    use crate::dynamics::linear_model;
    use crate::net::InitStrategy;
    use crate::sde::{sample_noise, TimeGrid};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_x = rng.random_range(1..=3usize);
    let n_u = rng.random_range(1..=2usize);
    let n_w = rng.random_range(1..=3usize);
    let n_steps = rng.random_range(1..=8usize);
    let dt = rng.random_range(0.01..0.1);
    let mut sym_pd = |n: usize, lo: f64, hi: f64| {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.3..0.3));
        let d = DMatrix::from_fn(n, n, |i, j| if i == j { rng.random_range(lo..hi) } else { 0.0 });
        &m * m.transpose() + d
    };
    let q = sym_pd(n_x, 0.0, 1.0);
    let q_t = sym_pd(n_x, 0.5, 3.0);
    let r = sym_pd(n_u, 0.5, 2.0);
    let a = DMatrix::from_fn(n_x, n_x, |_, _| rng.random_range(-0.5..0.5));
    let b = DMatrix::from_fn(n_x, n_u, |_, _| rng.random_range(-1.0..1.0));
    let diffusion = DMatrix::from_fn(n_x, n_w, |_, _| rng.random_range(-0.3..0.3));
    let sigma = rng.random_range(0.0..0.6);
    let x0 = DVector::from_fn(n_x, |_, _| rng.random_range(-1.0..1.0));
    let target = DVector::from_fn(n_x, |_, _| rng.random_range(-0.5..0.5));
    let model = linear_model(a, b, diffusion, sigma, x0)?;
    let cost = CostSpec::new(q, r, q_t, target)?;
    let grid = TimeGrid::new(n_steps, dt)?;
    let problem = Problem::new(model, cost, grid)?;
    let hidden: Vec<usize> = (0..rng.random_range(1..=2usize)).map(|_| rng.random_range(1..=4usize)).collect();
    let params = NetworkParams::init(InitStrategy::Xavier, rng.random(), n_x, &hidden, 0.5)?;
    let noise = sample_noise(&grid, n_w, 2, rng.random());
    let weights = LossWeights {
        c1: rng.random_range(0.0..1.0),
        c2: rng.random_range(0.0..1.0),
        c3: rng.random_range(0.0..1.0),
        c4: rng.random_range(0.0..1.0),
        lambda: rng.random_range(0.0..0.01),
    };
    Ok(RandomInstance { problem, params, noise, weights })
}
