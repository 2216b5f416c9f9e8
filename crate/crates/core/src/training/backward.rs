//! Reverse pass through one unrolled rollout: terminal loss, the three
//! Euler–Maruyama updates, the control solve, the dynamics coefficients and
//! the recurrent network, latest step first.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{sample_loss, LossWeights};
use crate::error::{Error, Result};
use crate::net::{NetworkParams, StepCache};
use crate::problem::Problem;
use crate::sde::{rollout, ControlLaw, NoisePath, Rollout};

/// The forward record the reverse pass consumes.
pub type GradientTape = Rollout<StepCache>;

/// Forward pass of one sample, keeping everything needed for [`backward`].
pub fn record(problem: &Problem, params: &NetworkParams, noise: &NoisePath) -> Result<GradientTape> {
    rollout(
        &problem.model,
        &problem.cost,
        params,
        &problem.grid,
        noise,
        problem.model.x0(),
        ControlLaw::SecondOrder,
    )
}

/// Accumulates `scale · ∂(data loss)/∂params` of one sample into `grads` and
/// returns the sample's data loss (without the `λ‖θ‖²` term).
pub fn backward(
    problem: &Problem,
    params: &NetworkParams,
    noise: &NoisePath,
    tape: &GradientTape,
    weights: &LossWeights,
    scale: f64,
    grads: &mut [f64],
) -> f64 {
    let model = &problem.model;
    let cost = &problem.cost;
    let dt = problem.grid.dt();
    let sigma = model.sigma();
    let sc2 = tape.control_sigma * tape.control_sigma;
    let n = tape.steps.len();
    let n_x = model.n_x();

    let terminal = tape.terminal();
    let vxx_n = &tape.outputs[n].vxx;
    let phi = cost.terminal(&terminal.x);
    let phi_x = cost.terminal_grad(&terminal.x);
    let r1 = terminal.v - phi;
    let r2 = &terminal.vx - &phi_x;
    let r3 = vxx_n - cost.terminal_hessian();
    let loss = weights.c1 * r1 * r1
        + weights.c2 * r2.norm_squared()
        + weights.c3 * r3.norm_squared()
        + weights.c4 * phi * phi;

    // V enters V' with unit weight, so its adjoint is the same at every node.
    let v_bar = 2.0 * weights.c1 * r1 * scale;
    let phi_bar = (-2.0 * weights.c1 * r1 + 2.0 * weights.c4 * phi) * scale;
    let mut vx_bar = &r2 * (2.0 * weights.c2 * scale);
    let phi_x_bar = &r2 * (-2.0 * weights.c2 * scale);
    let vxx_bar_n = &r3 * (2.0 * weights.c3 * scale);
    let mut x_bar = &phi_x * phi_bar + cost.q_terminal.tr_mul(&phi_x_bar);

    let mut carry = params.backward_carry();
    x_bar += params.backward_step(&tape.records[n], &vxx_bar_n, &DVector::zeros(n_x), &mut carry, grads);

    for t in (0..n).rev() {
        let step = &tape.steps[t];
        let x = &tape.states[t].x;
        let vx = &tape.states[t].vx;
        let vxx = &tape.outputs[t].vxx;
        let g = &step.coeff.actuation;
        let f = &step.coeff.drift;
        let u = &step.control.u;
        let disp = &step.displacement;
        let s = dt + sigma * noise.dv(t);
        let dw = noise.dw(t);

        let vxx_vxb = vxx * &vx_bar;
        let disp_bar = &x_bar + vx * v_bar + &vxx_vxb;
        let f_bar = (&x_bar + &vxx_vxb) * dt;
        let a_bar = &vx_bar * dt;
        let mut vxx_bar = &vx_bar * (f * dt + disp).transpose();

        let quad_bar = v_bar * dt;
        let mut new_vx_bar = &vx_bar + disp * v_bar;
        let mut new_x_bar = x_bar.clone();
        if v_bar != 0.0 {
            new_x_bar.axpy(-v_bar * dt, &cost.running_grad(x), 1.0);
        }

        // disp = G u s + Σ dw
        let gu_bar = &disp_bar * s;
        let sigma_bar = DMatrix::from_fn(n_x, dw.len(), |i, k| disp_bar[i] * dw[k]);
        let gu = g * u;
        let mut g_bar = &gu_bar * u.transpose();
        let mut u_bar = g.tr_mul(&gu_bar);

        // quad = ½uᵀRu + σ_c²(Gu)ᵀVxx(Gu)
        if quad_bar != 0.0 {
            u_bar += (&cost.r * u) * quad_bar;
            if sc2 != 0.0 {
                let vxx_gu = vxx * &gu;
                u_bar += g.tr_mul(&vxx_gu) * (2.0 * sc2 * quad_bar);
                vxx_bar += &gu * gu.transpose() * (sc2 * quad_bar);
                g_bar += &vxx_gu * u.transpose() * (2.0 * sc2 * quad_bar);
            }
        }

        // R̂ u = -GᵀVx, R̂ = R + σ_c²GᵀVxxG (jitter held constant)
        let lam = step.control.solve(&u_bar);
        new_vx_bar -= g * &lam;
        g_bar -= vx * lam.transpose();
        if sc2 != 0.0 {
            let rhat_bar = -(&lam * u.transpose());
            let rhat_sym = &rhat_bar + rhat_bar.transpose();
            vxx_bar += g * &rhat_bar * g.transpose() * sc2;
            g_bar += vxx * g * rhat_sym * sc2;
        }

        new_x_bar += model.coefficient_vjp(problem.grid.time(t), x, &f_bar, &g_bar, &sigma_bar);
        new_x_bar += params.backward_step(&tape.records[t], &vxx_bar, &a_bar, &mut carry, grads);

        x_bar = new_x_bar;
        vx_bar = new_vx_bar;
    }

    let psi = params.group("psi").offset;
    grads[psi] += v_bar;
    let zeta = params.group("zeta").offset;
    for i in 0..n_x {
        grads[zeta + i] += vx_bar[i];
    }
    loss
}

/// Minibatch loss and gradient.
#[derive(Clone, Debug)]
pub struct BatchGradient {
    /// Mean data loss over surviving samples plus `λ‖θ‖²`.
    pub loss: f64,
    pub grads: Vec<f64>,
    /// Indices (within the batch) of samples that were dropped.
    pub failed: Vec<usize>,
}

struct SampleResult {
    loss: f64,
    grads: Vec<f64>,
}

fn sample_gradient(
    problem: &Problem,
    params: &NetworkParams,
    noise: &NoisePath,
    weights: &LossWeights,
    index: usize,
) -> Result<SampleResult> {
    let tape = record(problem, params, noise)?;
    let mut grads = vec![0.0; params.n_params()];
    let loss = backward(problem, params, noise, &tape, weights, 1.0, &mut grads);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { sample: index });
    }
    if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
        let name = params.groups().iter().find(|g| g.range().contains(&k)).map(|g| g.name.clone()).unwrap_or_default();
        return Err(Error::NonFiniteGradient { name });
    }
    Ok(SampleResult { loss, grads })
}

fn drop_policy(failures: &mut Vec<(usize, Error)>, batch: usize, max_failure_fraction: f64) -> Result<()> {
    if failures.is_empty() {
        return Ok(());
    }
    let failed = failures.len();
    if failed == batch || failed as f64 >= max_failure_fraction * batch as f64 {
        let (_, first) = failures.swap_remove(0);
        return Err(Error::BatchFailure {
            failed,
            batch,
            threshold: 100.0 * max_failure_fraction,
            first: Box::new(first),
        });
    }
    for (i, e) in failures.iter() {
        log::warn!("dropping sample {i} from the batch: {e}");
    }
    Ok(())
}

/// Forward and reverse passes over a batch, in parallel across samples and
/// reduced in sample order. Samples whose path fails are dropped while fewer
/// than `max_failure_fraction` of the batch fail.
pub fn batch_gradient(
    problem: &Problem,
    params: &NetworkParams,
    noise: &[NoisePath],
    weights: &LossWeights,
    max_failure_fraction: f64,
) -> Result<BatchGradient> {
    let results: Vec<Result<SampleResult>> = noise
        .par_iter()
        .enumerate()
        .map(|(i, p)| sample_gradient(problem, params, p, weights, i))
        .collect();
    let mut grads = vec![0.0; params.n_params()];
    let mut loss = 0.0;
    let mut survivors = 0usize;
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => {
                survivors += 1;
                loss += s.loss;
                for (a, b) in grads.iter_mut().zip(&s.grads) {
                    *a += b;
                }
            }
            Err(e) if e.is_numerical() => failures.push((i, e)),
            Err(e) => return Err(e),
        }
    }
    drop_policy(&mut failures, noise.len(), max_failure_fraction)?;
    let inv = 1.0 / survivors as f64;
    loss *= inv;
    for g in grads.iter_mut() {
        *g *= inv;
    }
    add_regularization(params, weights.lambda, &mut loss, &mut grads);
    Ok(BatchGradient { loss, grads, failed: failures.into_iter().map(|(i, _)| i).collect() })
}

/// Loss only (no reverse pass), with the same dropping policy.
pub fn batch_loss(
    problem: &Problem,
    params: &NetworkParams,
    noise: &[NoisePath],
    weights: &LossWeights,
    max_failure_fraction: f64,
) -> Result<f64> {
    let results: Vec<Result<f64>> = noise
        .par_iter()
        .map(|p| {
            let tape = record(problem, params, p)?;
            let t = tape.terminal();
            Ok(sample_loss(t.v, &t.vx, &tape.outputs[tape.steps.len()].vxx, &t.x, &problem.cost, weights))
        })
        .collect();
    let mut loss = 0.0;
    let mut survivors = 0usize;
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(l) if l.is_finite() => {
                survivors += 1;
                loss += l;
            }
            Ok(_) => failures.push((i, Error::NonFiniteLoss { sample: i })),
            Err(e) if e.is_numerical() => failures.push((i, e)),
            Err(e) => return Err(e),
        }
    }
    drop_policy(&mut failures, noise.len(), max_failure_fraction)?;
    Ok(loss / survivors as f64 + weights.lambda * params.theta_sq_norm())
}

/// Adds `λ‖θ‖²` and its gradient `2λθ` over the regularized groups.
pub fn add_regularization(params: &NetworkParams, lambda: f64, loss: &mut f64, grads: &mut [f64]) {
    if lambda == 0.0 {
        return;
    }
    *loss += lambda * params.theta_sq_norm();
    let data = params.as_slice();
    for g in params.groups().iter().filter(|g| g.regularized) {
        for k in g.range() {
            grads[k] += 2.0 * lambda * data[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::InitStrategy;
    use crate::test_support::scalar_problem;

    #[test]
    fn regularization_gradient_is_two_lambda_theta() {
        let p = NetworkParams::init(InitStrategy::Xavier, 4, 1, &[3], 0.1).unwrap();
        let mut grads = vec![0.0; p.n_params()];
        let mut loss = 0.0;
        add_regularization(&p, 0.25, &mut loss, &mut grads);
        assert!((loss - 0.25 * p.theta_sq_norm()).abs() < 1e-15);
        for g in p.groups() {
            for k in g.range() {
                let want = if g.regularized { 0.5 * p.as_slice()[k] } else { 0.0 };
                assert_eq!(grads[k], want, "{}", g.name);
            }
        }
    }

    #[test]
    fn only_regularization_when_data_weights_vanish() {
        let problem = scalar_problem(5, 0.02);
        let p = NetworkParams::init(InitStrategy::Xavier, 2, 1, &[3], 0.1).unwrap();
        let noise = crate::sde::sample_noise(&problem.grid, 1, 2, 8);
        let w = LossWeights { c1: 0.0, c2: 0.0, c3: 0.0, c4: 0.0, lambda: 0.3 };
        let b = batch_gradient(&problem, &p, &noise, &w, 0.1).unwrap();
        assert_eq!(b.loss, 0.3 * p.theta_sq_norm());
        assert_eq!(b.grads[p.group("psi").offset], 0.0);
        for g in p.groups() {
            for k in g.range() {
                let want = if g.regularized { 0.6 * p.as_slice()[k] } else { 0.0 };
                assert_eq!(b.grads[k], want, "{}", g.name);
            }
        }
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        // c4 only with zero-valued terminal cost: φ ≡ 0 whatever x_N is.
        let mut problem = scalar_problem(4, 0.05);
        problem.cost.q_terminal = DMatrix::zeros(1, 1);
        let p = NetworkParams::zeros(1, &[2]).unwrap();
        let noise = crate::sde::sample_noise(&problem.grid, 1, 2, 8);
        let w = LossWeights { c1: 0.0, c2: 0.0, c3: 0.0, c4: 1.0, lambda: 0.0 };
        let b = batch_gradient(&problem, &p, &noise, &w, 0.1).unwrap();
        assert_eq!(b.loss, 0.0);
        assert!(b.grads.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn batch_loss_agrees_with_batch_gradient() {
        let problem = scalar_problem(6, 0.02);
        let p = NetworkParams::init(InitStrategy::Xavier, 3, 1, &[3], 0.1).unwrap();
        let noise = crate::sde::sample_noise(&problem.grid, 1, 3, 1);
        let w = LossWeights::default();
        let a = batch_gradient(&problem, &p, &noise, &w, 0.1).unwrap().loss;
        let b = batch_loss(&problem, &p, &noise, &w, 0.1).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs());
    }
}
