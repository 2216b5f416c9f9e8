use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, hp: AdamHyper) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Dimension(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, AdamHyper::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, AdamHyper::default()).unwrap();
        // m̂/√v̂ = 1, so the step is lr/(1 + ε).
        assert!((p[0] + 1e-3).abs() < 1e-11, "{}", p[0]);
    }

    #[test]
    fn repeated_steps_move_against_gradient_sign() {
        let mut p = vec![0.0, 0.0];
        let mut s = AdamState::new(2);
        let mut prev = p.clone();
        for _ in 0..2 {
            adam_step(&mut p, &[2.0, -0.5], &mut s, AdamHyper::default()).unwrap();
            assert!(p[0] < prev[0] && p[1] > prev[1]);
            prev = p.clone();
        }
        assert!(p[0] >= -2e-3);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(θ) = (θ - 3)², 500 steps at lr = 0.01.
        let mut p = vec![2.0];
        let mut s = AdamState::new(1);
        let hp = AdamHyper { lr: 0.01, ..AdamHyper::default() };
        for _ in 0..500 {
            let g = 2.0 * (p[0] - 3.0);
            adam_step(&mut p, &[g], &mut s, hp).unwrap();
        }
        assert!((p[0] - 3.0).abs() < 1e-3, "{}", p[0]);
    }
}
