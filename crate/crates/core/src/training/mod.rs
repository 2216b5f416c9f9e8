//! Terminal-matching loss, reverse-mode gradients through the unrolled
//! rollout, Adam, and the outer training loop.

mod adam;
pub mod backward;
pub mod gradcheck;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use backward::{add_regularization, backward, batch_gradient, batch_loss, record, BatchGradient, GradientTape};
pub use gradcheck::{check_gradients, finite_difference, GradcheckReport, GroupCheck};

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::CostSpec;
use crate::error::{Error, Result};
use crate::net::NetworkParams;
use crate::problem::Problem;
use crate::sde::sample_noise_from;

/// Weights of the terminal residuals and of `‖θ‖²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { c1: 1.0, c2: 1.0, c3: 1.0, c4: 0.0, lambda: 0.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c1", self.c1), ("c2", self.c2), ("c3", self.c3), ("c4", self.c4), ("lambda", self.lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// `c1(V_N-φ)² + c2‖Vx_N-φx‖² + c3‖Vxx_N-φxx‖²_F + c4φ²` for one sample.
pub fn sample_loss(
    v_n: f64,
    vx_n: &DVector<f64>,
    vxx_n: &DMatrix<f64>,
    x_n: &DVector<f64>,
    cost: &CostSpec,
    w: &LossWeights,
) -> f64 {
    let phi = cost.terminal(x_n);
    let r1 = v_n - phi;
    w.c1 * r1 * r1
        + w.c2 * (vx_n - cost.terminal_grad(x_n)).norm_squared()
        + w.c3 * (vxx_n - cost.terminal_hessian()).norm_squared()
        + w.c4 * phi * phi
}

/// Terminal quantities of one rolled-out sample.
#[derive(Clone, Copy, Debug)]
pub struct TerminalSample<'a> {
    pub v: f64,
    pub vx: &'a DVector<f64>,
    pub vxx: &'a DMatrix<f64>,
    pub x: &'a DVector<f64>,
}

/// Batch mean of [`sample_loss`] plus `λ‖θ‖²` (ψ and ζ excluded).
pub fn compute_loss(samples: &[TerminalSample<'_>], cost: &CostSpec, w: &LossWeights, params: &NetworkParams) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let mut total = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let l = sample_loss(s.v, s.vx, s.vxx, s.x, cost, w);
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { sample: i });
        }
        total += l;
    }
    Ok(total / samples.len() as f64 + w.lambda * params.theta_sq_norm())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub iterations: usize,
    pub batch: usize,
    pub adam: AdamHyper,
    pub seed: u64,
    pub weights: LossWeights,
    /// Global-norm clip threshold; `None` disables clipping.
    pub clip: Option<f64>,
    /// Multiply the learning rate by `lr_decay_factor` every this many
    /// iterations; 0 disables decay.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub max_failure_fraction: f64,
    /// Snapshot cadence in iterations; 0 keeps only the final state.
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            batch: 64,
            adam: AdamHyper::default(),
            seed: 0,
            weights: LossWeights::default(),
            clip: Some(10.0),
            lr_decay_every: 0,
            lr_decay_factor: 0.5,
            max_failure_fraction: 0.1,
            checkpoint_every: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch == 0 {
            return Err(Error::InvalidParameter("iterations and batch must be at least 1".into()));
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning rate must be nonnegative, got {}", self.adam.lr)));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || !(self.adam.eps > 0.0) {
            return Err(Error::InvalidParameter("Adam betas must lie in [0, 1) and eps must be positive".into()));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::InvalidParameter(format!("clip must be positive, got {c}")));
            }
        }
        if !(self.max_failure_fraction > 0.0 && self.max_failure_fraction <= 1.0) {
            return Err(Error::InvalidParameter("max_failure_fraction must lie in (0, 1]".into()));
        }
        self.weights.validate()
    }

    pub fn learning_rate(&self, iteration: usize) -> f64 {
        if self.lr_decay_every == 0 {
            self.adam.lr
        } else {
            self.adam.lr * self.lr_decay_factor.powi((iteration / self.lr_decay_every) as i32)
        }
    }
}

/// Scales `grads` so its Euclidean norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}

/// Parameters and optimizer state after `iteration` completed updates.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub iteration: usize,
    pub params: NetworkParams,
    pub adam: AdamState,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub adam: AdamState,
    /// Loss of the batch drawn at each iteration, before that iteration's update.
    pub losses: Vec<f64>,
    /// Wall-clock milliseconds since the start of training, per iteration.
    pub wall_ms: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
}

/// Runs `config.iterations` iterations of sample → rollout → loss → backward → Adam.
pub fn train(problem: &Problem, params: NetworkParams, config: &TrainingConfig) -> Result<TrainOutcome> {
    let mut snapshots = Vec::new();
    let mut out = train_with(problem, params, AdamState::new(0), 0, config, |s| {
        snapshots.push(s.clone());
        Ok(())
    })?;
    out.snapshots = snapshots;
    Ok(out)
}

/// Training loop resuming at `start_iteration` with the given optimizer state
/// (an empty state is replaced by a fresh one). `on_snapshot` is called at the
/// checkpoint cadence and after the final iteration.
pub fn train_with(
    problem: &Problem,
    mut params: NetworkParams,
    adam: AdamState,
    start_iteration: usize,
    config: &TrainingConfig,
    mut on_snapshot: impl FnMut(&Snapshot) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if params.n_x() != problem.model.n_x() {
        return Err(Error::Dimension(format!(
            "network is for n_x={}, model has n_x={}",
            params.n_x(),
            problem.model.n_x()
        )));
    }
    let mut adam = if adam.m.is_empty() { AdamState::new(params.n_params()) } else { adam };
    let n_w = problem.model.n_w();
    let mut losses = Vec::with_capacity(config.iterations);
    let mut wall_ms = Vec::with_capacity(config.iterations);
    let clock = Instant::now();
    for k in start_iteration..start_iteration + config.iterations {
        let first = (k * config.batch) as u64;
        let noise = sample_noise_from(&problem.grid, n_w, first, config.batch, config.seed);
        let mut batch = batch_gradient(problem, &params, &noise, &config.weights, config.max_failure_fraction)
            .map_err(|e| {
                log::error!("iteration {k}: {e}");
                e
            })?;
        if let Some(max) = config.clip {
            clip_global_norm(&mut batch.grads, max);
        }
        let hp = AdamHyper { lr: config.learning_rate(k), ..config.adam };
        adam_step(params.as_mut_slice(), &batch.grads, &mut adam, hp)?;
        losses.push(batch.loss);
        wall_ms.push(clock.elapsed().as_secs_f64() * 1e3);
        let done = k + 1;
        if done % 100 == 0 {
            log::info!("iteration {done}: loss {:.6e}", batch.loss);
        }
        let last = done == start_iteration + config.iterations;
        if last || (config.checkpoint_every > 0 && done % config.checkpoint_every == 0) {
            on_snapshot(&Snapshot { iteration: done, params: params.clone(), adam: adam.clone() })?;
        }
    }
    Ok(TrainOutcome { params, adam, losses, wall_ms, snapshots: Vec::new() })
}
