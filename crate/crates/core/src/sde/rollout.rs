use nalgebra::DVector;

use super::{shared_displacement, value_quadratic, NoisePath, PathState, StepNoise, TimeGrid};
use crate::control::{solve_control, ControlSolution};
use crate::cost::CostSpec;
use crate::dynamics::{Coefficients, DynamicsModel};
use crate::error::{Error, Result};
use crate::net::NetworkOutput;

/// Anything that can supply `(V₀, Vx,₀)` and per-step `(Vxx, A)` predictions.
pub trait ValuePredictor: Sync {
    /// Recurrent state carried across steps of one rollout.
    type Memory;
    /// Per-step forward record kept for a reverse pass.
    type Record: Send;

    fn initial_value(&self) -> (f64, DVector<f64>);
    fn start(&self) -> Self::Memory;
    fn predict(&self, step: usize, t: f64, x: &DVector<f64>, memory: &mut Self::Memory) -> Result<(NetworkOutput, Self::Record)>;
}

/// How `u*` is computed from the predicted `(Vx, Vxx)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ControlLaw {
    /// `R̂ = R + σ²GᵀVxxG` with the model's σ.
    #[default]
    SecondOrder,
    /// The control law ignores control-multiplicative noise (σ = 0 in `R̂`
    /// and in the value drift) while the simulation still uses the true σ.
    FirstOrderBaseline,
}

impl ControlLaw {
    pub fn control_sigma(self, sigma: f64) -> f64 {
        match self {
            ControlLaw::SecondOrder => sigma,
            ControlLaw::FirstOrderBaseline => 0.0,
        }
    }
}

/// Quantities from step `t → t+1` needed by the reverse pass.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub coeff: Coefficients,
    pub control: ControlSolution,
    /// `q(x_t)`.
    pub running_cost: f64,
    /// `G u (dt + σ dv) + Σ dw`.
    pub displacement: DVector<f64>,
}

/// One forward pass of the coupled system.
#[derive(Clone, Debug)]
pub struct Rollout<R> {
    /// `N + 1` nodes.
    pub states: Vec<PathState>,
    /// `N + 1` network outputs; only `Vxx` is used at the last node.
    pub outputs: Vec<NetworkOutput>,
    /// `N` steps.
    pub steps: Vec<StepRecord>,
    /// `N + 1` predictor records.
    pub records: Vec<R>,
    pub control_sigma: f64,
}

/// States, controls and values of one simulated path.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub values: Vec<f64>,
}

impl Trajectory {
    /// `Σ (q + ½uᵀRu) dt + φ(x_N)`.
    pub fn accumulated_cost(&self, cost: &CostSpec, dt: f64) -> f64 {
        let running: f64 = self
            .controls
            .iter()
            .zip(&self.states)
            .map(|(u, x)| (cost.running(x) + cost.control(u)) * dt)
            .sum();
        running + cost.terminal(self.states.last().expect("non-empty trajectory"))
    }
}

impl<R> Rollout<R> {
    pub fn controls(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.steps.iter().map(|s| &s.control.u)
    }

    pub fn terminal(&self) -> &PathState {
        self.states.last().expect("rollout has at least one node")
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            states: self.states.iter().map(|s| s.x.clone()).collect(),
            controls: self.controls().cloned().collect(),
            values: self.states.iter().map(|s| s.v).collect(),
        }
    }
}

/// Forward-propagates `x`, `V`, `Vx` over the grid. At each step the
/// predictor is queried at `x_t`, the control is solved once, and the three
/// updates consume the same increments.
#[allow(clippy::too_many_arguments)]
pub fn rollout<P: ValuePredictor>(
    model: &DynamicsModel,
    cost: &CostSpec,
    predictor: &P,
    grid: &TimeGrid,
    noise: &NoisePath,
    x0: &DVector<f64>,
    law: ControlLaw,
) -> Result<Rollout<P::Record>> {
    let n = grid.n_steps();
    let dt = grid.dt();
    if noise.n_steps() != n || noise.n_w() != model.n_w() {
        return Err(Error::Dimension(format!(
            "noise path is {}x{}, grid/model need {}x{}",
            noise.n_steps(),
            noise.n_w(),
            n,
            model.n_w()
        )));
    }
    if cost.n_x() != model.n_x() || cost.n_u() != model.n_u() || x0.len() != model.n_x() {
        return Err(Error::Dimension("cost, model and x0 dimensions disagree".into()));
    }
    let sigma = model.sigma();
    let sigma_c = law.control_sigma(sigma);
    let (v0, vx0) = predictor.initial_value();
    if vx0.len() != model.n_x() {
        return Err(Error::Dimension("predictor gradient does not match the state".into()));
    }
    let mut state = PathState::new(x0.clone(), v0, vx0);
    state.check_finite(0)?;

    let mut memory = predictor.start();
    let mut states = Vec::with_capacity(n + 1);
    let mut outputs = Vec::with_capacity(n + 1);
    let mut steps = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n + 1);

    for t in 0..n {
        let time = grid.time(t);
        let coeff = model.eval(time, &state.x).map_err(|e| e.at_step(t))?;
        let (out, rec) = predictor.predict(t, time, &state.x, &mut memory)?;
        let control = solve_control(&state.vx, &out.vxx, &coeff.actuation, &cost.r, sigma_c).map_err(|e| e.at_step(t))?;
        let u = &control.u;
        let step_noise = StepNoise { step: t, dt, dv: noise.dv(t), dw: noise.dw(t) };
        let disp = shared_displacement(&coeff, u, sigma, &step_noise);
        let q = cost.running(&state.x);
        let quad = value_quadratic(u, &coeff.actuation, &out.vxx, &cost.r, sigma_c);

        let x_next = &state.x + &coeff.drift * dt + &disp;
        let v_next = state.v - (q - quad) * dt + state.vx.dot(&disp);
        let vx_next = &state.vx + (&out.a + &out.vxx * &coeff.drift) * dt + &out.vxx * &disp;
        let next = PathState::new(x_next, v_next, vx_next);
        next.check_finite(t + 1)?;

        states.push(std::mem::replace(&mut state, next));
        outputs.push(out);
        records.push(rec);
        steps.push(StepRecord { coeff, control, running_cost: q, displacement: disp });
    }
    let (out, rec) = predictor.predict(n, grid.horizon(), &state.x, &mut memory)?;
    states.push(state);
    outputs.push(out);
    records.push(rec);
    Ok(Rollout { states, outputs, steps, records, control_sigma: sigma_c })
}
