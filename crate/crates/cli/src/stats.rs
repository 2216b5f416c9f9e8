//! Per-trial trajectories, their summary statistics, and CSV/JSON export.

use std::io::Write;
use std::path::Path;

use deep2fbsde::cost::CostSpec;
use deep2fbsde::sde::{TimeGrid, Trajectory};
use deep2fbsde::{Error, Result};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// One evaluated rollout.
#[derive(Clone, Debug)]
pub struct TrialRecord {
    pub trial: usize,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub values: Vec<f64>,
    /// `(q(x_k) + ½u_kᵀRu_k)·dt` for `k < N`.
    pub running_cost: Vec<f64>,
    pub terminal_cost: f64,
    pub accumulated_cost: f64,
}

impl TrialRecord {
    pub fn from_trajectory(trial: usize, tr: Trajectory, cost: &CostSpec, dt: f64) -> Self {
        let running_cost: Vec<f64> =
            tr.controls.iter().zip(&tr.states).map(|(u, x)| (cost.running(x) + cost.control(u)) * dt).collect();
        let terminal_cost = cost.terminal(tr.states.last().expect("non-empty trajectory"));
        let accumulated_cost = running_cost.iter().sum::<f64>() + terminal_cost;
        Self { trial, states: tr.states, controls: tr.controls, values: tr.values, running_cost, terminal_cost, accumulated_cost }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub n_trials: usize,
    /// Trial indices whose rollout failed numerically; excluded below.
    pub failed_trials: Vec<usize>,
    pub n_steps: usize,
    pub dt: f64,
    pub time: Vec<f64>,
    /// `[N+1][n_x]`.
    pub state_mean: Vec<Vec<f64>>,
    /// Sample standard deviation (n−1 denominator), not a standard error.
    pub state_std: Vec<Vec<f64>>,
    /// `[N][n_u]`.
    pub control_mean: Vec<Vec<f64>>,
    pub control_std: Vec<Vec<f64>>,
    pub terminal_cost: Vec<f64>,
    pub accumulated_cost: Vec<f64>,
    pub mean_terminal_cost: f64,
    pub mean_accumulated_cost: f64,
    /// Standard error of `mean_accumulated_cost`.
    pub se_accumulated_cost: f64,
    pub noise_digest: String,
}

/// Mean and sample std (0 for a single sample). Works on deviations from
/// the first sample, so constant data gives exactly 0.
pub fn mean_std(xs: impl ExactSizeIterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.len();
    let Some(first) = xs.clone().next() else {
        return (f64::NAN, f64::NAN);
    };
    let shift = xs.clone().map(|x| x - first).sum::<f64>() / n as f64;
    let mean = first + shift;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - first - shift).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn channel_stats(rows: &[&[DVector<f64>]], len: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut means = Vec::with_capacity(len);
    let mut stds = Vec::with_capacity(len);
    for k in 0..len {
        let (m, s): (Vec<f64>, Vec<f64>) = (0..dim).map(|i| mean_std(rows.iter().map(|r| r[k][i]).collect::<Vec<_>>().into_iter())).unzip();
        means.push(m);
        stds.push(s);
    }
    (means, stds)
}

impl TrajectoryStats {
    pub fn from_trials(trials: &[TrialRecord], failed_trials: Vec<usize>, grid: &TimeGrid, noise_digest: String) -> Result<Self> {
        let first = trials.first().ok_or_else(|| Error::InvalidParameter("every trial failed; no statistics".into()))?;
        let n = grid.n_steps();
        let (n_x, n_u) = (first.states[0].len(), first.controls.first().map_or(0, |u| u.len()));
        let states: Vec<&[DVector<f64>]> = trials.iter().map(|t| t.states.as_slice()).collect();
        let controls: Vec<&[DVector<f64>]> = trials.iter().map(|t| t.controls.as_slice()).collect();
        let (state_mean, state_std) = channel_stats(&states, n + 1, n_x);
        let (control_mean, control_std) = channel_stats(&controls, n, n_u);
        let terminal_cost: Vec<f64> = trials.iter().map(|t| t.terminal_cost).collect();
        let accumulated_cost: Vec<f64> = trials.iter().map(|t| t.accumulated_cost).collect();
        let (mean_terminal_cost, _) = mean_std(terminal_cost.iter().copied());
        let (mean_accumulated_cost, sd) = mean_std(accumulated_cost.iter().copied());
        Ok(Self {
            n_trials: trials.len(),
            failed_trials,
            n_steps: n,
            dt: grid.dt(),
            time: (0..=n).map(|k| grid.time(k)).collect(),
            state_mean,
            state_std,
            control_mean,
            control_std,
            terminal_cost,
            accumulated_cost,
            mean_terminal_cost,
            mean_accumulated_cost,
            se_accumulated_cost: sd / (trials.len() as f64).sqrt(),
            noise_digest,
        })
    }

    pub fn n_x(&self) -> usize {
        self.state_mean[0].len()
    }

    pub fn n_u(&self) -> usize {
        self.control_mean.first().map_or(0, |u| u.len())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// `step,time,x_i_mean,x_i_std,…,u_j_mean,u_j_std`; control columns are
    /// empty at step N.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header = vec!["step".to_string(), "time".to_string()];
        for i in 0..self.n_x() {
            header.push(format!("x_{i}_mean"));
            header.push(format!("x_{i}_std"));
        }
        for j in 0..self.n_u() {
            header.push(format!("u_{j}_mean"));
            header.push(format!("u_{j}_std"));
        }
        writeln!(w, "{}", header.join(","))?;
        for k in 0..=self.n_steps {
            let mut row = vec![k.to_string(), fmt17(self.time[k])];
            for i in 0..self.n_x() {
                row.push(fmt17(self.state_mean[k][i]));
                row.push(fmt17(self.state_std[k][i]));
            }
            for j in 0..self.n_u() {
                if k < self.n_steps {
                    row.push(fmt17(self.control_mean[k][j]));
                    row.push(fmt17(self.control_std[k][j]));
                } else {
                    row.push(String::new());
                    row.push(String::new());
                }
            }
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-trial trajectory CSV: `trial,step,time,x_*,u_*,V,running_cost`, one
/// row per node. At step N the control and running cost are written as 0.
pub fn write_trajectories(path: &Path, trials: &[TrialRecord], grid: &TimeGrid) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let (n_x, n_u) = match trials.first() {
        Some(t) => (t.states[0].len(), t.controls.first().map_or(0, |u| u.len())),
        None => (0, 0),
    };
    let mut header = vec!["trial".to_string(), "step".into(), "time".into()];
    header.extend((0..n_x).map(|i| format!("x_{i}")));
    header.extend((0..n_u).map(|j| format!("u_{j}")));
    header.push("V".into());
    header.push("running_cost".into());
    writeln!(w, "{}", header.join(","))?;
    for t in trials {
        for k in 0..=grid.n_steps() {
            let mut row = vec![t.trial.to_string(), k.to_string(), fmt17(grid.time(k))];
            row.extend(t.states[k].iter().map(|v| fmt17(*v)));
            if k < grid.n_steps() {
                row.extend(t.controls[k].iter().map(|v| fmt17(*v)));
                row.push(fmt17(t.values[k]));
                row.push(fmt17(t.running_cost[k]));
            } else {
                row.extend((0..n_u).map(|_| fmt17(0.0)));
                row.push(fmt17(t.values[k]));
                row.push(fmt17(0.0));
            }
            writeln!(w, "{}", row.join(","))?;
        }
    }
    w.flush()?;
    Ok(())
}
