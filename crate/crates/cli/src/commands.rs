//! The five subcommands as library functions, so tests and the acceptance
//! suite drive exactly what the binary runs.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use deep2fbsde::net::NetworkParams;
use deep2fbsde::riccati::{analytic_rollout, solve_problem, RiccatiSolution};
use deep2fbsde::sde::{noise_digest, rollout, sample_noise, NoisePath};
use deep2fbsde::training::gradcheck::{check_gradients, random_instance, FD_STEP};
use deep2fbsde::training::{batch_gradient, batch_loss, train_with, AdamState, GradcheckReport, LossWeights, TrainOutcome};
use deep2fbsde::{Error, Problem, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{EvalMode, ExperimentConfig};
use crate::stats::{fmt17, write_trajectories, TrajectoryStats, TrialRecord};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const TRAJECTORY_FILE: &str = "trajectories.csv";
pub const STATS_JSON: &str = "stats.json";
pub const STATS_CSV: &str = "stats.csv";
pub const RICCATI_FILE: &str = "riccati.csv";

fn ensure_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

pub struct TrainReport {
    pub outcome: TrainOutcome,
    pub checkpoint: PathBuf,
}

/// Trains from a fresh initialization and writes `checkpoint.json`,
/// `loss.csv` and the resolved `config.toml` into `out`. With
/// `checkpoint_every > 0`, intermediate checkpoints are written as
/// `checkpoint_<iteration>.json`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainReport> {
    ensure_dir(out)?;
    let problem = cfg.problem()?;
    let params = cfg.init_params(problem.model.n_x())?;
    let tc = cfg.training_config();
    let digest = cfg.digest();
    std::fs::write(out.join(CONFIG_FILE), cfg.to_toml())?;
    let outcome = train_with(&problem, params, AdamState::new(0), 0, &tc, |s| {
        let ck = Checkpoint::new(&digest, s.iteration, &s.params, &s.adam);
        if s.iteration == tc.iterations {
            ck.save(&out.join(CHECKPOINT_FILE))
        } else {
            ck.save(&out.join(format!("checkpoint_{:06}.json", s.iteration)))
        }
    })?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out.join(LOSS_FILE))?);
    writeln!(w, "iteration,loss,wall_ms")?;
    for (k, (l, ms)) in outcome.losses.iter().zip(&outcome.wall_ms).enumerate() {
        writeln!(w, "{k},{},{ms:.3}", fmt17(*l))?;
    }
    w.flush()?;
    Ok(TrainReport { outcome, checkpoint: out.join(CHECKPOINT_FILE) })
}

/// Statistics plus the per-trial records they were computed from.
pub struct EvalOutput {
    pub stats: TrajectoryStats,
    pub trials: Vec<TrialRecord>,
}

impl EvalOutput {
    pub fn write(&self, out: &Path, problem: &Problem) -> Result<()> {
        ensure_dir(out)?;
        write_trajectories(&out.join(TRAJECTORY_FILE), &self.trials, &problem.grid)?;
        self.stats.save_json(&out.join(STATS_JSON))?;
        self.stats.write_csv(&out.join(STATS_CSV))
    }
}

/// The evaluation noise: trial `i` is sample `i` of the eval seed, so every
/// command given the same seed sees the same paths.
pub fn eval_noise(problem: &Problem, n_trials: usize, seed: u64) -> Vec<NoisePath> {
    sample_noise(&problem.grid, problem.model.n_w(), n_trials, seed)
}

fn collect_trials(
    problem: &Problem,
    noise: &[NoisePath],
    run: impl Fn(&NoisePath) -> Result<deep2fbsde::sde::Trajectory> + Sync,
) -> Result<EvalOutput> {
    let results: Vec<Result<TrialRecord>> = noise
        .par_iter()
        .enumerate()
        .map(|(i, p)| run(p).map(|tr| TrialRecord::from_trajectory(i, tr, &problem.cost, problem.grid.dt())))
        .collect();
    let mut trials = Vec::with_capacity(noise.len());
    let mut failed = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => trials.push(t),
            Err(e) if e.is_numerical() => {
                log::warn!("trial {i} failed: {e}");
                failed.push(i);
            }
            Err(e) => return Err(e),
        }
    }
    if trials.is_empty() {
        return Err(Error::BatchFailure {
            failed: failed.len(),
            batch: noise.len(),
            threshold: 100.0,
            first: Box::new(Error::InvalidParameter("every evaluation trial failed".into())),
        });
    }
    let stats = TrajectoryStats::from_trials(&trials, failed, &problem.grid, noise_digest(noise))?;
    Ok(EvalOutput { stats, trials })
}

/// Rolls the trained network out on `n_trials` eval paths.
pub fn evaluate_network(
    problem: &Problem,
    params: &NetworkParams,
    mode: EvalMode,
    n_trials: usize,
    seed: u64,
) -> Result<EvalOutput> {
    let noise = eval_noise(problem, n_trials, seed);
    let x0 = problem.model.x0().clone();
    collect_trials(problem, &noise, |p| {
        rollout(&problem.model, &problem.cost, params, &problem.grid, p, &x0, mode.law()).map(|r| r.trajectory())
    })
}

/// Loads a checkpoint, refusing one trained under a different config
/// unless `force`.
pub fn load_checkpoint(cfg: &ExperimentConfig, path: &Path, force: bool) -> Result<NetworkParams> {
    let ck = Checkpoint::load(path)?;
    let digest = cfg.digest();
    if ck.config_digest != digest {
        if !force {
            return Err(Error::Checkpoint(format!(
                "{} was trained under config digest {}, current config has {digest} (use --force to evaluate anyway)",
                path.display(),
                ck.config_digest
            )));
        }
        log::warn!("config digest mismatch ignored (--force)");
    }
    let (params, _) = ck.restore()?;
    if params.n_x() != cfg.problem()?.model.n_x() {
        return Err(Error::Checkpoint(format!("checkpoint is for n_x = {}", params.n_x())));
    }
    Ok(params)
}

pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path, force: bool) -> Result<EvalOutput> {
    let problem = cfg.problem()?;
    let params = load_checkpoint(cfg, checkpoint, force)?;
    let output = evaluate_network(&problem, &params, cfg.eval.mode, cfg.eval.n_trials, cfg.eval.seed)?;
    output.write(out, &problem)?;
    Ok(output)
}

/// Riccati solution and the oracle-controlled rollouts on the eval paths.
pub fn evaluate_oracle(problem: &Problem, substeps: usize, n_trials: usize, seed: u64) -> Result<(RiccatiSolution, EvalOutput)> {
    let sol = solve_problem(problem, substeps)?;
    let noise = eval_noise(problem, n_trials, seed);
    let x0 = problem.model.x0().clone();
    let out = collect_trials(problem, &noise, |p| analytic_rollout(problem, &sol, p, &x0))?;
    Ok((sol, out))
}

/// `t,P_i_j (row-major),S_i,c`.
pub fn write_riccati_csv(path: &Path, sol: &RiccatiSolution) -> Result<()> {
    let n = sol.p[0].nrows();
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec!["t".to_string()];
    for i in 0..n {
        for j in 0..n {
            header.push(format!("P_{i}_{j}"));
        }
    }
    header.extend((0..n).map(|i| format!("S_{i}")));
    header.push("c".into());
    writeln!(w, "{}", header.join(","))?;
    for k in 0..sol.n_nodes() {
        let mut row = vec![fmt17(sol.grid.time(k))];
        for i in 0..n {
            for j in 0..n {
                row.push(fmt17(sol.p[k][(i, j)]));
            }
        }
        row.extend(sol.s[k].iter().map(|v| fmt17(*v)));
        row.push(fmt17(sol.c[k]));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_oracle(cfg: &ExperimentConfig, out: &Path) -> Result<(RiccatiSolution, EvalOutput)> {
    let problem = cfg.problem()?;
    let (sol, output) = evaluate_oracle(&problem, cfg.eval.oracle_substeps, cfg.eval.n_trials, cfg.eval.seed)?;
    output.write(out, &problem)?;
    write_riccati_csv(&out.join(RICCATI_FILE), &sol)?;
    Ok((sol, output))
}

/// Gradient check of the full training loss, with a hook that may tamper
/// with the analytic gradient (negative controls in tests).
pub fn gradcheck_problem(
    problem: &Problem,
    params: &NetworkParams,
    noise: &[NoisePath],
    weights: &LossWeights,
    tolerance: f64,
    tamper: impl Fn(&NetworkParams, &mut [f64]),
) -> Result<GradcheckReport> {
    let mut analytic = batch_gradient(problem, params, noise, weights, 1.0)?.grads;
    tamper(params, &mut analytic);
    check_gradients(params, &analytic, |p| batch_loss(problem, p, noise, weights, 1.0), FD_STEP, tolerance)
}

#[derive(Debug)]
pub struct GradcheckRun {
    pub label: String,
    pub report: GradcheckReport,
}

/// Checks the configured instance (batch and seed from `[training]`), or
/// `random` randomized small linear instances when `random > 0`.
pub fn cmd_gradcheck(cfg: Option<&ExperimentConfig>, tolerance: f64, random: usize) -> Result<Vec<GradcheckRun>> {
    let mut runs = Vec::new();
    if let Some(cfg) = cfg {
        let problem = cfg.problem()?;
        let params = cfg.init_params(problem.model.n_x())?;
        let noise = sample_noise(&problem.grid, problem.model.n_w(), cfg.training.batch, cfg.training.seed);
        let weights = cfg.training_config().weights;
        let report = gradcheck_problem(&problem, &params, &noise, &weights, tolerance, |_, _| {})?;
        runs.push(GradcheckRun { label: "config".into(), report });
    }
    for seed in 0..random as u64 {
        let inst = random_instance(seed)?;
        let report = gradcheck_problem(&inst.problem, &inst.params, &inst.noise, &inst.weights, tolerance, |_, _| {})?;
        runs.push(GradcheckRun { label: format!("random seed {seed}"), report });
    }
    if runs.is_empty() {
        return Err(Error::Config("gradcheck needs --config or --random N".into()));
    }
    Ok(runs)
}

pub fn format_gradcheck(runs: &[GradcheckRun]) -> String {
    let mut s = String::new();
    for run in runs {
        let r = &run.report;
        let _ = writeln!(
            s,
            "{}: {} (max rel err {:.3e}, tolerance {:.1e})",
            run.label,
            if r.passed() { "PASS" } else { "FAIL" },
            r.max_rel_err(),
            r.tolerance
        );
        for g in &r.groups {
            let _ = writeln!(
                s,
                "  {:<18} {:>6} entries  max rel err {:.3e}  {}",
                g.name,
                g.entries,
                g.max_rel_err,
                if g.passed { "ok" } else { "FAIL" }
            );
        }
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub a: f64,
    pub b: f64,
    /// `a - b`.
    pub delta: f64,
}

impl Pair {
    fn new(a: f64, b: f64) -> Self {
        Self { a, b, delta: a - b }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub mean_terminal_cost: Pair,
    pub mean_accumulated_cost: Pair,
    /// Standard errors of the two mean accumulated costs.
    pub se_accumulated_cost: Pair,
    pub terminal_state_mean: Vec<Pair>,
    pub terminal_state_std: Vec<Pair>,
    /// `mean_a(t) - mean_b(t)` per node and state channel.
    pub mean_gap: Vec<Vec<f64>>,
    /// `max_t |mean_a(t) - mean_b(t)|` per state channel.
    pub max_abs_mean_gap: Vec<f64>,
    pub same_noise: bool,
}

pub fn compare(a: &TrajectoryStats, b: &TrajectoryStats) -> Result<CompareReport> {
    if a.n_steps != b.n_steps || a.dt != b.dt || a.n_x() != b.n_x() {
        return Err(Error::Dimension(format!(
            "grids differ: {} steps of {} ({} states) vs {} steps of {} ({} states)",
            a.n_steps,
            a.dt,
            a.n_x(),
            b.n_steps,
            b.dt,
            b.n_x()
        )));
    }
    let n = a.n_steps;
    let mean_gap: Vec<Vec<f64>> =
        a.state_mean.iter().zip(&b.state_mean).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect()).collect();
    let max_abs_mean_gap = (0..a.n_x()).map(|i| mean_gap.iter().map(|g| g[i].abs()).fold(0.0, f64::max)).collect();
    Ok(CompareReport {
        mean_terminal_cost: Pair::new(a.mean_terminal_cost, b.mean_terminal_cost),
        mean_accumulated_cost: Pair::new(a.mean_accumulated_cost, b.mean_accumulated_cost),
        se_accumulated_cost: Pair::new(a.se_accumulated_cost, b.se_accumulated_cost),
        terminal_state_mean: (0..a.n_x()).map(|i| Pair::new(a.state_mean[n][i], b.state_mean[n][i])).collect(),
        terminal_state_std: (0..a.n_x()).map(|i| Pair::new(a.state_std[n][i], b.state_std[n][i])).collect(),
        mean_gap,
        max_abs_mean_gap,
        same_noise: a.noise_digest == b.noise_digest,
    })
}

impl CompareReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let row = |s: &mut String, name: &str, p: &Pair| {
            let _ = writeln!(s, "{name:<28} {:>14.6e} {:>14.6e} {:>14.6e}", p.a, p.b, p.delta);
        };
        let _ = writeln!(s, "{:<28} {:>14} {:>14} {:>14}", "", "a", "b", "a - b");
        row(&mut s, "mean terminal cost", &self.mean_terminal_cost);
        row(&mut s, "mean accumulated cost", &self.mean_accumulated_cost);
        row(&mut s, "se accumulated cost", &self.se_accumulated_cost);
        for (i, p) in self.terminal_state_mean.iter().enumerate() {
            row(&mut s, &format!("terminal x_{i} mean"), p);
        }
        for (i, p) in self.terminal_state_std.iter().enumerate() {
            row(&mut s, &format!("terminal x_{i} std"), p);
        }
        for (i, g) in self.max_abs_mean_gap.iter().enumerate() {
            let _ = writeln!(s, "{:<28} {:>14.6e}", format!("max |mean gap| x_{i}"), g);
        }
        let _ = writeln!(s, "common random numbers: {}", if self.same_noise { "yes" } else { "no" });
        s
    }
}

pub fn cmd_compare(a: &Path, b: &Path, json_out: Option<&Path>) -> Result<CompareReport> {
    let report = compare(&TrajectoryStats::load_json(a)?, &TrajectoryStats::load_json(b)?)?;
    if let Some(path) = json_out {
        let text = serde_json::to_string_pretty(&report).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        std::fs::write(path, text)?;
    }
    Ok(report)
}
