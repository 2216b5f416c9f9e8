//! Experiment configuration: a sectioned TOML file.
//!
//! ```toml
//! [dynamics]
//! model = "linear"          # linear | cartpole | quadcopter
//! a = 0.2                   # scalar s means s·I
//! b = 1.0
//! diffusion = 0.1
//! sigma = 0.5
//! x0 = [1.0]
//!
//! [cost]
//! q = 0.0                   # scalar, diagonal list, or full rows
//! r = 2.0
//! q_terminal = 80.0
//! target = 0.0
//!
//! [grid]
//! dt = 0.004
//! horizon = 1.0             # not given for the scalar system; 1.0 is our choice
//!
//! [network]
//! layers = [8, 8]
//! init = "xavier"
//!
//! [training]
//! iterations = 2000
//! batch = 64
//! learning_rate = 0.01
//!
//! [eval]
//! n_trials = 128
//! seed = 1
//! ```

use std::path::Path;

use deep2fbsde::cost::CostSpec;
use deep2fbsde::dynamics::{cartpole_model, linear_model, quadcopter_model, DynamicsModel};
use deep2fbsde::net::{InitStrategy, NetworkParams};
use deep2fbsde::riccati::DEFAULT_SUBSTEPS;
use deep2fbsde::sde::{ControlLaw, TimeGrid};
use deep2fbsde::training::{AdamHyper, LossWeights, TrainingConfig};
use deep2fbsde::{Error, Problem, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A matrix given as `s` (meaning `s·I`), a diagonal, or full rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixValue {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl MatrixValue {
    pub fn to_matrix(&self, rows: usize, cols: usize, name: &str) -> Result<DMatrix<f64>> {
        let square = |what: &str| {
            if rows == cols {
                Ok(())
            } else {
                Err(Error::Config(format!("`{name}` is {rows}×{cols}; a {what} needs a square matrix, give full rows")))
            }
        };
        match self {
            MatrixValue::Scalar(s) => {
                square("scalar")?;
                Ok(DMatrix::identity(rows, cols) * *s)
            }
            MatrixValue::Diagonal(d) => {
                square("diagonal")?;
                if d.len() != rows {
                    return Err(Error::Config(format!("`{name}` diagonal has {} entries, expected {rows}", d.len())));
                }
                Ok(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
            }
            MatrixValue::Full(r) => {
                if r.len() != rows || r.iter().any(|row| row.len() != cols) {
                    return Err(Error::Config(format!("`{name}` must have {rows} rows of {cols} entries")));
                }
                Ok(DMatrix::from_fn(rows, cols, |i, j| r[i][j]))
            }
        }
    }

    fn n_cols(&self) -> Option<usize> {
        match self {
            MatrixValue::Full(r) => r.first().map(|row| row.len()),
            _ => None,
        }
    }
}

/// A vector given as a broadcast scalar or a list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorValue {
    Scalar(f64),
    List(Vec<f64>),
}

impl VectorValue {
    pub fn to_vector(&self, n: usize, name: &str) -> Result<DVector<f64>> {
        match self {
            VectorValue::Scalar(s) => Ok(DVector::from_element(n, *s)),
            VectorValue::List(v) if v.len() == n => Ok(DVector::from_column_slice(v)),
            VectorValue::List(v) => Err(Error::Config(format!("`{name}` has {} entries, expected {n}", v.len()))),
        }
    }
}

fn zero_vector() -> VectorValue {
    VectorValue::Scalar(0.0)
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSection {
    pub a: MatrixValue,
    pub b: MatrixValue,
    pub diffusion: MatrixValue,
    pub sigma: f64,
    pub x0: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartpoleSection {
    pub mass_pole: f64,
    pub mass_cart: f64,
    pub length: f64,
    pub sigma: f64,
    /// Multiplier on the identity noise of the velocity channels.
    #[serde(default = "one")]
    pub noise_scale: f64,
    #[serde(default = "zero_vector")]
    pub x0: VectorValue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadcopterSection {
    pub mass: f64,
    pub ixx: f64,
    pub iyy: f64,
    pub izz: f64,
    /// Arm length `l`.
    pub arm: f64,
    /// Rotor drag-to-thrust coefficient `d`.
    pub drag: f64,
    pub sigma: f64,
    #[serde(default = "one")]
    pub noise_scale: f64,
    #[serde(default = "zero_vector")]
    pub x0: VectorValue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum DynamicsSection {
    Linear(LinearSection),
    Cartpole(CartpoleSection),
    Quadcopter(QuadcopterSection),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub q: MatrixValue,
    pub r: MatrixValue,
    pub q_terminal: MatrixValue,
    #[serde(default = "zero_vector")]
    pub target: VectorValue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dt: f64,
    pub horizon: f64,
}

fn default_layers() -> Vec<usize> {
    vec![8, 8]
}

fn default_init_scale() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default = "default_layers")]
    pub layers: Vec<usize>,
    #[serde(default)]
    pub init: InitStrategy,
    /// Std of the `V₀` and `Vx₀` initial draws.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self { layers: default_layers(), init: InitStrategy::default(), init_scale: default_init_scale() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub iterations: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub lambda: f64,
    pub seed: u64,
    /// Global-norm gradient clip; 0 disables.
    pub clip: f64,
    /// Halve (by `lr_decay_factor`) every this many iterations; 0 disables.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    /// Write a checkpoint every this many iterations; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub max_failure_fraction: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        let w = LossWeights::default();
        Self {
            iterations: t.iterations,
            batch: t.batch,
            learning_rate: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
            c1: w.c1,
            c2: w.c2,
            c3: w.c3,
            c4: w.c4,
            lambda: w.lambda,
            seed: t.seed,
            clip: t.clip.unwrap_or(0.0),
            lr_decay_every: t.lr_decay_every,
            lr_decay_factor: t.lr_decay_factor,
            checkpoint_every: t.checkpoint_every,
            max_failure_fraction: t.max_failure_fraction,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    SecondOrder,
    FirstOrderBaseline,
}

impl EvalMode {
    pub fn law(self) -> ControlLaw {
        match self {
            EvalMode::SecondOrder => ControlLaw::SecondOrder,
            EvalMode::FirstOrderBaseline => ControlLaw::FirstOrderBaseline,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n_trials: usize,
    pub seed: u64,
    pub mode: EvalMode,
    /// RK4 sub-steps per grid step for the Riccati oracle.
    pub oracle_substeps: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { n_trials: 128, seed: 1, mode: EvalMode::SecondOrder, oracle_substeps: DEFAULT_SUBSTEPS }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dynamics: DynamicsSection,
    pub cost: CostSection,
    pub grid: GridSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies one `section.key=value` override; the value is parsed as a
    /// TOML value (`1e-3`, `[8, 8]`, `"xavier"`), falling back to a string.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (path, raw) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form section.key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override key `{path}` must be section.key")))?;
        let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.trim().to_string()),
        };
        let mut doc = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let table = doc
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{section}` is not a section")))?;
        table.insert(key.to_string(), value);
        let text = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
        *self = Self::parse(&text).map_err(|e| Error::Config(format!("override `{spec}`: {e}")))?;
        Ok(())
    }

    /// SHA-256 over the canonical form of everything but `[eval]`, which
    /// binds a checkpoint to the problem and training setup that produced it.
    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct Bound<'a> {
            dynamics: &'a DynamicsSection,
            cost: &'a CostSection,
            grid: &'a GridSection,
            network: &'a NetworkSection,
            training: &'a TrainingSection,
        }
        let text = toml::to_string(&Bound {
            dynamics: &self.dynamics,
            cost: &self.cost,
            grid: &self.grid,
            network: &self.network,
            training: &self.training,
        })
        .expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let problem = self.problem()?;
        if self.network.layers.is_empty() || self.network.layers.contains(&0) {
            return Err(Error::Config("network.layers must be a non-empty list of positive sizes".into()));
        }
        if !(self.network.init_scale >= 0.0) {
            return Err(Error::Config("network.init_scale must be nonnegative".into()));
        }
        if self.eval.n_trials == 0 || self.eval.oracle_substeps == 0 {
            return Err(Error::Config("eval.n_trials and eval.oracle_substeps must be positive".into()));
        }
        self.training_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        drop(problem);
        Ok(())
    }

    pub fn model(&self) -> Result<DynamicsModel> {
        let model = match &self.dynamics {
            DynamicsSection::Linear(l) => {
                let n = l.x0.len();
                let m = l.b.n_cols().unwrap_or(n);
                let w = l.diffusion.n_cols().unwrap_or(n);
                linear_model(
                    l.a.to_matrix(n, n, "dynamics.a")?,
                    l.b.to_matrix(n, m, "dynamics.b")?,
                    l.diffusion.to_matrix(n, w, "dynamics.diffusion")?,
                    l.sigma,
                    DVector::from_column_slice(&l.x0),
                )?
            }
            DynamicsSection::Cartpole(c) => {
                let m = cartpole_model(c.mass_pole, c.mass_cart, c.length, c.sigma)?.with_noise_scale(c.noise_scale)?;
                let x0 = c.x0.to_vector(m.n_x(), "dynamics.x0")?;
                m.with_x0(x0)?
            }
            DynamicsSection::Quadcopter(q) => {
                let m = quadcopter_model(q.mass, q.ixx, q.iyy, q.izz, q.arm, q.drag, q.sigma)?.with_noise_scale(q.noise_scale)?;
                let x0 = q.x0.to_vector(m.n_x(), "dynamics.x0")?;
                m.with_x0(x0)?
            }
        };
        Ok(model)
    }

    pub fn problem(&self) -> Result<Problem> {
        let model = self.model().map_err(config_error)?;
        let (n, m) = (model.n_x(), model.n_u());
        let cost = CostSpec::new(
            self.cost.q.to_matrix(n, n, "cost.q")?,
            self.cost.r.to_matrix(m, m, "cost.r")?,
            self.cost.q_terminal.to_matrix(n, n, "cost.q_terminal")?,
            self.cost.target.to_vector(n, "cost.target")?,
        )
        .map_err(config_error)?;
        let grid = TimeGrid::from_horizon(self.grid.dt, self.grid.horizon).map_err(config_error)?;
        Problem::new(model, cost, grid).map_err(config_error)
    }

    pub fn training_config(&self) -> TrainingConfig {
        let t = &self.training;
        TrainingConfig {
            iterations: t.iterations,
            batch: t.batch,
            adam: AdamHyper { lr: t.learning_rate, beta1: t.beta1, beta2: t.beta2, eps: t.eps },
            seed: t.seed,
            weights: LossWeights { c1: t.c1, c2: t.c2, c3: t.c3, c4: t.c4, lambda: t.lambda },
            clip: (t.clip > 0.0).then_some(t.clip),
            lr_decay_every: t.lr_decay_every,
            lr_decay_factor: t.lr_decay_factor,
            max_failure_fraction: t.max_failure_fraction,
            checkpoint_every: t.checkpoint_every,
        }
    }

    /// Freshly initialized network for this problem, seeded by the train seed.
    pub fn init_params(&self, n_x: usize) -> Result<NetworkParams> {
        NetworkParams::init(self.network.init, self.training.seed, n_x, &self.network.layers, self.network.init_scale)
    }
}

fn config_error(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"
[dynamics]
model = "linear"
a = 0.2
b = 1.0
diffusion = 0.1
sigma = 0.5
x0 = [1.0]

[cost]
q = 0.0
r = 2.0
q_terminal = 80.0

[grid]
dt = 0.004
horizon = 1.0
"#;

    #[test]
    fn scalar_config_builds_the_problem() {
        let cfg = ExperimentConfig::parse(SCALAR).unwrap();
        let p = cfg.problem().unwrap();
        assert_eq!(p.grid.n_steps(), 250);
        assert_eq!(p.model.sigma(), 0.5);
        assert_eq!(cfg.network.layers, vec![8, 8]);
        assert_eq!(cfg.eval.n_trials, 128);
    }

    #[test]
    fn round_trip_is_lossless() {
        let cfg = ExperimentConfig::parse(SCALAR).unwrap();
        let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.digest(), again.digest());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = SCALAR.replace("horizon = 1.0", "horizon = 1.0\nsteps = 3");
        assert!(matches!(ExperimentConfig::parse(&bad), Err(Error::Config(_))));
        let bad = SCALAR.replace("sigma = 0.5", "sigma = 0.5\nmass = 1.0");
        assert!(ExperimentConfig::parse(&bad).is_err());
        let bad = format!("{SCALAR}\n[extra]\nx = 1\n");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn overrides_parse_as_toml_values() {
        let mut cfg = ExperimentConfig::parse(SCALAR).unwrap();
        cfg.apply_override("training.learning_rate=3e-3").unwrap();
        cfg.apply_override("network.layers=[4]").unwrap();
        cfg.apply_override("network.init=zeros").unwrap();
        cfg.apply_override("eval.mode=first_order_baseline").unwrap();
        assert_eq!(cfg.training.learning_rate, 3e-3);
        assert_eq!(cfg.network.layers, vec![4]);
        assert_eq!(cfg.network.init, InitStrategy::Zeros);
        assert_eq!(cfg.eval.mode, EvalMode::FirstOrderBaseline);
        assert!(cfg.apply_override("training.nope=1").is_err());
        assert!(cfg.apply_override("novalue").is_err());
    }

    #[test]
    fn digest_ignores_eval_only() {
        let cfg = ExperimentConfig::parse(SCALAR).unwrap();
        let mut e = cfg.clone();
        e.eval.seed = 99;
        assert_eq!(cfg.digest(), e.digest());
        let mut t = cfg.clone();
        t.training.seed = 99;
        assert_ne!(cfg.digest(), t.digest());
    }

    #[test]
    fn matrix_forms() {
        assert_eq!(MatrixValue::Scalar(2.0).to_matrix(2, 2, "m").unwrap(), DMatrix::identity(2, 2) * 2.0);
        assert_eq!(
            MatrixValue::Diagonal(vec![1.0, 3.0]).to_matrix(2, 2, "m").unwrap(),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0])
        );
        assert!(MatrixValue::Scalar(1.0).to_matrix(2, 1, "m").is_err());
        assert!(MatrixValue::Full(vec![vec![1.0]]).to_matrix(2, 1, "m").is_err());
    }

    #[test]
    fn invalid_physics_is_a_config_error() {
        let bad = SCALAR.replace("sigma = 0.5", "sigma = -0.5");
        assert!(matches!(ExperimentConfig::parse(&bad), Err(Error::Config(_))));
        let bad = SCALAR.replace("r = 2.0", "r = -2.0");
        assert!(matches!(ExperimentConfig::parse(&bad), Err(Error::Config(_))));
    }
}
