use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deep2fbsde::net::NetworkParams;
use deep2fbsde_cli::commands::{cmd_compare, gradcheck_problem, CHECKPOINT_FILE, LOSS_FILE, STATS_JSON, TRAJECTORY_FILE};
use deep2fbsde_cli::stats::TrajectoryStats;
use deep2fbsde_cli::ExperimentConfig;
use tempfile::TempDir;

const SMALL: &str = r#"
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
dt = 0.02
horizon = 0.2

[network]
layers = [4]

[training]
iterations = 1
batch = 8
learning_rate = 0.01
seed = 5

[eval]
n_trials = 16
seed = 3
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_deep2fbsde"));
    c.env("DEEP2FBSDE_THREADS", "1");
    c
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, out: &Path, args: &[&str]) -> Output {
    let mut c = bin();
    c.arg("--config").arg(config).arg("--out").arg(out).args(args);
    c.output().unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstdout: {}\nstderr: {}", o.status.code(), String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    (header, lines.map(|l| l.split(',').map(str::to_string).collect()).collect())
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

#[test]
fn one_iteration_writes_checkpoint_and_one_loss_row() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("train");
    ok(&run(&cfg, &out, &["train"]));
    assert!(out.join(CHECKPOINT_FILE).exists());
    let (header, rows) = read_csv(&out.join(LOSS_FILE));
    assert_eq!(header, ["iteration", "loss", "wall_ms"]);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "0");
}

#[test]
fn retraining_reproduces_the_loss_column() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&run(&cfg, &a, &["train", "--set", "training.iterations=5"]));
    ok(&run(&cfg, &b, &["train", "--set", "training.iterations=5"]));
    let (_, ra) = read_csv(&a.join(LOSS_FILE));
    let (_, rb) = read_csv(&b.join(LOSS_FILE));
    let strip = |rows: Vec<Vec<String>>| rows.into_iter().map(|r| (r[0].clone(), r[1].clone())).collect::<Vec<_>>();
    assert_eq!(strip(ra), strip(rb));
    assert_eq!(std::fs::read(a.join(CHECKPOINT_FILE)).unwrap(), std::fs::read(b.join(CHECKPOINT_FILE)).unwrap());
}

#[test]
fn eval_exports_one_row_per_trial_and_node() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("run");
    ok(&run(&cfg, &out, &["train"]));
    ok(&run(&cfg, &out, &["eval"]));
    let (header, rows) = read_csv(&out.join(TRAJECTORY_FILE));
    assert_eq!(header, ["trial", "step", "time", "x_0", "u_0", "V", "running_cost"]);
    assert_eq!(rows.len(), 16 * 11);
}

#[test]
fn stats_match_a_recomputation_from_the_export() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("oracle");
    ok(&run(&cfg, &out, &["oracle"]));
    let stats = TrajectoryStats::load_json(&out.join(STATS_JSON)).unwrap();
    let (header, rows) = read_csv(&out.join(TRAJECTORY_FILE));
    let (step, x, u, cost) =
        (column(&header, &rows, "step"), column(&header, &rows, "x_0"), column(&header, &rows, "u_0"), column(&header, &rows, "running_cost"));
    let n = stats.n_steps;
    for k in [0, n / 2, n] {
        let xs: Vec<f64> = step.iter().zip(&x).filter(|(s, _)| **s as usize == k).map(|(_, v)| *v).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt();
        assert!((m - stats.state_mean[k][0]).abs() <= 1e-12 * m.abs().max(1.0));
        assert!((sd - stats.state_std[k][0]).abs() <= 1e-12 * sd.max(1.0));
    }
    let us: Vec<f64> = step.iter().zip(&u).filter(|(s, _)| **s == 0.0).map(|(_, v)| *v).collect();
    let um = us.iter().sum::<f64>() / us.len() as f64;
    assert!((um - stats.control_mean[0][0]).abs() <= 1e-12 * um.abs().max(1.0));
    // accumulated = Σ running (already times dt) + φ(x_N), φ = 40x²
    let mut total = 0.0;
    for trial in 0..stats.n_trials {
        let rows_t: Vec<usize> = (0..rows.len()).filter(|&i| rows[i][0] == trial.to_string()).collect();
        let running: f64 = rows_t.iter().map(|&i| cost[i]).sum();
        let xn = x[*rows_t.last().unwrap()];
        total += running + 40.0 * xn * xn;
    }
    let mean = total / stats.n_trials as f64;
    assert!((mean - stats.mean_accumulated_cost).abs() <= 1e-12 * mean.abs());
}

#[test]
fn baseline_equals_second_order_without_multiplicative_noise() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &SMALL.replace("sigma = 0.5", "sigma = 0.0"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&run(&cfg, &a, &["train"]));
    ok(&run(&cfg, &a, &["eval", "--mode", "second-order"]));
    ok(&run(&cfg, &b, &["eval", "--checkpoint", a.join(CHECKPOINT_FILE).to_str().unwrap(), "--mode", "first-order-baseline"]));
    let (ha, ra) = read_csv(&a.join(TRAJECTORY_FILE));
    let (hb, rb) = read_csv(&b.join(TRAJECTORY_FILE));
    assert_eq!(column(&ha, &ra, "u_0"), column(&hb, &rb, "u_0"));
    assert_eq!(column(&ha, &ra, "x_0"), column(&hb, &rb, "x_0"));
}

#[test]
fn checkpoint_from_another_config_needs_force() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("run");
    ok(&run(&cfg, &out, &["train"]));
    let changed = run(&cfg, &out, &["eval", "--set", "cost.r=3.0"]);
    assert_eq!(changed.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&changed.stderr).contains("digest"));
    ok(&run(&cfg, &out, &["eval", "--set", "cost.r=3.0", "--force"]));
    // eval settings are outside the digest
    ok(&run(&cfg, &out, &["eval", "--set", "eval.n_trials=4"]));
}

#[test]
fn eval_and_oracle_share_noise() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&run(&cfg, &a, &["train"]));
    ok(&run(&cfg, &a, &["eval"]));
    ok(&run(&cfg, &b, &["oracle"]));
    let sa = TrajectoryStats::load_json(&a.join(STATS_JSON)).unwrap();
    let sb = TrajectoryStats::load_json(&b.join(STATS_JSON)).unwrap();
    assert_eq!(sa.noise_digest, sb.noise_digest);
    let c = dir.path().join("c");
    ok(&run(&cfg, &c, &["oracle", "--seed", "4"]));
    assert_ne!(TrajectoryStats::load_json(&c.join(STATS_JSON)).unwrap().noise_digest, sa.noise_digest);
}

#[test]
fn noiseless_oracle_has_zero_spread() {
    let dir = TempDir::new().unwrap();
    let text = SMALL.replace("sigma = 0.5", "sigma = 0.0").replace("diffusion = 0.1", "diffusion = 0.0");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = dir.path().join("o");
    ok(&run(&cfg, &out, &["oracle"]));
    let stats = TrajectoryStats::load_json(&out.join(STATS_JSON)).unwrap();
    assert!(stats.state_std.iter().flatten().all(|s| *s == 0.0));
    assert!(stats.control_std.iter().flatten().all(|s| *s == 0.0));
}

#[test]
fn compare_against_itself_and_across_grids() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&run(&cfg, &a, &["oracle"]));
    let sa = a.join(STATS_JSON);
    let report = cmd_compare(&sa, &sa, Some(&dir.path().join("cmp.json"))).unwrap();
    assert_eq!(report.mean_accumulated_cost.delta, 0.0);
    assert!(report.max_abs_mean_gap.iter().all(|g| *g == 0.0));
    assert!(report.same_noise);
    assert!(dir.path().join("cmp.json").exists());

    ok(&run(&cfg, &b, &["oracle", "--set", "grid.dt=0.01"]));
    let o = bin().arg("compare").arg(&sa).arg(b.join(STATS_JSON)).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grids differ"));
}

#[test]
fn gradcheck_lists_each_group_once() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let o = run(&cfg, dir.path(), &["gradcheck", "--random", "2"]);
    ok(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().filter(|l| l.contains("PASS")).count(), 3);
    let config_block: Vec<&str> = text.lines().skip(1).take_while(|l| l.starts_with("  ")).collect();
    for name in ["lstm.0.w_ih", "lstm.0.w_hh", "lstm.0.bias", "head_vxx.weight", "head_vxx.bias", "head_a.weight", "head_a.bias", "psi", "zeta"] {
        assert_eq!(config_block.iter().filter(|l| l.split_whitespace().next() == Some(name)).count(), 1, "{name}");
    }
}

#[test]
fn corrupted_gradient_names_its_group() {
    let cfg = ExperimentConfig::parse(SMALL).unwrap();
    let problem = cfg.problem().unwrap();
    let params = cfg.init_params(1).unwrap();
    let noise = deep2fbsde::sde::sample_noise(&problem.grid, 1, 2, 0);
    let weights = cfg.training_config().weights;
    let report = gradcheck_problem(&problem, &params, &noise, &weights, 1e-4, |p: &NetworkParams, g: &mut [f64]| {
        let i = p.group("head_a.weight").offset;
        g[i] += 1e-3 * (1.0 + g[i].abs());
    })
    .unwrap();
    assert!(!report.passed());
    let failing: Vec<&str> = report.failures().map(|g| g.name.as_str()).collect();
    assert_eq!(failing, ["head_a.weight"]);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("train").output().unwrap().status.code(), Some(1));
    let missing = dir.path().join("missing.toml");
    assert_eq!(run(&missing, dir.path(), &["train"]).status.code(), Some(1));
    let typo = write_config(dir.path(), "typo.toml", &SMALL.replace("batch = 8", "bacth = 8"));
    let o = run(&typo, dir.path(), &["train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bacth"));
    // x grows by (1 + a·dt)^N, far past f64::MAX
    let blowup = SMALL.replace("a = 0.2", "a = 1000.0").replace("dt = 0.02", "dt = 0.1").replace("horizon = 0.2", "horizon = 20.0");
    let cfg = write_config(dir.path(), "blowup.toml", &blowup);
    assert_eq!(run(&cfg, &dir.path().join("b"), &["train"]).status.code(), Some(2));
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    assert_eq!(run(&cfg, &dir.path().join("ok"), &["train"]).status.code(), Some(0));
}
