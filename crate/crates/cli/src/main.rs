use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deep2fbsde::Error;
use deep2fbsde_cli::commands::{
    cmd_compare, cmd_eval, cmd_gradcheck, cmd_oracle, cmd_train, format_gradcheck, CHECKPOINT_FILE,
};
use deep2fbsde_cli::config::EvalMode;
use deep2fbsde_cli::ExperimentConfig;

/// Number of worker threads; defaults to all cores.
const THREADS_ENV: &str = "DEEP2FBSDE_THREADS";

#[derive(Parser)]
#[command(name = "deep2fbsde", version, about = "Deep 2FBSDE controller and Riccati oracle")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Train seed for train/gradcheck, eval seed for eval/oracle.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override a config entry, e.g. `--set training.iterations=500`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Evaluate a checkpoint even if its config digest differs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the network; writes checkpoint.json, loss.csv, config.toml.
    Train,
    /// Evaluate a checkpoint; writes trajectories.csv, stats.json, stats.csv.
    Eval {
        /// Defaults to <out>/checkpoint.json.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Solve the Riccati oracle (linear models) and roll it out on the eval noise.
    Oracle {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Also check this many randomized small linear instances.
        #[arg(long, default_value_t = 0)]
        random: usize,
    },
    /// Compare two stats.json files.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Write the summary as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Mode {
    SecondOrder,
    FirstOrderBaseline,
}

fn load_config(cli: &Cli, required: bool) -> Result<Option<ExperimentConfig>, Error> {
    let Some(path) = &cli.config else {
        return if required { Err(Error::Config("--config is required".into())) } else { Ok(None) };
    };
    let mut cfg = ExperimentConfig::load(path)?;
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    Ok(Some(cfg))
}

fn run(cli: Cli) -> Result<bool, Error> {
    match &cli.command {
        Command::Train => {
            let mut cfg = load_config(&cli, true)?.expect("required");
            if let Some(s) = cli.seed {
                cfg.training.seed = s;
            }
            let report = cmd_train(&cfg, &cli.out)?;
            println!(
                "trained {} iterations, final loss {:.6e}, checkpoint {}",
                report.outcome.losses.len(),
                report.outcome.losses.last().copied().unwrap_or(f64::NAN),
                report.checkpoint.display()
            );
        }
        Command::Eval { checkpoint, mode, trials } => {
            let mut cfg = load_config(&cli, true)?.expect("required");
            if let Some(s) = cli.seed {
                cfg.eval.seed = s;
            }
            if let Some(m) = mode {
                cfg.eval.mode = match m {
                    Mode::SecondOrder => EvalMode::SecondOrder,
                    Mode::FirstOrderBaseline => EvalMode::FirstOrderBaseline,
                };
            }
            if let Some(n) = trials {
                cfg.eval.n_trials = *n;
            }
            let ck = checkpoint.clone().unwrap_or_else(|| cli.out.join(CHECKPOINT_FILE));
            let out = cmd_eval(&cfg, &ck, &cli.out, cli.force)?;
            print_eval(&out.stats);
        }
        Command::Oracle { trials } => {
            let mut cfg = load_config(&cli, true)?.expect("required");
            if let Some(s) = cli.seed {
                cfg.eval.seed = s;
            }
            if let Some(n) = trials {
                cfg.eval.n_trials = *n;
            }
            let (sol, out) = cmd_oracle(&cfg, &cli.out)?;
            println!("V(0, x0) = {:.10e}", sol.value(0, cfg.problem()?.model.x0()));
            print_eval(&out.stats);
        }
        Command::Gradcheck { tolerance, random } => {
            let mut cfg = load_config(&cli, false)?;
            if let (Some(c), Some(s)) = (cfg.as_mut(), cli.seed) {
                c.training.seed = s;
            }
            let runs = cmd_gradcheck(cfg.as_ref(), *tolerance, *random)?;
            print!("{}", format_gradcheck(&runs));
            return Ok(runs.iter().all(|r| r.report.passed()));
        }
        Command::Compare { a, b, json } => {
            let report = cmd_compare(a, b, json.as_deref())?;
            print!("{}", report.table());
        }
    }
    Ok(true)
}

fn print_eval(stats: &deep2fbsde_cli::stats::TrajectoryStats) {
    println!("noise digest {}", stats.noise_digest);
    println!(
        "{} trials ({} failed): mean accumulated cost {:.6e} ± {:.2e} (se), mean terminal cost {:.6e}",
        stats.n_trials,
        stats.failed_trials.len(),
        stats.mean_accumulated_cost,
        stats.se_accumulated_cost,
        stats.mean_terminal_cost
    );
}

fn main() -> ExitCode {
    env_logger::Builder::new().filter_level(log::LevelFilter::Info).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
