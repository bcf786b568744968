//! Command-line interface.
//!
//! Subcommands: `simulate`, `estimate`, `optimize`, `sweep`, `compare`,
//! `verify-chain`, plus a `--print-default-config` generator. Exit codes:
//! 0 on success, 2 for usage or configuration problems, 1 for runtime
//! failures (including failed chain verification); errors go to stderr as
//! one JSON object.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::chain::{ChainError, Ledger};
use crate::convergence::{bound_coefficients, ConvergenceParams};
use crate::optimizer::{acs_solve_multistart, log_grid, Objective};
use crate::timecost::{h_coefficients, NetworkEnv};

use super::config::ExperimentConfig;
use super::run::{
    compare_csv, run_comparison, run_estimate, run_simulation, run_sweep, summary_json,
    sweep_csv, write_outputs,
};
use super::HarnessError;

#[derive(Parser, Debug)]
#[command(
    name = "fedchain",
    version,
    about = "Deterministic blockchain federated-learning simulator with top-k compressed updates"
)]
struct Cli {
    /// Experiment configuration file (key=value); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the configured mode (analytic|stochastic).
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Print the default configuration and exit.
    #[arg(long)]
    print_default_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment and write metrics, summary, ledger, and trace.
    Simulate,
    /// Run one probe round and print the estimated bound constants as JSON.
    Estimate,
    /// Solve for (k*, lambda*) from an environment file and estimated
    /// constants, without running any training.
    Optimize {
        /// Network environment file (key=value).
        #[arg(long)]
        env: PathBuf,
        /// Estimated constants as JSON (see `estimate`).
        #[arg(long)]
        params: PathBuf,
        /// Training time budget in seconds.
        #[arg(long)]
        budget: f64,
        /// Also write the full objective grid as CSV here.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        grid_size: usize,
        #[arg(long, default_value_t = 1e-4)]
        lambda_min: f64,
        #[arg(long, default_value_t = 100.0)]
        lambda_max: f64,
    },
    /// Run one arm per compression fraction and summarize final accuracy.
    Sweep {
        /// Comma-separated compression fractions of d, e.g. 0.001,0.01,0.03
        #[arg(long, value_delimiter = ',', required = true)]
        k_list: Vec<f64>,
    },
    /// Compare time-to-accuracy of the optimized arm against baselines.
    Compare {
        /// Target test accuracy in [0, 1].
        #[arg(long)]
        target_acc: f64,
    },
    /// Audit a ledger file: hashes, links, and full aggregation replay.
    VerifyChain {
        #[arg(long)]
        ledger: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = &cli.mode {
        cfg.mode = mode.parse().map_err(HarnessError::Config)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<(), HarnessError> {
    if cli.print_default_config {
        print!("{}", ExperimentConfig::default_text());
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(HarnessError::Config(
            "no subcommand given (try --help)".into(),
        ));
    };
    match command {
        Command::Simulate => {
            let cfg = load_config(cli)?;
            let run = run_simulation(&cfg)?;
            if let Some(dir) = &cli.out {
                write_outputs(&run, dir)?;
            }
            print!("{}", summary_json(&run)?);
            Ok(())
        }
        Command::Estimate => {
            let cfg = load_config(cli)?;
            let params = run_estimate(&cfg)?;
            let mut text = serde_json::to_string_pretty(&params)?;
            text.push('\n');
            print!("{text}");
            Ok(())
        }
        Command::Optimize {
            env,
            params,
            budget,
            grid,
            grid_size,
            lambda_min,
            lambda_max,
        } => {
            let env = NetworkEnv::from_env_file(env)?;
            let params: ConvergenceParams =
                serde_json::from_str(&std::fs::read_to_string(params)?)?;
            let coeffs = bound_coefficients(&params)?;
            let objective = Objective::new(h_coefficients(&env)?, coeffs, env.d, *budget)?
                .with_lambda_range(*lambda_min, *lambda_max)?;
            let sol = acs_solve_multistart(&objective, 1e-8, 100)?;
            if let Some(path) = grid {
                let ks = log_grid(objective.k_range.0, objective.k_range.1, *grid_size);
                let ls = log_grid(*lambda_min, *lambda_max, *grid_size);
                let mut csv = String::from("k,lambda,j_squared\n");
                for &k in &ks {
                    for &l in &ls {
                        csv.push_str(&format!("{k},{l},{}\n", objective.j_squared(k, l)));
                    }
                }
                std::fs::write(path, csv)?;
            }
            #[derive(serde::Serialize)]
            struct Out {
                k_star_real: f64,
                k_star: usize,
                lambda_star: f64,
                j_squared: f64,
                sweeps: usize,
            }
            let mut text = serde_json::to_string_pretty(&Out {
                k_star_real: sol.k_real,
                k_star: sol.k_int,
                lambda_star: sol.lambda,
                j_squared: sol.objective_int,
                sweeps: sol.sweeps,
            })?;
            text.push('\n');
            print!("{text}");
            Ok(())
        }
        Command::Sweep { k_list } => {
            let cfg = load_config(cli)?;
            let rows = run_sweep(&cfg, k_list, cli.out.as_deref())?;
            print!("{}", sweep_csv(&rows));
            Ok(())
        }
        Command::Compare { target_acc } => {
            let cfg = load_config(cli)?;
            let rows = run_comparison(&cfg, *target_acc)?;
            let csv = compare_csv(&rows);
            if let Some(dir) = &cli.out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("comparison.csv"), &csv)?;
            }
            print!("{csv}");
            Ok(())
        }
        Command::VerifyChain { ledger } => {
            let ledger = Ledger::read(ledger)?;
            let final_model = ledger.verify()?;
            #[derive(serde::Serialize)]
            struct Ok_ {
                ok: bool,
                height: u64,
                final_model_digest: String,
            }
            let digest = crate::chain::model_digest(&final_model);
            let mut text = serde_json::to_string_pretty(&Ok_ {
                ok: true,
                height: ledger.blocks.len() as u64,
                final_model_digest: digest.iter().map(|b| format!("{b:02x}")).collect(),
            })?;
            text.push('\n');
            print!("{text}");
            Ok(())
        }
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap uses exit code 2 for usage errors and 0 for --help/--version
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let payload = match &e {
                HarnessError::Chain(ChainError::Verify { height, field }) => serde_json::json!({
                    "error": e.to_string(),
                    "height": height,
                    "field": field,
                }),
                HarnessError::Chain(ChainError::Malformed { height, .. }) => serde_json::json!({
                    "error": e.to_string(),
                    "height": height,
                }),
                _ => serde_json::json!({ "error": e.to_string() }),
            };
            eprintln!("{payload}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    main_with_args(std::env::args_os())
}
