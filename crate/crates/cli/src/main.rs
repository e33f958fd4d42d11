//! `lhs-forge`: visibility sweeps, single-state certification and threshold
//! estimation from sweep output.
//!
//! Exit codes: 0 on success, 2 on invalid input, 3 when sweep records do not
//! bracket a threshold, 1 for anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, Subcommand, ValueEnum};
use lhs_core::states::{load_state_file, with_white_noise};
use lhs_core::sweep::{estimate_threshold, read_csv, run_sweep, ClassName, SweepConfig};
use lhs_core::trainer::{certify, OptimizerKind, TrainConfig};
use lhs_core::{isotropic3, werner, Error};

#[derive(Parser)]
#[command(name = "lhs-forge", version, about = "Fit local hidden-state models and locate steering thresholds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StateArg {
    Werner,
    Isotropic,
    Custom,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassArg {
    Pauli,
    Pvm,
    Povm,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Gd,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per (v, repeat) of a sweep config and write a CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trainings run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Train once and report whether an LHS model was found.
    Certify {
        #[arg(long, value_enum)]
        state: StateArg,
        /// Visibility; for custom states, the weight of the file state against white noise.
        #[arg(long)]
        v: f64,
        #[arg(long, value_enum)]
        class: ClassArg,
        /// POVM outcome count (default d^2).
        #[arg(long)]
        outcomes: Option<usize>,
        #[arg(long)]
        state_file: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        test_size: Option<usize>,
        #[arg(long, value_enum)]
        optimizer: Option<OptimizerArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Append `step= train_loss= lr= wall_time=` lines here.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write the final checkpoint here.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Estimate the critical visibility from a sweep CSV.
    Threshold {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::NoBracket(_)) => 3,
        Some(
            Error::InvalidDimension(_)
            | Error::Shape(_)
            | Error::Validation { .. }
            | Error::Range { .. }
            | Error::Capacity(_)
            | Error::InvalidOrder(_)
            | Error::Config(_)
            | Error::Parse(_),
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Sweep { config, out, jobs } => {
            let cfg = SweepConfig::load(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let records = run_sweep(&cfg, out.as_deref(), jobs.max(1))?;
            for r in &records {
                println!(
                    "v={:<6} seed={:<4} train_loss={:.3e} test_loss={:.3e} {}",
                    r.v, r.seed, r.train_loss, r.test_loss, r.verdict
                );
            }
            Ok(())
        }
        Command::Certify {
            state,
            v,
            class,
            outcomes,
            state_file,
            steps,
            hidden,
            order,
            batch,
            lr,
            tol,
            test_size,
            optimizer,
            seed,
            log,
            checkpoint,
            json,
        } => {
            let state = match (state, state_file) {
                (StateArg::Werner, None) => werner(v)?,
                (StateArg::Isotropic, None) => isotropic3(v)?,
                (StateArg::Custom, Some(path)) => with_white_noise(&load_state_file(path)?, v)?,
                (StateArg::Custom, None) => {
                    return Err(Error::Config("--state custom needs --state-file".into()).into())
                }
                (_, Some(_)) => {
                    return Err(Error::Config("--state-file is only used with --state custom".into()).into())
                }
            };
            let class_name = match class {
                ClassArg::Pauli => ClassName::Pauli,
                ClassArg::Pvm => ClassName::Pvm,
                ClassArg::Povm => ClassName::Povm,
            };
            let class = class_name.resolve(state.dim_a, outcomes)?;
            let mut cfg = TrainConfig::for_class(class);
            cfg.seed = seed;
            cfg.n_steps = steps.unwrap_or(cfg.n_steps);
            cfg.n_hidden = hidden.unwrap_or(cfg.n_hidden);
            cfg.order = order.unwrap_or(cfg.order);
            cfg.n_meas_per_step = batch.unwrap_or(cfg.n_meas_per_step);
            cfg.learning_rate = lr.unwrap_or(cfg.learning_rate);
            cfg.loss_tolerance = tol.unwrap_or(cfg.loss_tolerance);
            cfg.test_set_size = test_size.unwrap_or(cfg.test_set_size);
            cfg.log_every = cfg.log_every.min(cfg.n_steps.max(1));
            if let Some(o) = optimizer {
                cfg.optimizer = match o {
                    OptimizerArg::Adam => OptimizerKind::Adam,
                    OptimizerArg::Gd => OptimizerKind::Gd,
                };
            }
            cfg.log_path = log;
            cfg.checkpoint_path = checkpoint;
            let (verdict, report) = certify(&state, &cfg)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                println!(
                    "{verdict}: test_loss={:.3e} train_loss={:.3e} tol={:e} steps={} wall_time={:.1}s",
                    report.final_test_loss,
                    report.final_train_loss,
                    cfg.loss_tolerance,
                    report.steps_run,
                    report.wall_time
                );
            }
            Ok(())
        }
        Command::Threshold { input, eps } => {
            let (_, records) =
                read_csv(&input).with_context(|| format!("reading {}", input.display()))?;
            let t = estimate_threshold(&records, eps)?;
            println!("v*={} bracket=[{}, {}] eps={eps:e}", t.v_star, t.lo, t.hi);
            for viol in &t.violations {
                println!(
                    "monotonicity violation: loss {:.3e} at v={} > {:.3e} at v={}",
                    viol.loss_lo, viol.v_lo, viol.loss_hi, viol.v_hi
                );
            }
            Ok(())
        }
    }
}
