//! `daekit` command-line front end.
//!
//! Exit codes: 0 success, 1 validation or solver failure, 2 index too high,
//! 3 missing or malformed input, 4 escape detected, 5 constraint violation,
//! 64 usage error.

mod commands;
mod error;
mod expr;
mod input;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{ClassifyArgs, EosArg, GasArgs, RunConfig};
use error::code;

#[derive(Parser, Debug)]
#[command(name = "daekit", version, about = "Decompose singular pencils, simulate and classify semilinear DAEs")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Rank decision tolerance.
    #[arg(long, global = true, default_value_t = 1e-10)]
    tol_rank: f64,
    /// Newton tolerance for the algebraic part.
    #[arg(long, global = true)]
    tol_newton: Option<f64>,
    /// Bound on the monitored constraint residuals.
    #[arg(long, global = true, default_value_t = 1e-8)]
    tol_constraint: f64,
    #[arg(long, global = true, default_value_t = 1e-11)]
    atol: f64,
    #[arg(long, global = true, default_value_t = 1e-9)]
    rtol: f64,
    /// Length of the time interval (defaults depend on the input).
    #[arg(long, global = true, allow_negative_numbers = true)]
    horizon: Option<f64>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "daekit-out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split a pencil given by two matrix files.
    Decompose { a: PathBuf, b: PathBuf },
    /// Integrate a DAE (spec file, or example-analytic / example-blowup).
    Simulate {
        target: String,
        /// Record samples on this time grid only.
        #[arg(long)]
        sample_every: Option<f64>,
        #[arg(long)]
        h_max: Option<f64>,
    },
    /// Sampled Lyapunov / comparison classification.
    Classify {
        target: String,
        /// Lyapunov function: quadratic[:c] for V = c |omega|^2.
        #[arg(long = "V", default_value = "quadratic:1")]
        v: String,
        /// Comparison inequality, e.g. "k=-2,U=v".
        #[arg(long)]
        chi: String,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Half-width of the sampling box per coordinate.
        #[arg(long, default_value_t = 10.0)]
        range: f64,
        /// Only keep samples with expr(w1..wk) >= 0 for lower-bound checks.
        #[arg(long)]
        region: Option<String>,
    },
    /// Gas network tools.
    Gasnet {
        #[command(subcommand)]
        command: GasCommand,
    },
}

#[derive(Subcommand, Debug)]
enum GasCommand {
    /// Steady start, then integrate (network file, or single-pipe / y-network).
    Simulate {
        target: String,
        /// Split pipes into segments no longer than this [m].
        #[arg(long)]
        dx_max: Option<f64>,
        #[arg(long, value_enum, default_value_t = EosArg::Split)]
        eos: EosArg,
        /// Largest step [s] (default: horizon / 100).
        #[arg(long)]
        h_max: Option<f64>,
        #[arg(long)]
        sample_every: Option<f64>,
    },
}

fn run(cli: Cli) -> error::Result<i32> {
    let c = cli.common;
    let cfg = RunConfig {
        rank_tol: c.tol_rank,
        newton_tol: c.tol_newton,
        constraint_tol: c.tol_constraint,
        atol: c.atol,
        rtol: c.rtol,
        horizon: c.horizon,
        seed: c.seed,
        out: c.out,
    };
    cfg.validate()?;
    match &cli.command {
        Command::Decompose { a, b } => commands::decompose_cmd(&cfg, a, b),
        Command::Simulate {
            target,
            sample_every,
            h_max,
        } => commands::simulate_cmd(&cfg, target, *sample_every, *h_max),
        Command::Classify {
            target,
            v,
            chi,
            samples,
            range,
            region,
        } => commands::classify_cmd(
            &cfg,
            &ClassifyArgs {
                target,
                v,
                chi,
                samples: *samples,
                range: *range,
                region: region.as_deref(),
            },
        ),
        Command::Gasnet {
            command:
                GasCommand::Simulate {
                    target,
                    dx_max,
                    eos,
                    h_max,
                    sample_every,
                },
        } => commands::gasnet_simulate_cmd(
            &cfg,
            &GasArgs {
                target,
                dx_max: *dx_max,
                eos: *eos,
                h_max: *h_max,
                sample_every: *sample_every,
            },
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DAEKIT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { code::USAGE as u8 } else { 0 });
        }
    };
    let exit = match run(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(exit as u8)
}
