mod commands;
mod io;

use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use vcm_core::experiments::{LPolicy, LambdaMode};
use vcm_core::VcmError;

#[derive(Debug, Parser)]
#[command(name = "vcm", version, about = "Low-rank estimation of varying coefficient models")]
struct Cli {
    /// More log output on stderr (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only warnings and errors on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Policy {
    Fixed,
    SelectL,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Formula,
    Oracle,
}

impl From<Policy> for LPolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::Fixed => LPolicy::Fixed,
            Policy::SelectL => LPolicy::SelectL,
        }
    }
}

impl From<Mode> for LambdaMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Formula => LambdaMode::Formula,
            Mode::Oracle => LambdaMode::Oracle,
        }
    }
}

/// JSON arguments accept an inline object or a file path.
#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the coordinate matrix to a dataset.
    Estimate {
        /// CSV with header t,y,w_1,...,w_p.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dict: String,
        /// Penalty level, or `auto` for the tuning formulas.
        #[arg(long, default_value = "auto")]
        lambda: String,
        #[arg(long)]
        solver: Option<String>,
        /// Noise and approximation constants for `--lambda auto`.
        #[arg(long)]
        tuning: Option<String>,
        /// Scenario that generated the data; supplies defaults for `--lambda auto`.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Draw a dataset and its truth sidecar from a scenario.
    Simulate {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        n: usize,
        /// Also write A0.csv, the truth in this dictionary.
        #[arg(long)]
        dict: Option<String>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Report λ, sample-size thresholds, β and the selected l.
    Tune {
        #[arg(long)]
        dict: String,
        #[arg(long)]
        scenario: Option<String>,
        /// Dataset giving n and empirical design moments.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        tuning: Option<String>,
        /// Nuclear norm of the truth; computed from the scenario when omitted.
        #[arg(long)]
        nuclear_norm: Option<f64>,
        /// Include the l selection rules.
        #[arg(long)]
        select_l: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Error against n over a log-spaced grid with a fitted log-log slope.
    Rates {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        dict: String,
        /// lo:hi:k, k log-spaced sample sizes.
        #[arg(long)]
        n_grid: String,
        #[arg(long, default_value_t = 50)]
        replicates: usize,
        #[arg(long, value_enum, default_value = "fixed")]
        policy: Policy,
        #[arg(long)]
        settings: Option<String>,
        #[arg(long, value_enum)]
        lambda_mode: Option<Mode>,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Error and nuclear-norm bounds at one n, plus Monte Carlo norms of Σ.
    VerifyBounds {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        dict: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        settings: Option<String>,
        #[arg(long, value_enum)]
        lambda_mode: Option<Mode>,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Gram deviation and sup-norm constant of a dictionary.
    BasisInfo {
        #[arg(long)]
        dict: String,
        /// Grid size for the sup-norm scan.
        #[arg(long, default_value_t = 8193)]
        grid: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Estimate {
            data,
            dict,
            lambda,
            solver,
            tuning,
            scenario,
            out,
        } => commands::estimate(commands::EstimateArgs {
            data: &data,
            dict: &dict,
            lambda: &lambda,
            solver: solver.as_deref(),
            tuning: tuning.as_deref(),
            scenario: scenario.as_deref(),
            out: &out,
        }),
        Command::Simulate {
            scenario,
            n,
            dict,
            seed,
            out,
        } => commands::simulate(&scenario, n, seed, dict.as_deref(), &out),
        Command::Tune {
            dict,
            scenario,
            data,
            n,
            tuning,
            nuclear_norm,
            select_l,
            out,
        } => commands::tune(commands::TuneArgs {
            dict: &dict,
            scenario: scenario.as_deref(),
            data: data.as_deref(),
            n,
            tuning: tuning.as_deref(),
            nuclear_norm,
            select_l,
            out: &out,
        }),
        Command::Rates {
            scenario,
            dict,
            n_grid,
            replicates,
            policy,
            settings,
            lambda_mode,
            jobs,
            seed,
            out,
        } => commands::rates(commands::RatesArgs {
            scenario: &scenario,
            dict: &dict,
            n_grid: &n_grid,
            replicates,
            policy: policy.into(),
            settings: settings.as_deref(),
            lambda_mode: lambda_mode.map(Into::into),
            jobs,
            seed,
            out: &out,
        }),
        Command::VerifyBounds {
            scenario,
            dict,
            n,
            trials,
            settings,
            lambda_mode,
            jobs,
            seed,
            out,
        } => commands::verify_bounds(commands::VerifyArgs {
            scenario: &scenario,
            dict: &dict,
            n,
            trials,
            settings: settings.as_deref(),
            lambda_mode: lambda_mode.map(Into::into),
            jobs,
            seed,
            out: &out,
        }),
        Command::BasisInfo { dict, grid, out } => commands::basis_info(&dict, grid, out.as_deref()),
    }
}

fn is_numerical(err: &anyhow::Error) -> bool {
    err.chain()
        .any(|e| e.downcast_ref::<VcmError>().is_some_and(VcmError::is_numerical))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => tracing::Level::WARN,
        (false, 0) => tracing::Level::INFO,
        (false, 1) => tracing::Level::DEBUG,
        _ => tracing::Level::TRACE,
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(level)
        .with_target(false)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_numerical(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
