//! Command-line front end: subcommands, flag overrides, logging, exit codes.
//!
//! Every subcommand reads the same JSON run config (see [`config`]); the
//! subcommand decides what to do with it, overriding the config's own
//! `mode` field when they disagree. This makes one config reusable across
//! modes — generate a trace with `synth`, estimate on it, then check the
//! estimate against the dense sweep with `oracle`, all from the same file.
//!
//! Exit codes: 0 on success, 1 for configuration problems, 2 when a
//! pipeline stage fails. Failures print a stage-tagged line to stderr.

pub mod config;
pub mod pipeline;

pub use config::{
    load_config, ConfigError, ProfileKind, RunConfig, RunMode, SolverSettings, SynthSpec,
};
pub use pipeline::{generate_synthetic, run_pipeline, PipelineError, RunReport};

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Composite-load parameter estimation on tensor-train densities.
#[derive(Debug, Parser)]
#[command(name = "loadtensor", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// Path to the run-configuration JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the configured RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Logs progress details; repeat for debug output.
    #[arg(long, short, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Forward-simulates the frozen parameters against the measured trace.
    Simulate(RunArgs),
    /// Estimates parameters from the measurement-reweighted stationary
    /// density and writes marginals, joint tables, and the result JSON.
    Estimate(RunArgs),
    /// Ranks the parameter axes by density concentration and, when the
    /// sweep is tractable, by first-order variance index.
    Sensitivity(RunArgs),
    /// Enumerates the posterior densely over the parameter axes — the
    /// slow reference the tensor-train path is judged against.
    Oracle(RunArgs),
    /// Generates a synthetic disturbance trace from the config's `synth`
    /// recipe and truth parameters.
    Synth(RunArgs),
}

impl Command {
    fn args(&self) -> &RunArgs {
        match self {
            Command::Simulate(a)
            | Command::Estimate(a)
            | Command::Sensitivity(a)
            | Command::Oracle(a)
            | Command::Synth(a) => a,
        }
    }

    fn mode(&self) -> Option<RunMode> {
        match self {
            Command::Simulate(_) => Some(RunMode::Simulate),
            Command::Estimate(_) => Some(RunMode::Estimate),
            Command::Sensitivity(_) => Some(RunMode::Sensitivity),
            Command::Oracle(_) => Some(RunMode::Oracle),
            Command::Synth(_) => None,
        }
    }
}

enum CliError {
    Config(ConfigError),
    Pipeline(PipelineError),
}

impl From<ConfigError> for CliError {
    fn from(err: ConfigError) -> Self {
        CliError::Config(err)
    }
}

/// Parses the command line, runs it, and returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    run_command(&cli.command)
}

/// Like [`run`], but for an already-parsed command (testable without a
/// process boundary).
pub fn run_command(command: &Command) -> i32 {
    let args = command.args();
    init_logging(args.verbose);
    match execute(args, command.mode()) {
        Ok(report) => {
            print_report(&report);
            0
        }
        Err(CliError::Config(err)) => {
            eprintln!("stage `config`: {err}");
            1
        }
        Err(CliError::Pipeline(err)) => {
            eprintln!("{err}");
            2
        }
    }
}

fn execute(args: &RunArgs, mode: Option<RunMode>) -> Result<RunReport, CliError> {
    let mut config = load_config(&args.config)?;
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        config.seed_override(seed);
    }
    match mode {
        Some(mode) => {
            if config.mode != mode {
                log::info!(
                    "config says mode `{}`; the `{}` subcommand takes precedence",
                    config.mode,
                    mode
                );
                config.mode = mode;
                config.validate()?;
            }
            if !config.trace.exists() {
                return Err(CliError::Config(ConfigError::Invalid {
                    field: "trace",
                    reason: format!("file `{}` not found", config.trace.display()),
                }));
            }
            run_pipeline(&config).map_err(CliError::Pipeline)
        }
        None => generate_synthetic(&config).map_err(CliError::Pipeline),
    }
}

impl RunConfig {
    /// Applies the `--seed` flag.
    pub fn seed_override(&mut self, seed: u64) {
        self.solver.seed = seed;
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn print_report(report: &RunReport) {
    println!("mode: {}", report.mode);
    if let Some(d) = &report.diagnostics {
        println!(
            "solver: {} iterations, converged = {}, eigenvalue = {:.3e}, residual bound = {:.3e}",
            d.iterations, d.converged, d.eigenvalue, d.residual_bound
        );
    }
    for path in &report.artifacts {
        println!("artifact: {}", path.display());
    }
    println!("wall time: {:.3} s", report.wall_time_s);
}
