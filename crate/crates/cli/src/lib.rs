//! Command-line frontend for `collective-steer`.
//!
//! Exit codes: 0 success, 2 structured rejection (a reachability condition
//! fails, a target leaves `GL⁺`, a plan fails verification, a map does not
//! contract), 1 operational error (I/O, schema, numerics).

pub mod commands;
pub mod files;
pub mod json;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use collective_steer::SteerError;

#[derive(Debug)]
pub enum CliError {
    Io(String),
    Schema(String),
    Steer(SteerError),
    /// Structured rejection with a JSON detail for stdout.
    Rejected { message: String, detail: Option<serde_json::Value> },
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Schema(m) => write!(f, "invalid input: {m}"),
            CliError::Steer(e) => write!(f, "{e}"),
            CliError::Rejected { message, .. } => write!(f, "rejected: {message}"),
        }
    }
}

impl From<SteerError> for CliError {
    fn from(e: SteerError) -> Self {
        CliError::Steer(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Rejected { .. } => 2,
            CliError::Steer(e) if e.is_rejection() => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "collective-steer", version, about = "Synthesize and verify collective steering gains")]
pub struct Cli {
    /// Seed for randomized gain synthesis (overrides the task file).
    #[arg(long, env = "COLLECTIVE_STEER_SEED", global = true)]
    pub seed: Option<u64>,
    /// Relative terminal error accepted by verification.
    #[arg(long, global = true)]
    pub terminal_tol: Option<f64>,
    /// RK4 steps per leg.
    #[arg(long, global = true)]
    pub steps_per_segment: Option<usize>,
    /// Grid size for singularity scans.
    #[arg(long, global = true)]
    pub grid_points: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FactorMode {
    SpdCone,
    PlanarFive,
    NearIdentity,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a plan from a task file.
    Plan {
        task: PathBuf,
        /// Plan path (default: the task's output.plan, else stdout).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Simulate a plan and write a report.
    Verify {
        plan: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write the trajectory of Φ (or of a swarm) as CSV.
    Simulate {
        plan: PathBuf,
        /// CSV of initial particle states, one row of n coordinates per particle.
        #[arg(long)]
        swarm: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Keep every k-th sample of each leg (leg endpoints are always kept).
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Also write a matplotlib script plotting the CSV.
        #[arg(long)]
        plot_script: Option<PathBuf>,
    },
    /// Factor a GL⁺ matrix into steerable pieces.
    Factor {
        /// JSON matrix (array of rows).
        matrix: PathBuf,
        #[arg(long, value_enum, default_value = "spd-cone")]
        mode: FactorMode,
        /// JSON SPD matrix W (default: identity, or W_{t_s} of --system).
        #[arg(long, conflicts_with = "system")]
        w: Option<PathBuf>,
        /// System file whose end-of-period Gramian is used as W.
        #[arg(long)]
        system: Option<PathBuf>,
        /// Near-identity bound (default: derived from W).
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Periodize a system and report Gramians.
    Gram {
        system: PathBuf,
        /// Times at which to report W_t and W_t W_{t_s}⁻¹.
        #[arg(long = "at", value_delimiter = ',')]
        at: Vec<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Closed-loop nonlinear rearrangement with a builtin map.
    Diffeo {
        system: PathBuf,
        /// `identity`, `translate c1,c2,…`, `linear m11,m12;m21,m22`, or `tanh_perturb α`.
        #[arg(long)]
        map: String,
        /// CSV of initial points (default: ±e_i).
        #[arg(long)]
        points: Option<PathBuf>,
        /// Half-width of the contraction probe box.
        #[arg(long, default_value_t = 2.0)]
        half_width: f64,
        /// Trajectory CSV path (default: stdout).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Summary JSON path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// Runs one command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match commands::dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            if let CliError::Rejected { detail: Some(d), .. } = &e {
                print!("{}", json::to_string(d));
            }
            eprintln!("collective-steer: {e}");
            e.exit_code()
        }
    }
}
