//! The `aps` command line.

pub mod artifacts;
pub mod commands;
pub mod settings;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use thiserror::Error;

use aps_core::datalog::LogError;
use aps_core::scenario::{Pacing, ScenarioError};
use aps_telemetry::{ServerError, TranscriptError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INCOMPATIBLE: i32 = 2;
pub const EXIT_FAULT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "aps", version, about = "Simulate, serve and analyse tethered profiling missions")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Random seed (overrides the scenario file)
    #[arg(long, global = true, env = "APS_SEED")]
    pub seed: Option<u64>,
    /// Physics step, s (overrides the scenario file)
    #[arg(long, global = true, env = "APS_DT")]
    pub dt: Option<f64>,
    /// Output directory
    #[arg(long, global = true, env = "APS_OUT")]
    pub out: Option<PathBuf>,
    /// Telemetry port
    #[arg(long, global = true, env = "APS_PORT")]
    pub port: Option<u16>,
    /// realtime or fast
    #[arg(long, global = true, env = "APS_PACE")]
    pub pace: Option<Pacing>,
    /// More log output (-v, -vv)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a scenario and print the flotation, structure and
    /// compatibility checks
    Check { scenario: PathBuf },
    /// Run the mission headless and write logs, profiles and summaries
    Run {
        scenario: PathBuf,
        /// Name part of the artifacts; defaults to a prefix of the
        /// configuration hash
        #[arg(long)]
        run_id: Option<String>,
        /// Skip the telemetry transcript
        #[arg(long)]
        no_transcript: bool,
    },
    /// Serve a live session over the telemetry protocol
    Serve {
        scenario: PathBuf,
        /// Address to listen on
        #[arg(long, default_value = "127.0.0.1")]
        bind: std::net::IpAddr,
        /// State broadcasts per second
        #[arg(long, default_value_t = 10.0)]
        state_rate: f64,
        /// Start the scenario's mission immediately
        #[arg(long)]
        start_mission: bool,
        /// Stop after this much simulated time, s
        #[arg(long)]
        duration: Option<f64>,
        /// Record the session to this transcript file
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Stream a recorded transcript over the telemetry protocol
    Replay {
        transcript: PathBuf,
        /// Address to listen on
        #[arg(long, default_value = "127.0.0.1")]
        bind: std::net::IpAddr,
        /// Time compression; 0 streams without pauses
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Clients to wait for before streaming
        #[arg(long, default_value_t = 1)]
        wait_for: usize,
    },
    /// Depth-binned normalized summaries of a sample log
    Summarize {
        log: PathBuf,
        /// Parameters to summarize; all by default
        #[arg(long = "param")]
        params: Vec<String>,
        /// Depth bin width, m
        #[arg(long, default_value_t = aps_core::datalog::DEFAULT_BIN_WIDTH)]
        bin_width: f64,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario(ScenarioError::Incompatible(_)) => EXIT_INCOMPATIBLE,
            _ => EXIT_USAGE,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

/// Parse `args` and run. Returns the process exit code.
pub fn run(args: impl IntoIterator<Item = OsString>, out: &mut dyn Write) -> i32 {
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let overrides = settings::Overrides::from_matches(&matches, &cli.global);
    match commands::dispatch(&cli.command, &overrides, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Scenario(ScenarioError::Incompatible(report)) = &e {
                let _ = commands::print_report(report, &mut std::io::stderr());
            }
            e.exit_code()
        }
    }
}
