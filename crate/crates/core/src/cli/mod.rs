//! Command-line front end: configuration, orchestration and persistence.

pub mod config;
pub mod manifest;
mod commands;
mod selftest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
pub use config::{parse_config, render_config, ConfigMap, RunConfig};
pub use manifest::RunManifest;
pub use selftest::{run_suites, SuiteOutcome};

#[derive(Parser, Debug)]
#[command(name = "choquard", version, about = "Mass-constrained Choquard/Pekar minimization toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Minimize the energy at one coupling.
    Groundstate(RunArgs),
    /// Energy curve e(g, m) over `--g-range`.
    Sweep(RunArgs),
    /// Bisection for the critical coupling.
    Gstar(RunArgs),
    /// Critical coupling and the order of the binding transition.
    Classify(RunArgs),
    /// Virial identity residual of a state.
    Pokhozaev(RunArgs),
    /// Lowest eigenvalue of the mean-field operator of a state.
    Spectrum(RunArgs),
    /// Local minimizers, mountain-pass saddles and the nonexistence threshold.
    Metastable(RunArgs),
    /// Run the quick invariant suites.
    Selftest(RunArgs),
    /// Continue an interrupted run from its output directory.
    Resume {
        /// Output directory holding `manifest.json`.
        dir: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long = "L")]
    pub length: Option<f64>,
    /// `NAME[:key=value,...]`, e.g. `ion_atom:b=1`.
    #[arg(long)]
    pub potential: Option<String>,
    #[arg(long)]
    pub g: Option<f64>,
    /// `lo:hi:steps`.
    #[arg(long = "g-range")]
    pub g_range: Option<String>,
    #[arg(long)]
    pub m: Option<f64>,
    /// Field dump used as the state or initial guess.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Subcommand mode (`curve|table` for sweep, `local|saddle|g2|rho0` for metastable).
    #[arg(long)]
    pub mode: Option<String>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Groundstate(_) => "groundstate",
            Command::Sweep(_) => "sweep",
            Command::Gstar(_) => "gstar",
            Command::Classify(_) => "classify",
            Command::Pokhozaev(_) => "pokhozaev",
            Command::Spectrum(_) => "spectrum",
            Command::Metastable(_) => "metastable",
            Command::Selftest(_) => "selftest",
            Command::Resume { .. } => "resume",
        }
    }
}

/// Config file entries overlaid by the command-line flags.
pub fn merge_args(name: &str, args: &RunArgs) -> Result<ConfigMap> {
    let mut map = match &args.config {
        Some(path) => parse_config(&std::fs::read_to_string(path).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?)?,
        None => ConfigMap::new(),
    };
    let mut set = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            map.insert(k.to_string(), v);
        }
    };
    set("out", args.out.as_ref().map(|p| p.display().to_string()));
    set("workers", args.workers.map(|v| v.to_string()));
    set("seed", args.seed.map(|v| v.to_string()));
    set("grid.dim", args.dim.map(|v| v.to_string()));
    set("grid.n", args.n.map(|v| v.to_string()));
    set("grid.L", args.length.map(|v| v.to_string()));
    set("run.g", args.g.map(|v| v.to_string()));
    set("run.g_range", args.g_range.clone());
    set("run.m", args.m.map(|v| v.to_string()));
    set("run.input", args.input.as_ref().map(|p| p.display().to_string()));
    set("run.lambda", args.lambda.map(|v| v.to_string()));
    if let Some(mode) = &args.mode {
        let key = match name {
            "sweep" => "sweep.mode",
            "metastable" => "metastable.mode",
            _ => return Err(Error::ConfigInvalid(format!("--mode is not accepted by `{name}`"))),
        };
        map.insert(key.to_string(), mode.clone());
    }
    if let Some(spec) = &args.potential {
        config::set_potential(&mut map, spec)?;
    }
    Ok(map)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ConfigInvalid(_) => 2,
        _ => 1,
    }
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs one subcommand. `Ok(1)` signals a completed run whose verdict failed
/// (a red self-test suite).
pub fn run(command: Command) -> Result<i32> {
    let name = command.name();
    match command {
        Command::Resume { dir, workers } => commands::resume(&dir, workers),
        Command::Groundstate(a)
        | Command::Sweep(a)
        | Command::Gstar(a)
        | Command::Classify(a)
        | Command::Pokhozaev(a)
        | Command::Spectrum(a)
        | Command::Metastable(a)
        | Command::Selftest(a) => {
            let map = merge_args(name, &a)?;
            let cfg = RunConfig::from_map(&map)?;
            commands::execute(name, cfg, None)
        }
    }
}
