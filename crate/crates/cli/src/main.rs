//! `snspd`: command-line front end of the SNSPD nonlinearity toolkit.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use snspd_core::io::config::CONFIG_ENV;
use snspd_core::Error;

#[derive(Debug, Parser)]
#[command(name = "snspd", version, about = "Simulate and analyse SNSPD count-rate nonlinearity")]
pub struct Cli {
    /// TOML configuration; command-line flags override its keys.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte-Carlo residuum curve over a list of combined fluxes.
    Simulate(SimulateArgs),
    /// Fit a model to a data file and write the result as JSON.
    Fit(FitArgs),
    /// Start-stop histogram and normalised recovery curve from timestamps.
    Histogram(HistogramArgs),
    /// Virtual superposition experiment with shutter cycles.
    Experiment(ExperimentArgs),
    /// Plot-ready data for a figure.
    Emit(EmitArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Combined incident fluxes: `start:stop:count` or `a,b,c` (SI suffixes, e.g. 50k).
    #[arg(long)]
    pub rates: Option<String>,
    /// Boost window, e.g. 172ns.
    #[arg(long)]
    pub t_boost: Option<String>,
    /// Multi-photon boost on or off.
    #[arg(long, value_enum)]
    pub boost: Option<Switch>,
    /// `unity`, `step:<dead time>`, `reference:<I_b µA>` or `bias:<I_b>,<I_drop>,<tau>`.
    #[arg(long)]
    pub recovery: Option<String>,
    /// Steady-state efficiency A.
    #[arg(long)]
    pub efficiency: Option<f64>,
    /// Photons per simulated flux.
    #[arg(long)]
    pub photons: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use rate-dependent recovery profiles (the configured ones, or the
    /// tabulated 250/500 kHz profiles).
    #[arg(long)]
    pub ac_biasing: bool,
    #[arg(long, value_enum)]
    pub pairing: Option<PairingArg>,
    /// Also write click times of one run at the first flux.
    #[arg(long)]
    pub timestamps: Option<PathBuf>,
    /// Curve CSV; metadata goes next to it with a `.json` extension.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PairingArg {
    Common,
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitModel {
    Deadtime,
    Combined,
    ErfSde,
    Recovery,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(value_enum)]
    pub model: FitModel,
    /// Residuum curve (deadtime, combined), `bias_ua,efficiency[,sigma]`
    /// (erf-sde) or normalised recovery curve (recovery).
    pub data: PathBuf,
    /// Bias current of a recovery curve (µA).
    #[arg(long, default_value_t = 22.0)]
    pub bias: f64,
    /// Scale raw rates so that the rate at `<current>` becomes `<efficiency>`, e.g. 22.6:0.64.
    #[arg(long)]
    pub anchor: Option<String>,
    /// Hold epsilon at zero in the combined model.
    #[arg(long)]
    pub fix_epsilon: bool,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HistogramArgs {
    /// CSV with a `time_ns` column, strictly increasing.
    pub timestamps: PathBuf,
    /// Bin width, e.g. 1ns.
    #[arg(long)]
    pub bin: Option<String>,
    /// Largest delay.
    #[arg(long)]
    pub window: Option<String>,
    /// Bins below this delay are dropped from the normalised curve.
    #[arg(long)]
    pub cutoff: Option<String>,
    /// Delay at which the curve is scaled to one.
    #[arg(long)]
    pub norm: Option<String>,
    /// Plateau averaging width ending at the normalisation delay, or `single`.
    #[arg(long)]
    pub plateau: Option<String>,
    /// Output prefix: writes `<prefix>_histogram.csv` and `<prefix>_normalized.csv`.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Combined flux at wave-plate angle 0.
    #[arg(long)]
    pub p0: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub cycles: Option<usize>,
    /// Integration time per shutter setting, e.g. 100ms.
    #[arg(long)]
    pub integration: Option<String>,
    #[arg(long)]
    pub background: Option<String>,
    #[arg(long)]
    pub imbalance: Option<f64>,
    /// Same forms as `simulate --recovery`.
    #[arg(long)]
    pub recovery: Option<String>,
    #[arg(long)]
    pub t_boost: Option<String>,
    #[arg(long, value_enum)]
    pub boost: Option<Switch>,
    #[arg(long)]
    pub efficiency: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmitArgs {
    /// fig2, fig3, fig4b, fig6 or fig8.
    pub figure: String,
    /// Input files as `[label=]path`; labels are bias currents for fig3 and fig4b.
    pub inputs: Vec<String>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Failures of a command, mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(e) if e.is_numerical() => 3,
            Failure::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("snspd: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
