use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Plan ancillary-service participation for a cryptomining fleet.
///
/// Every command writes its CSV outputs, a summary.json and a manifest.json
/// into --out. Numeric options resolve as: command-line flag, then the run
/// config file, then the built-in default shown in each option's help.
#[derive(Debug, Parser)]
#[command(name = "minerflex", version, propagate_version = true)]
pub struct Cli {
    /// Directory searched for run.json, fleet.json and programs.json when
    /// they are not given explicitly.
    #[arg(long, global = true, env = "MINERFLEX_CONFIG_DIR")]
    pub config_dir: Option<PathBuf>,

    /// Run config (JSON) with defaults for any of the flags below, using
    /// the flag names with underscores. Defaults to <config-dir>/run.json.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize the profile with stochastic subgradient descent, per hour of
    /// day when traces are given.
    SolveOffline(SolveOffline),
    /// Optimize a coupled reg-up/reg-down pair on a two-type fleet in closed
    /// form.
    SolveReg(SolveReg),
    /// Mean-variance profile for a single machine type over a sweep of risk
    /// weights.
    SolveRisk(SolveRisk),
    /// Replay traces through online gradient descent and report regret.
    SimulateOnline(SimulateOnline),
    /// Profit of per-hour, fixed, even-split and no participation.
    CompareStrategies(CompareStrategies),
    /// Run the oracle agreement suites.
    Verify(Verify),
    /// Draw synthetic market and program traces from a spec.
    Synthesize(Synthesize),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SolveOffline(_) => "solve-offline",
            Command::SolveReg(_) => "solve-reg",
            Command::SolveRisk(_) => "solve-risk",
            Command::SimulateOnline(_) => "simulate-online",
            Command::CompareStrategies(_) => "compare-strategies",
            Command::Verify(_) => "verify",
            Command::Synthesize(_) => "synthesize",
        }
    }
}

#[derive(Debug, Args)]
pub struct Output {
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Inputs {
    /// Fleet config (JSON). Default: <config-dir>/fleet.json.
    #[arg(long)]
    pub fleet: Option<PathBuf>,
    /// Programs config (JSON). Default: <config-dir>/programs.json.
    #[arg(long)]
    pub programs: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Traces {
    /// Market trace CSV: timestamp,rt_price,coin_price.
    #[arg(long)]
    pub market: Option<PathBuf>,
    /// Program trace CSV: timestamp,program_id,price,epsilon.
    #[arg(long)]
    pub program_trace: Option<PathBuf>,
    /// Treat negative mining rewards as zero instead of rejecting the slot.
    #[arg(long)]
    pub clamp_negative: bool,
}

#[derive(Debug, Args)]
pub struct Descent {
    /// Descent iterations J [default: 10000].
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Samples per iteration M [default: 10].
    #[arg(long)]
    pub batch: Option<usize>,
    /// RNG seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct Market {
    /// Coin price, $/coin, when no traces are given [default: 20000].
    #[arg(long)]
    pub coin_price: Option<f64>,
    /// Electricity price, $/MWh, when no traces are given [default: 30].
    #[arg(long)]
    pub rt_price: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SolveOffline {
    #[command(flatten)]
    pub inputs: Inputs,
    #[command(flatten)]
    pub traces: Traces,
    #[command(flatten)]
    pub descent: Descent,
    #[command(flatten)]
    pub market: Market,
    /// Monte Carlo samples for the reported expected cost without traces
    /// [default: 100000].
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SolveReg {
    #[command(flatten)]
    pub inputs: Inputs,
    #[command(flatten)]
    pub market: Market,
    /// Also write the cost surface on an n×n grid (0 disables) [default: 0].
    #[arg(long)]
    pub surface_points: Option<usize>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SolveRisk {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Estimate deployment moments and prices from these traces instead of
    /// the configured models.
    #[command(flatten)]
    pub traces: Traces,
    #[command(flatten)]
    pub market: Market,
    /// Risk weight λ; repeat for a sweep [default: 0].
    #[arg(long = "risk-weight")]
    pub risk_weights: Vec<f64>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SimulateOnline {
    #[command(flatten)]
    pub inputs: Inputs,
    #[command(flatten)]
    pub traces: Traces,
    /// Independent learners, keyed by hour of day [default: 24].
    #[arg(long)]
    pub learners: Option<usize>,
    /// Rounds to play [default: all records].
    #[arg(long)]
    pub horizon: Option<usize>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct CompareStrategies {
    #[command(flatten)]
    pub inputs: Inputs,
    #[command(flatten)]
    pub traces: Traces,
    #[command(flatten)]
    pub descent: Descent,
    /// First record of the window [default: 0].
    #[arg(long)]
    pub window_start: Option<usize>,
    /// Records in the window [default: all from the start].
    #[arg(long)]
    pub window_len: Option<usize>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct Verify {
    /// Suite to run, 1-9; repeat for several [default: all].
    #[arg(long = "suite")]
    pub suites: Vec<u32>,
    /// Base seed for the suites [default: 20220601].
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct Synthesize {
    /// Synthesis spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// RNG seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: Output,
}
