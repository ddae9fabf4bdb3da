//! `fleetlab` command-line driver.

mod commands;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fleetlab::Error;

#[derive(Parser, Debug)]
#[command(name = "fleetlab", version, about = "Electric robo-taxi fleet dispatch: simulate, train, bound, compare")]
struct Cli {
    /// Root seed for every random stream; FLEETLAB_SEED takes precedence.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a config from trip records.
    Calibrate(CalibrateArgs),
    /// Write one of the built-in synthetic scenarios.
    Synth(SynthArgs),
    /// Train an Atomic-PPO policy.
    Train(TrainArgs),
    /// Roll out one policy and report its daily reward.
    Evaluate(EvaluateArgs),
    /// Solve the fluid LP and print the upper bound.
    Bound(BoundArgs),
    /// Evaluate several policies against the fluid bound.
    Compare(CompareArgs),
    /// Train and evaluate under different charger allocations.
    SweepChargers(SweepChargersArgs),
    /// Train and evaluate under different charger powers and vehicle ranges.
    SweepHardware(SweepHardwareArgs),
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Trip-record CSV (optionally gzip-compressed).
    #[arg(long)]
    pub records: PathBuf,
    /// `zone,region` CSV.
    #[arg(long)]
    pub regions: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    pub epoch_min: f64,
    /// Which weekdays to average over: all, weekdays or mon-thu.
    #[arg(long, default_value = "mon-thu")]
    pub days: String,
    /// Fleet size written to the config.
    #[arg(long, default_value_t = 300)]
    pub fleet: u32,
    /// Scale demand down to a fleet of this size.
    #[arg(long)]
    pub scale_fleet: Option<u32>,
    /// Reference fleet for scaling; defaults to the peak number of
    /// simultaneous trips in the records.
    #[arg(long)]
    pub reference_fleet: Option<u32>,
    /// Battery units per full pack.
    #[arg(long, default_value_t = 20)]
    pub battery_units: u32,
    /// Charger power in kW (repeat for several types).
    #[arg(long = "charger-kw", default_values_t = vec![75.0])]
    pub charger_kw: Vec<f64>,
    /// Chargers per region for each power.
    #[arg(long = "chargers", default_values_t = vec![30u32])]
    pub chargers: Vec<u32>,
    #[arg(long, default_value_t = 1)]
    pub charge_period: u32,
    #[arg(long, default_value_t = 0)]
    pub pickup_patience: u32,
    #[arg(long, default_value_t = 0)]
    pub connection_patience: u32,
    /// Use the banded fast-charging curve instead of a linear rate.
    #[arg(long)]
    pub nonlinear: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// uniform, two-region-commute or hub-spoke-imbalanced.
    #[arg(long)]
    pub template: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct TrainingArgs {
    #[arg(long, default_value_t = 30)]
    pub iterations: usize,
    /// Trajectories collected per iteration.
    #[arg(long, default_value_t = 30)]
    pub trajectories: usize,
    /// Days per trajectory.
    #[arg(long, default_value_t = 8)]
    pub days: u32,
    /// Hidden layer widths, comma separated.
    #[arg(long, default_value = "128,128", value_delimiter = ',')]
    pub hidden: Vec<usize>,
    /// One network for all times of day with a time one-hot input.
    #[arg(long)]
    pub shared: bool,
    /// Iterations without improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub training: TrainingArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// ppo, power-of-k:<k>, fluid, random, pass or exact.
    #[arg(long)]
    pub policy: String,
    /// Checkpoint directory for ppo (a training output directory works).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub trajectories: usize,
    #[arg(long, default_value_t = 10)]
    pub days: u32,
    /// Directory for report.json and timeseries.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BoundArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// auto, full or reduced.
    #[arg(long, default_value = "auto")]
    pub formulation: String,
    /// Write the solution (flows included) as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the LP in MPS format.
    #[arg(long)]
    pub mps: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "ppo,power-of-k:2,fluid,random", value_delimiter = ',')]
    pub policies: Vec<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub trajectories: usize,
    #[arg(long, default_value_t = 10)]
    pub days: u32,
    /// CSV output; the JSON report goes next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepCommon {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Evaluation trajectories per configuration.
    #[arg(long, default_value_t = 10)]
    pub eval_trajectories: usize,
    #[arg(long, default_value_t = 10)]
    pub eval_days: u32,
    /// Skip training and report baselines and bounds only.
    #[arg(long)]
    pub no_train: bool,
    /// CSV output (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepChargersArgs {
    /// Allocations: uniform:<m>, concentrated:<region>:<m>, abundant or
    /// counts:<c0>/<c1>/...; separated by commas.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub allocations: Vec<String>,
    #[command(flatten)]
    pub common: SweepCommon,
}

#[derive(Args, Debug)]
pub struct SweepHardwareArgs {
    /// `<kW>:<range multiplier>` pairs separated by commas, e.g. 75:1,15:1,75:2.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub variants: Vec<String>,
    /// Charger power the config's rates correspond to.
    #[arg(long, default_value_t = 75.0)]
    pub base_kw: f64,
    #[command(flatten)]
    pub common: SweepCommon,
}

/// Seed from FLEETLAB_SEED if set, else the flag.
fn resolve_seed(flag: u64) -> fleetlab::Result<u64> {
    match std::env::var("FLEETLAB_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("FLEETLAB_SEED `{v}` is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingArtifact(_) => 3,
        Error::Numeric(_) | Error::Infeasible { .. } | Error::Unbounded { .. } => 4,
        _ => 2,
    }
}

fn run(cli: Cli) -> fleetlab::Result<()> {
    let seed = resolve_seed(cli.seed)?;
    fleetlab::par::configure_threads(cli.jobs)?;
    match cli.command {
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::Synth(a) => commands::synth(&a, seed),
        Command::Train(a) => commands::train(&a, seed),
        Command::Evaluate(a) => commands::evaluate(&a, seed),
        Command::Bound(a) => commands::bound(&a),
        Command::Compare(a) => commands::compare(&a, seed),
        Command::SweepChargers(a) => sweep::chargers(&a, seed),
        Command::SweepHardware(a) => sweep::hardware(&a, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
