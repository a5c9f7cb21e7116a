use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rul_core::model::{ModelKind, Profile};

#[derive(Debug, Parser)]
#[command(name = "rul", version, about = "Battery RUL classification and charge automation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dataset utilities.
    #[command(subcommand)]
    Data(DataCommand),
    /// Train on an 80:20 split and write model and report files.
    Train(TrainArgs),
    /// K-fold cross-validation table.
    Cv(CvArgs),
    /// Replay an events file through model, controller and device simulator.
    Simulate(SimulateArgs),
    /// Run the HTTP/SSE telemetry service.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum DataCommand {
    /// Row count, column ranges, RUL histogram, thresholds and class counts.
    Inspect(DataArgs),
    /// Write a labelled `dataset.v1` snapshot.
    Snapshot {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic CSV shaped like the cycling dataset.
    Synth {
        #[arg(long, default_value_t = 14)]
        batteries: usize,
        #[arg(long, default_value_t = 1100)]
        cycles: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV or `dataset.v1` snapshot (.json). Defaults to $RUL_DATA.
    #[arg(long, env = "RUL_DATA")]
    pub data: Option<PathBuf>,
    /// Keep Cycle Index as a feature (default).
    #[arg(long, overrides_with = "exclude_cycle_index")]
    pub include_cycle_index: bool,
    /// Drop Cycle Index; it nearly determines RUL.
    #[arg(long)]
    pub exclude_cycle_index: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Mlp,
    Gru,
    Gbdt,
    /// All three, with a comparison table.
    All,
}

impl ModelChoice {
    pub fn kinds(self) -> Vec<ModelKind> {
        match self {
            ModelChoice::Mlp => vec![ModelKind::Mlp],
            ModelChoice::Gru => vec![ModelKind::Gru],
            ModelChoice::Gbdt => vec![ModelKind::Gbdt],
            ModelChoice::All => ModelKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileChoice {
    Full,
    Smoke,
}

impl From<ProfileChoice> for Profile {
    fn from(p: ProfileChoice) -> Self {
        match p {
            ProfileChoice::Full => Profile::Full,
            ProfileChoice::Smoke => Profile::Smoke,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "gbdt")]
    pub model: ModelChoice,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "full")]
    pub profile: ProfileChoice,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output directory for `<kind>.model.json`, `report.json` and history CSVs.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Class-stratified folds (default).
    #[arg(long, overrides_with = "plain_kfold")]
    pub stratified: bool,
    #[arg(long)]
    pub plain_kfold: bool,
    /// Report the sample (n-1) standard deviation instead of the population one.
    #[arg(long)]
    pub sample_std: bool,
    /// Also write the fold tables to this `report.v1` file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ControllerArgs {
    /// Consecutive low-RUL predictions before the relay closes.
    #[arg(long, default_value_t = 1)]
    pub k_on: u32,
    /// Consecutive high-RUL predictions before the relay opens.
    #[arg(long, default_value_t = 1)]
    pub k_off: u32,
    /// Seconds between device heartbeats.
    #[arg(long, default_value_t = 1.0)]
    pub heartbeat_interval: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Model file written by `rul train`.
    #[arg(long)]
    pub model_file: PathBuf,
    /// JSON-lines events file.
    #[arg(long)]
    pub events: PathBuf,
    /// Trace output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub controller: ControllerArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model_file: PathBuf,
    /// Static dashboard assets served under /ui.
    #[arg(long)]
    pub ui: Option<PathBuf>,
    /// Directory for the event log and controller trace written at shutdown.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[command(flatten)]
    pub controller: ControllerArgs,
}
