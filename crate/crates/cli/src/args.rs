use std::path::PathBuf;

use clap::{Args, ValueEnum};
use protoscope::network::{parse_hidden, NetworkSpec};
use protoscope::proto::{InitDistribution, ProtoConfig};
use protoscope::trainer::TrainConfig;
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenDataArgs {
    /// Isotropic Gaussian clusters (the only generator).
    #[arg(long, required = true)]
    pub blobs: bool,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 8)]
    pub p: usize,
    /// Distance between neighbouring cluster means.
    #[arg(long, default_value_t = 10.0)]
    pub separation: f64,
    /// Per-coordinate standard deviation within a cluster.
    #[arg(long, default_value_t = 0.5)]
    pub spread: f64,
    #[arg(long, env = "PROTOSCOPE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also hold out a stratified test split and write it here.
    #[arg(long, requires = "out")]
    pub test_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.3)]
    pub test_fraction: f64,
    /// Write a `label,f1,...` header line.
    #[arg(long)]
    pub header: bool,
}

/// Network shape; `p` and `k` come from the data.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelOpts {
    /// Hidden stages, e.g. `mlp:64,32` or `conv4k3s1,16`.
    #[arg(long, default_value = "mlp:64")]
    pub spec: String,
    /// Feature width (the penultimate layer).
    #[arg(long, default_value_t = 32)]
    pub q: usize,
}

impl ModelOpts {
    pub fn network_spec(&self, p: usize, k: usize, seed: u64) -> Result<NetworkSpec, CliError> {
        let spec = NetworkSpec {
            input_dim: p,
            feature_dim: self.q,
            num_classes: k,
            hidden: parse_hidden(&self.spec)?,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainOpts {
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr1: f64,
    #[arg(long, default_value_t = 0.05)]
    pub lr2: f64,
    /// First epoch trained with `--lr2`; half of `--epochs` by default.
    #[arg(long)]
    pub phase_split: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long)]
    pub no_shuffle: bool,
}

impl TrainOpts {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr_phase1: self.lr1,
            lr_phase2: self.lr2,
            phase_split: self.phase_split.unwrap_or(self.epochs / 2),
            batch_size: self.batch_size,
            seed,
            shuffle: !self.no_shuffle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitArg {
    StandardNormal,
    Uniform01,
}

impl From<InitArg> for InitDistribution {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::StandardNormal => InitDistribution::StandardNormal,
            InitArg::Uniform01 => InitDistribution::Uniform01,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProtoOpts {
    /// Stop once the target-class loss is at most this.
    #[arg(long, default_value_t = 0.01)]
    pub delta_loss: f64,
    /// Input-space step length.
    #[arg(long, default_value_t = 0.05)]
    pub eta: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iters: usize,
    #[arg(long, value_enum, default_value_t = InitArg::StandardNormal)]
    pub init: InitArg,
}

impl ProtoOpts {
    pub fn config(&self, seed: u64) -> ProtoConfig {
        ProtoConfig {
            delta_loss: self.delta_loss,
            eta: self.eta,
            max_iters: self.max_iters,
            init: self.init.into(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Training CSV (`label,f1,...,fp`).
    #[arg(long)]
    pub data: PathBuf,
    /// The CSV starts with a header line.
    #[arg(long)]
    pub header: bool,
    #[command(flatten)]
    pub model: ModelOpts,
    #[command(flatten)]
    pub train: TrainOpts,
    /// Train on this stratified fraction of the data.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Seeds initialization, shuffling and the fraction draw.
    #[arg(long, env = "PROTOSCOPE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch `epoch,loss,train_acc` CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub proto: ProtoOpts,
    #[arg(long, env = "PROTOSCOPE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Report JSON; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the report as a one-row CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Save the generated prototype set.
    #[arg(long)]
    pub prototypes: Option<PathBuf>,
    /// Held-out CSV; adds true accuracy to the report.
    #[arg(long)]
    pub validate: Option<PathBuf>,
    /// The `--validate` CSV starts with a header line.
    #[arg(long, requires = "validate")]
    pub header: bool,
    /// Training fraction recorded in the CSV row.
    #[arg(long)]
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    /// Full dataset; a stratified test split is held out first.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub header: bool,
    #[arg(long, default_value_t = 0.3)]
    pub test_fraction: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.4,0.6,0.7,0.8,0.9,1.0")]
    pub fractions: Vec<f64>,
    /// Number of seeds per fraction.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    /// First cell seed; cells use `seed, seed + 1, ...`. Also seeds the
    /// test split.
    #[arg(long, env = "PROTOSCOPE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelOpts,
    #[command(flatten)]
    pub train: TrainOpts,
    #[command(flatten)]
    pub proto: ProtoOpts,
    /// Cells run concurrently; 0 uses every core.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    /// Table written by `sweep`.
    #[arg(long)]
    pub sweep: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
