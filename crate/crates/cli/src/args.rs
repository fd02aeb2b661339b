use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jointrecon_core::prior::Channels;
use jointrecon_core::sampler::UpdateRule;
use serde::{Deserialize, Serialize};

use crate::presets::Preset;

#[derive(Debug, Parser)]
#[command(name = "jointrecon", version, about = "Joint PET-MRI reconstruction with a learned diffusion prior")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset of phantom pairs and simulated measurements.
    Phantom(PhantomArgs),
    /// Train a score network on a dataset.
    Train(TrainArgs),
    /// Reconstruct dataset samples with one or more methods.
    Reconstruct(ReconstructArgs),
    /// Score reconstructions against ground truth and write a report.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PhantomArgs {
    /// `key = value` file supplying any flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 20)]
    pub train: usize,
    #[arg(long, default_value_t = 5)]
    pub test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Acquisition preset; explicit flags override it.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Expected total sinogram counts.
    #[arg(long, default_value_t = 1e5)]
    pub counts: f64,
    #[arg(long, default_value_t = 0.01)]
    pub mri_noise: f64,
    #[arg(long)]
    pub accel: Option<f64>,
    #[arg(long, default_value_t = 0.08)]
    pub center_fraction: f64,
    #[arg(long)]
    pub detectors: Option<usize>,
    #[arg(long)]
    pub angles: Option<usize>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainModality {
    Joint,
    Pet,
    Mri,
    /// All three networks, written to `joint/`, `pet/` and `mri/`.
    All,
}

impl TrainModality {
    pub fn channels(self) -> Vec<Channels> {
        match self {
            TrainModality::Joint => vec![Channels::Joint],
            TrainModality::Pet => vec![Channels::Pet],
            TrainModality::Mri => vec![Channels::Mri],
            TrainModality::All => vec![Channels::Joint, Channels::Pet, Channels::Mri],
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `phantom`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = TrainModality::Joint)]
    pub modality: TrainModality,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Gradient-norm cap; 0 disables clipping.
    #[arg(long, default_value_t = 2000.0)]
    pub clip_norm: f64,
    /// Train on random square crops of this size.
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub sigma_min: f64,
    #[arg(long, default_value_t = 10.0)]
    pub sigma_max: f64,
    #[arg(long, default_value_t = 100)]
    pub levels: usize,
    /// Channel widths of the three scales.
    #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 32])]
    pub widths: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Joint,
    SinglePet,
    SingleMri,
    Mlem,
    Tvcs,
    Zerofill,
    /// Every method above.
    All,
}

impl Method {
    pub const EACH: [Method; 6] = [
        Method::Joint,
        Method::SinglePet,
        Method::SingleMri,
        Method::Mlem,
        Method::Tvcs,
        Method::Zerofill,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Joint => "joint",
            Method::SinglePet => "single-pet",
            Method::SingleMri => "single-mri",
            Method::Mlem => "mlem",
            Method::Tvcs => "tvcs",
            Method::Zerofill => "zerofill",
            Method::All => "all",
        }
    }

    /// Score channels the method samples with, if it is a diffusion method.
    pub fn channels(self) -> Option<Channels> {
        match self {
            Method::Joint => Some(Channels::Joint),
            Method::SinglePet => Some(Channels::Pet),
            Method::SingleMri => Some(Channels::Mri),
            _ => None,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `phantom`.
    #[arg(long, conflicts_with = "sample_dir", required_unless_present = "sample_dir")]
    pub data: Option<PathBuf>,
    /// A single sample directory instead of a dataset.
    #[arg(long)]
    pub sample_dir: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Reconstruct only the first N samples of the split.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    pub method: Vec<Method>,
    /// Checkpoint directory, or a `train --modality all` output.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Use the exact score of a Gaussian-mixture prior (JSON) instead of a network.
    #[arg(long, conflicts_with = "checkpoint")]
    pub oracle_gm: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Re-simulate measurements with a preset's acceleration and sinogram raster.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Re-simulate with this total count level.
    #[arg(long)]
    pub counts: Option<f64>,
    /// Re-simulate with this k-space noise level.
    #[arg(long)]
    pub mri_noise: Option<f64>,
    #[arg(long)]
    pub accel: Option<f64>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub sigma_min: Option<f64>,
    #[arg(long)]
    pub sigma_max: Option<f64>,
    #[arg(long, default_value_t = 3)]
    pub steps: usize,
    /// Langevin step scale ε₀.
    #[arg(long, default_value_t = 20.0)]
    pub step_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_pet: f64,
    #[arg(long, default_value_t = 1e4)]
    pub lambda_mri: f64,
    #[arg(long, default_value = "renoise")]
    pub update: UpdateRule,
    #[arg(long, default_value_t = 0.8)]
    pub eta: f64,
    /// Base sampler seed; sample k uses seed + k.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub mlem_iters: usize,
    #[arg(long, default_value_t = 200)]
    pub tv_iters: usize,
    #[arg(long, default_value_t = 0.002)]
    pub tv_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    pub tv_step: f64,
    /// Samples reconstructed in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directories written by `reconstruct`.
    #[arg(long = "run", required = true, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}
