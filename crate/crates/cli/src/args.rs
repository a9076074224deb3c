//! Command-line arguments. Every struct here is also the serialized form of
//! a run in its manifest, so fields hold fully resolved values.

use std::collections::BTreeSet;
use std::path::PathBuf;

use a3d::attributes::FilterConfig;
use a3d::datamodel::synth::SyntheticConfig;
use a3d::fusion::{FusionKind, FusionWeights};
use a3d::inference::{GateConfig, PipelineConfig};
use a3d::training::TrainConfig;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "A3D_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "a3d", version, about = "Gated two-pipeline action recognition over precomputed features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Gen(GenArgs),
    /// Apply attribute filters to a detections file.
    Filter(FilterArgs),
    /// Encode per-video attribute features into fixed-size vectors.
    Encode(EncodeArgs),
    /// Train an attribute model.
    Train(TrainArgs),
    /// Write p1, p2 and joint predictions.
    Predict(PredictArgs),
    /// Score prediction files against sample labels.
    Evaluate(EvaluateArgs),
    /// Generate, train and evaluate in one go, then check the accuracy ordering.
    Demo(DemoArgs),
    /// Repeat the run recorded in a manifest.
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Filter(_) => "filter",
            Command::Encode(_) => "encode",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::Demo(_) => "demo",
            Command::Rerun(_) => "rerun",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct OutArgs {
    /// Output directory; created if missing.
    #[arg(long, env = OUT_DIR_ENV, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, alias = "classes", default_value_t = 20, value_parser = clap::value_parser!(u32).range(2..=400))]
    pub num_classes: u32,
    #[arg(long, alias = "videos", default_value_t = 1000, value_parser = clap::value_parser!(u32).range(2..))]
    pub num_videos: u32,
    #[arg(long, default_value_t = 0.5)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0.3)]
    pub low_confidence_fraction: f64,
    #[arg(long, default_value_t = 0.9)]
    pub p1_accuracy: f64,
    #[arg(long, default_value_t = 3.0)]
    pub stream_margin: f64,
    #[arg(long, default_value_t = 0.5)]
    pub stream_noise: f64,
    #[arg(long, default_value_t = 0.05)]
    pub flat_noise: f64,
    #[arg(long, default_value_t = 0.25)]
    pub attribute_visibility: f64,
    #[arg(long, default_value_t = 32)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 8.0)]
    pub prototype_norm: f64,
    #[arg(long, default_value_t = 0.5)]
    pub feature_noise: f64,
    #[arg(long, default_value_t = 64)]
    pub embedding_dim: usize,
}

impl SynthArgs {
    pub fn config(&self) -> SyntheticConfig {
        SyntheticConfig {
            num_classes: self.num_classes as usize,
            num_videos: self.num_videos as usize,
            test_fraction: self.test_fraction,
            low_confidence_fraction: self.low_confidence_fraction,
            p1_accuracy: self.p1_accuracy,
            stream_margin: self.stream_margin,
            stream_noise: self.stream_noise,
            flat_noise: self.flat_noise,
            attribute_visibility: self.attribute_visibility,
            feature_dim: self.feature_dim,
            prototype_norm: self.prototype_norm,
            feature_noise: self.feature_noise,
            embedding_dim: self.embedding_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FilterFlags {
    #[arg(long, default_value_t = 0.02)]
    pub min_confidence: f64,
    #[arg(long, default_value_t = 20)]
    pub min_side_px: u32,
    /// Comma-separated words that mark a detection as a person.
    #[arg(long, value_delimiter = ',', default_value = "person")]
    pub person_words: Vec<String>,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub t_sim: f64,
}

impl FilterFlags {
    pub fn config(&self) -> FilterConfig<f64> {
        FilterConfig {
            min_confidence: self.min_confidence,
            min_side_px: self.min_side_px,
            person_words: self.person_words.iter().map(|w| w.to_lowercase()).collect::<BTreeSet<_>>(),
            t_sim: self.t_sim,
        }
    }
}

/// Optimizer settings; the seed is supplied by the owning command.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainFlags {
    #[arg(long, default_value_t = 0.001)]
    pub initial_lr: f64,
    #[arg(long, default_value_t = 0.1)]
    pub decay_factor: f64,
    #[arg(long, default_value_t = 10)]
    pub decay_every_epochs: usize,
    #[arg(long, default_value_t = 0.7)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0005)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 20)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
}

impl TrainFlags {
    pub fn config(&self, seed: u64) -> TrainConfig<f64> {
        TrainConfig {
            initial_lr: self.initial_lr,
            decay_factor: self.decay_factor,
            decay_every_epochs: self.decay_every_epochs,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PipelineFlags {
    #[arg(long, default_value = "revised", value_parser = ["revised", "original"])]
    pub fusion: String,
    #[arg(long, default_value_t = 0.6)]
    pub w_spatial: f64,
    #[arg(long, default_value_t = 0.4)]
    pub w_temporal: f64,
    #[arg(long, default_value_t = 0.1)]
    pub gate_threshold: f64,
}

impl PipelineFlags {
    pub fn config(&self, filter: &FilterFlags) -> a3d::Result<PipelineConfig<f64>> {
        Ok(PipelineConfig {
            fusion: self.fusion.parse::<FusionKind>()?,
            weights: FusionWeights::new(self.w_spatial, self.w_temporal)?,
            filter: filter.config(),
            gate: GateConfig::new(self.gate_threshold)?,
        })
    }
}

const STRATEGIES: [&str; 3] = ["mean-pool", "netvlad", "attr-classifier"];

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub synth: SynthArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FilterArgs {
    /// Detections file to filter.
    #[arg(long)]
    pub detections: PathBuf,
    /// Also apply the label-relevance filter, using each video's true label.
    #[arg(long, requires = "dataset")]
    pub relevance: bool,
    /// Dataset directory supplying labels and embeddings for `--relevance`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub filter: FilterFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EncodeArgs {
    /// Detections file; records without a feature are ignored.
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long, default_value = "mean-pool", value_parser = ["mean-pool", "netvlad"])]
    pub encoder: String,
    #[arg(long, default_value_t = 8)]
    pub clusters: usize,
    /// NetVLAD model file from `train --strategy netvlad`; without it the
    /// layer is initialized from the input features.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "attr-classifier", value_parser = STRATEGIES)]
    pub strategy: String,
    #[arg(long, default_value_t = 8)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub filter: FilterFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "test", value_parser = ["test", "train", "all"])]
    pub split: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub pipeline: PipelineFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub filter: FilterFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Samples file with split assignments and true labels.
    #[arg(long)]
    pub samples: PathBuf,
    /// Prediction files, comma-separated or repeated.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub predictions: Vec<PathBuf>,
    #[arg(long, default_value = "test", value_parser = ["test", "train", "all"])]
    pub split: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DemoArgs {
    /// Seeds both data generation and training.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "attr-classifier", value_parser = STRATEGIES)]
    pub strategy: String,
    #[arg(long, default_value_t = 8)]
    pub clusters: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub synth: SynthArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub pipeline: PipelineFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub filter: FilterFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}
