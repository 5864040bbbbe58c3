use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "seqedit", version, about = "Detect ordered sequences of facial attribute edits")]
pub struct Cli {
    /// TOML file with one table per subcommand; flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic sequentially-edited dataset with its manifest.
    GenerateData(GenerateArgs),
    /// Draw balanced train/val/test splits from a manifest.
    Partition(PartitionArgs),
    /// Train a model on the train split, validating on val.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Evaluate a checkpoint on perturbed copies of one split.
    PerturbEval(PerturbArgs),
    /// Parse and check a manifest and the files it references.
    ValidateManifest(ValidateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenerateData(_) => "generate-data",
            Command::Partition(_) => "partition",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::PerturbEval(_) => "perturb-eval",
            Command::ValidateManifest(_) => "validate-manifest",
        }
    }
}

// Every field is optional so that a config file can fill what the command
// line leaves out; defaults are applied after the merge.

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GenerateArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Canvas side in pixels, a multiple of 16.
    #[arg(long)]
    pub size: Option<usize>,
    /// Relative weights of sequence lengths 0..=4, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 5)]
    pub length_weights: Option<Vec<f64>>,
    #[arg(long)]
    pub strength: Option<f64>,
    #[arg(long)]
    pub smoothing: Option<f64>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PartitionArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Where the split assignment JSON goes.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Records drawn per sequence length.
    #[arg(long)]
    pub per_length: Option<usize>,
    /// train:val:test, e.g. 8:1:1.
    #[arg(long)]
    pub ratios: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drop records whose edited image scores below this SSIM against its source.
    #[arg(long)]
    pub min_ssim: Option<f64>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// Run directory for the log and checkpoints.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run; its stored
    /// model and training settings are used.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Seeds both weight initialization and batch shuffling.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Defaults to the side of the first training image.
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub backbone_channels: Option<Vec<usize>>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub encoder_layers: Option<usize>,
    #[arg(long)]
    pub decoder_layers: Option<usize>,
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
    /// dwt, dct, fft or none.
    #[arg(long)]
    pub frequency: Option<String>,
    /// Low-frequency block removed by the dct method (default size/8).
    #[arg(long)]
    pub dct_block: Option<usize>,
    /// Fraction of Nyquist removed by the fft method.
    #[arg(long)]
    pub fft_radius: Option<f64>,
    #[arg(long)]
    pub freq_channels: Option<usize>,
    /// sinusoidal or learned.
    #[arg(long)]
    pub positional: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub pre_norm: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub cross_key_pos: Option<bool>,

    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub decay_interval: Option<usize>,
    #[arg(long)]
    pub decay_factor: Option<f64>,
    #[arg(long)]
    pub lr_transformer: Option<f64>,
    #[arg(long)]
    pub lr_backbone: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// sgd or adam.
    #[arg(long)]
    pub optimizer: Option<String>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// train, val or test.
    #[arg(long)]
    pub split: Option<String>,
    /// Report directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PerturbArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma list such as jpeg-25,noise-10; defaults to jpeg 25/50/75 and
    /// noise 10/15/20.
    #[arg(long, value_delimiter = ',')]
    pub perturbations: Option<Vec<String>>,
    /// Seed of the noise draws.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ValidateArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Also decode every referenced image and mask.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub check_files: Option<bool>,
}
