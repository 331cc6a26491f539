use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "wmtrace",
    version,
    about = "Invisible image watermarking with statistically controlled detection and tracing",
    subcommand_required = false,
    arg_required_else_help = true
)]
pub struct Cli {
    /// Output style on standard output.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Worker threads for corpus and simulation commands.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Also write the JSON output to this file.
    #[arg(long, global = true, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// Write detection curve points (tau, fpr_theoretical, tpr, transform) as CSV.
    #[arg(long, global = true, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    /// Replay the run recorded in a config or report JSON file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Psnr,
    Ssim,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a codec key file.
    Keygen(KeygenArgs),
    /// Fit a whitening transform on unmarked images and store it in a new key file.
    WhitenFit(WhitenFitArgs),
    /// Embed a signature into an image.
    Embed(EmbedArgs),
    /// Extract the bits carried by an image.
    Extract(ExtractArgs),
    /// Test an image against one signature; exits 3 when not flagged.
    Detect(DetectArgs),
    /// Attribute an image to one of several signatures.
    Identify(IdentifyArgs),
    /// Pass an image through a transform, or bits through a binary symmetric channel.
    Channel(ChannelArgs),
    /// Bit accuracy and detection rates under a list of transforms.
    BenchRobustness(BenchRobustnessArgs),
    /// Monte Carlo identification among many users.
    SimIdentify(SimIdentifyArgs),
    /// Two-colluder averaging simulation.
    SimCollusion(SimCollusionArgs),
    /// Empirical false positive rate against the closed form.
    ValidateFpr(ValidateFprArgs),
    /// White-box removal under a PSNR budget.
    AttackRemove(AttackRemoveArgs),
    /// White-box forgery of a signature under a PSNR budget.
    AttackForge(AttackForgeArgs),
    /// Image quality between two images.
    Metric(MetricArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Keygen(_) => "keygen",
            Self::WhitenFit(_) => "whiten-fit",
            Self::Embed(_) => "embed",
            Self::Extract(_) => "extract",
            Self::Detect(_) => "detect",
            Self::Identify(_) => "identify",
            Self::Channel(_) => "channel",
            Self::BenchRobustness(_) => "bench-robustness",
            Self::SimIdentify(_) => "sim-identify",
            Self::SimCollusion(_) => "sim-collusion",
            Self::ValidateFpr(_) => "validate-fpr",
            Self::AttackRemove(_) => "attack-remove",
            Self::AttackForge(_) => "attack-forge",
            Self::Metric(_) => "metric",
        }
    }
}

/// Image source for corpus commands: files and directories, or generated images.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CorpusArgs {
    /// PNG or PPM files, or directories holding them.
    #[arg(long, num_args = 1.., value_name = "PATH")]
    pub images: Vec<PathBuf>,
    /// Generate this many synthetic images instead of reading files.
    #[arg(long, value_name = "COUNT", conflicts_with = "images")]
    pub synthetic: Option<usize>,
    /// Side of generated images.
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    /// First seed of generated images.
    #[arg(long, default_value_t = 0)]
    pub corpus_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct KeygenArgs {
    #[arg(long, value_parser = ["dctdwt", "spreadspectrum"], default_value = "spreadspectrum")]
    pub codec: String,
    /// Payload length in bits.
    #[arg(long, default_value_t = 48)]
    pub k: usize,
    #[arg(long)]
    pub seed: u64,
    /// Spread-spectrum embedding strength.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Quantization step of the DCT-DWT codec.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct WhitenFitArgs {
    #[arg(long)]
    pub key: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Eigenvalue floor; defaults to a fraction of the mean variance.
    #[arg(long)]
    pub eigen_floor: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub key: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Bit string to embed; defaults to the signature derived from the key.
    #[arg(long)]
    pub message: Option<String>,
    /// Use loss-driven embedding with this perceptual weight (spread spectrum only).
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 10, requires = "lambda")]
    pub steps: usize,
    #[arg(long, default_value_t = 0.1, requires = "lambda")]
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub key: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DetectArgs {
    #[arg(long)]
    pub key: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Reference bit string; defaults to the signature derived from the key.
    #[arg(long)]
    pub message: Option<String>,
    /// Target false positive rate.
    #[arg(long, default_value_t = 1e-6)]
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct IdentifyArgs {
    #[arg(long)]
    pub key: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Text file with one bit string per user; blank lines and `#` comments are skipped.
    #[arg(long)]
    pub signatures: PathBuf,
    /// Global false positive rate over all users.
    #[arg(long, default_value_t = 1e-6)]
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[command(group(ArgGroup::new("mode").required(true).args(["transform", "bsc"])))]
pub struct ChannelArgs {
    /// Image transform such as `jpeg:80`, `crop:0.5` or `combined`.
    #[arg(long, requires_all = ["image", "out"])]
    pub transform: Option<String>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-bit survival probability of a binary symmetric channel.
    #[arg(long, requires = "message")]
    pub bsc: Option<f64>,
    #[arg(long)]
    pub message: Option<String>,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BenchRobustnessArgs {
    #[arg(long)]
    pub key: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Comma-separated transforms; defaults to the standard evaluation set.
    #[arg(long, value_delimiter = ',')]
    pub transforms: Vec<String>,
    /// Random messages embedded per image.
    #[arg(long, default_value_t = 1)]
    pub n_keys: usize,
    /// Comma-separated target false positive rates for the detection rows.
    #[arg(long, value_delimiter = ',', default_value = "1e-6")]
    pub fpr: Vec<f64>,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimIdentifyArgs {
    #[arg(long, default_value_t = 48)]
    pub k: usize,
    /// Comma-separated bit accuracies of simulated channels.
    #[arg(long, value_delimiter = ',')]
    pub p: Vec<f64>,
    /// Comma-separated image transforms; needs --key and a corpus.
    #[arg(long, value_delimiter = ',', requires = "key")]
    pub transforms: Vec<String>,
    #[arg(long)]
    pub key: Option<PathBuf>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value_t = 100)]
    pub n_users: usize,
    /// Extra signatures that only compete in the attribution.
    #[arg(long, default_value_t = 0)]
    pub n_decoys: usize,
    /// Trials per user.
    #[arg(long, default_value_t = 100)]
    pub images_per_user: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub fpr: f64,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimCollusionArgs {
    #[arg(long, default_value_t = 48)]
    pub k: usize,
    /// Bit accuracy where the colluders agree.
    #[arg(long, default_value_t = 0.9)]
    pub p: f64,
    /// Total simulated bits.
    #[arg(long, default_value_t = 48_000)]
    pub bits: u64,
    #[arg(long, default_value_t = wmtrace::tracing::DEFAULT_MESSAGES_PER_TRIAL)]
    pub messages_per_trial: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ValidateFprArgs {
    /// Payload length; 48 unless taken from --key.
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated thresholds.
    #[arg(long, value_delimiter = ',', required = true)]
    pub tau: Vec<usize>,
    #[arg(long, default_value_t = 1_000_000)]
    pub trials: u64,
    /// Decode unmarked images with this key instead of drawing fair coins.
    #[arg(long)]
    pub key: Option<PathBuf>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AttackRemoveArgs {
    /// Key the attacker optimizes against.
    #[arg(long)]
    pub key: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 26.0)]
    pub psnr_floor: f64,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AttackForgeArgs {
    #[arg(long)]
    pub key: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Victim bit string; defaults to the signature derived from the key.
    #[arg(long)]
    pub message: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    pub psnr_floor: f64,
    /// False positive rate used to judge whether the forgery is flagged.
    #[arg(long, default_value_t = 1e-6)]
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct MetricArgs {
    #[arg(value_enum)]
    pub metric: Metric,
    pub a: PathBuf,
    pub b: PathBuf,
}
