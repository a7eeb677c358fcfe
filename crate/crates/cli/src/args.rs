use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use espew_core::key::Method;
use espew_core::simulate::{EmbedderConfig, PlotKind, SyntheticConfig};

#[derive(Debug, Parser)]
#[command(name = "espew", version, about = "Embedding watermark injection, verification and attack runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus file.
    Corpus(CorpusArgs),
    /// Select trigger tokens from a corpus frequency band.
    Triggers(TriggersArgs),
    /// Embed a corpus through the watermarked victim service.
    Inject(InjectArgs),
    /// Run the verification protocol against a service.
    Verify(VerifyArgs),
    /// Apply a removal attack to an embedding matrix.
    Attack(AttackArgs),
    /// Run the method x attack grid on the synthetic world.
    Experiment(ExperimentArgs),
    /// Emit the table behind one of the standard figures.
    Plot(PlotArgs),
    /// Serve the watermarked victim model over HTTP.
    Serve(ServeArgs),
}

/// The victim model. Dimension is taken from the key when it has a target.
#[derive(Debug, Clone, Copy, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
    #[arg(long, default_value_t = SyntheticConfig::default().dim)]
    pub dim: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().sparsity)]
    pub sparsity: f64,
    #[arg(long, default_value_t = SyntheticConfig::default().noise_floor)]
    pub noise_floor: f64,
}

impl ModelArgs {
    pub fn embedder(&self, dim: usize) -> EmbedderConfig {
        EmbedderConfig {
            dim,
            sparsity: self.sparsity,
            noise_floor: self.noise_floor,
            model_seed: self.model_seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = SyntheticConfig::default().corpus_size)]
    pub size: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().vocab_size)]
    pub vocab_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TriggersArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Document-frequency band as LOW,HIGH.
    #[arg(long, default_value = "0.005,0.01", value_parser = parse_band)]
    pub band: (f64, f64),
    #[arg(long, default_value_t = espew_core::triggers::DEFAULT_TRIGGER_COUNT)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    None,
    Espew,
    Embmarker,
    Warden,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::None => Method::None,
            MethodArg::Espew => Method::Espew,
            MethodArg::Embmarker => Method::EmbMarker,
            MethodArg::Warden => Method::Warden,
        }
    }
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long, default_value_t = espew_core::key::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Key file. Created from the corpus when absent, otherwise reused and
    /// required to match --method and --alpha.
    #[arg(long)]
    pub key: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output embedding matrix, one row per corpus document.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for trigger selection and the target sample of a new key.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "0.005,0.01", value_parser = parse_band)]
    pub band: (f64, f64),
    #[arg(long, default_value_t = espew_core::triggers::DEFAULT_TRIGGER_COUNT)]
    pub n: usize,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// `inline` for the in-process victim service, otherwise a base URL.
    #[arg(long)]
    pub service: String,
    #[arg(long)]
    pub key: PathBuf,
    /// Key the inline service watermarks with; defaults to --key.
    #[arg(long)]
    pub service_key: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub nb: usize,
    #[arg(long, default_value_t = 100)]
    pub nn: usize,
    #[arg(long, default_value_t = 8)]
    pub doc_len: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: PathBuf,
    /// Fetch the target through the service instead of reading it from the key.
    #[arg(long)]
    pub permuted_target: bool,
    /// Exit with status 4 when the service is judged a copy.
    #[arg(long)]
    pub expect_clean: bool,
    /// Corpus whose tokens form the benign vocabulary; the synthetic
    /// vocabulary is used otherwise.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = SyntheticConfig::default().vocab_size)]
    pub vocab_size: usize,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttackKind {
    Cse,
    Dropout,
    Permute,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long, value_enum)]
    pub kind: AttackKind,
    /// Principal components removed by CSE.
    #[arg(long, default_value_t = 50)]
    pub k: usize,
    /// Dropout rate.
    #[arg(long, default_value_t = 0.3)]
    pub rate: f64,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = espew_core::CseConfig::default().pair_sample)]
    pub pair_sample: usize,
    #[arg(long, default_value_t = espew_core::CseConfig::default().outlier_sigma)]
    pub sigma: f64,
    /// Embeddings of the same texts from an independent model; CSE then
    /// scores pairs by how much more similar they are in the input.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridName {
    Default,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, value_enum, default_value = "default")]
    pub grid: GridName,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving grid.tsv and grid.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long, value_parser = parse_plot_kind)]
    pub kind: PlotKind,
    /// Embedding matrix; histogram and scatter need it, harmlessness
    /// reads it as the clean embeddings when given.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub key: Option<PathBuf>,
    /// Synthetic world seed for figures computed from scratch.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long)]
    pub key: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LOW,HIGH")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(format!("band {lo},{hi} must satisfy 0 <= low <= high <= 1"));
    }
    Ok((lo, hi))
}

fn parse_plot_kind(s: &str) -> Result<PlotKind, String> {
    s.parse().map_err(|e: espew_core::Error| e.to_string())
}
