use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "mohets", version, about = "Train, evaluate and ablate MoHETS forecasters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoints, log and manifest.
    Train(TrainArgs),
    /// Score a checkpoint on the test segment at several horizons.
    Eval(EvalArgs),
    /// Roll a checkpoint forward from the end of a series.
    Forecast(ForecastArgs),
    /// Train and compare architecture variants along one axis.
    Ablate(AblateArgs),
    /// Finite-difference check of the tensor ops and the full model.
    Gradcheck(GradcheckArgs),
    /// Train and compare output resolutions or model sizes.
    Sweep(SweepArgs),
}

/// Where the series comes from.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV with a timestamp column and one numeric column per variate.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Use a generated multi-sine series instead of a file.
    #[arg(long)]
    pub synthetic: bool,
    /// Dataset name for split and default lookup; the file stem otherwise.
    #[arg(long)]
    pub dataset_name: Option<String>,
    #[arg(long, default_value = "date")]
    pub timestamp_column: String,
    #[arg(long, default_value_t = 7)]
    pub synthetic_variates: usize,
    #[arg(long, default_value_t = 4000)]
    pub synthetic_len: usize,
    #[arg(long, default_value_t = 0.1)]
    pub synthetic_noise: f64,
}

/// Architecture selection; later sources override earlier ones:
/// preset, dataset defaults, `--config`, flags.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// tiny, small, base or large.
    #[arg(long)]
    pub preset: Option<String>,
    /// JSON file with optional `model`, `train` and `data` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Patch length P.
    #[arg(long)]
    pub patch: Option<usize>,
    /// Output resolution H_o.
    #[arg(long)]
    pub hout: Option<usize>,
    /// Look-back window L.
    #[arg(long)]
    pub lookback: Option<usize>,
    /// Disable calendar covariates and cross-attention.
    #[arg(long)]
    pub no_covariates: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainingArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub min_lr: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Disable global gradient-norm clipping.
    #[arg(long)]
    pub no_clip: bool,
    #[arg(long)]
    pub max_val_windows: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Run directory; every artifact is written inside it.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    #[arg(long, env = "MOHETS_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; the engine is single-threaded, so this is only recorded.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RenormArg {
    PerChunk,
    Frozen,
}

#[derive(Debug, Clone, Args)]
pub struct EvalFlags {
    #[arg(long, value_delimiter = ',', default_value = "96,192,336,720")]
    pub horizons: Vec<usize>,
    /// Distance between test windows; H_o by default.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, value_enum, default_value_t = RenormArg::PerChunk)]
    pub renorm: RenormArg,
    /// Evenly thin the test windows to at most this many.
    #[arg(long)]
    pub max_windows: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub batch_windows: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub eval: EvalFlags,
    /// Also score the repeat-last and seasonal naive forecasts.
    #[arg(long)]
    pub baselines: bool,
    /// Period of the seasonal naive baseline.
    #[arg(long, default_value_t = 24)]
    pub season: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 96)]
    pub horizon: usize,
    /// Write one SVG per variate.
    #[arg(long)]
    pub plot: bool,
    /// Forecast the last `horizon` known points instead of the unknown future.
    #[arg(long)]
    pub backtest: bool,
    #[arg(long, value_enum, default_value_t = RenormArg::PerChunk)]
    pub renorm: RenormArg,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationAxis {
    Experts,
    Norm,
    Head,
    Covariates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    /// Output resolution H_o.
    Hout,
    /// Model size presets.
    Scale,
}

/// Settings shared by the variant-comparison commands.
#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[command(flatten)]
    pub eval: EvalFlags,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub axis: AblationAxis,
    #[command(flatten)]
    pub compare: CompareArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub axis: SweepAxis,
    /// H_o values for `hout`, preset names for `scale`.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<String>,
    #[command(flatten)]
    pub compare: CompareArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "tiny")]
    pub preset: String,
    #[arg(long, env = "MOHETS_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Parameter probes per group (router, Fourier FFN, shared gate, decoder, other).
    #[arg(long, default_value_t = 12)]
    pub probes_per_group: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    /// Pass threshold for the model check.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Pass threshold for the op suite.
    #[arg(long, default_value_t = 1e-6)]
    pub op_tol: f64,
    /// Random points per op.
    #[arg(long, default_value_t = 10)]
    pub op_points: usize,
    /// Windows in the model probe batch.
    #[arg(long, default_value_t = 1)]
    pub windows: usize,
    /// Check the inference-mode graph (no dropout or DropPath) instead of training mode.
    #[arg(long)]
    pub inference: bool,
    /// Add an op with a deliberately wrong adjoint; the check must fail on it.
    #[arg(long)]
    pub corrupt_fixture: bool,
    /// Only run the op suite.
    #[arg(long)]
    pub skip_model: bool,
    /// Also write the report and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
