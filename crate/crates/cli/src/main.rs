//! Command-line driver: mask preparation, inpainter training, metric building,
//! scoring, evaluation and runtime benchmarking.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::RunConfig;

/// Errors caused by the invocation rather than the data; they exit with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "viewqual", version, about = "No-reference quality metric for view-synthesized images")]
struct Cli {
    /// Seed for every random choice in the run (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum MaskKind {
    #[value(name = "I", alias = "1")]
    I,
    #[value(name = "II", alias = "2")]
    II,
    #[value(name = "III", alias = "3")]
    III,
}

impl MaskKind {
    pub fn label(self) -> &'static str {
        match self {
            MaskKind::I => "I",
            MaskKind::II => "II",
            MaskKind::III => "III",
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate hole masks for a directory of images and write a training manifest.
    PrepareMasks(PrepareMasksArgs),
    /// Train the context inpainter on a manifest of (image, mask) pairs.
    TrainInpainter(TrainArgs),
    /// Fit logit normalisation, codebook and regressor from a checkpoint.
    BuildMetric(BuildMetricArgs),
    /// Score one image or every record of a manifest.
    Score(ScoreArgs),
    /// Cross-validate the metric against subjective scores.
    Evaluate(EvaluateArgs),
    /// Time the metric relative to PSNR.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug)]
pub struct PrepareMasksArgs {
    /// Directory of images; `<stem>.seg.png` label maps enable types I and II.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values = ["I", "II", "III"])]
    pub mask_types: Vec<MaskKind>,
    /// Where mask PNGs go; `<out dir>/masks` by default.
    #[arg(long)]
    pub mask_dir: Option<PathBuf>,
    #[arg(long)]
    pub dilation_radius: Option<usize>,
    #[arg(long)]
    pub superpixel_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch losses; `<out>.losses.tsv` by default.
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub width_divisor: Option<usize>,
    #[arg(long)]
    pub bottleneck: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BuildMetricArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Validation manifest with subjective scores.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the codebook as a standalone file.
    #[arg(long)]
    pub codebook_out: Option<PathBuf>,
    /// Also write the training histograms as tab-separated text.
    #[arg(long)]
    pub histograms_out: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// `all`, `boolean`, `threshold` or `threshold:<epsilon>`.
    #[arg(long)]
    pub selector: Option<String>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, requires = "svr_tube")]
    pub svr_c: Option<f64>,
    #[arg(long, requires = "svr_c")]
    pub svr_tube: Option<f64>,
    #[arg(long)]
    pub augment_rotations: bool,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_folds: Option<usize>,
    /// Scores file (`metric, record_key, score`) of competing metrics.
    #[arg(long)]
    pub external_scores: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub t_test: Option<TTestArg>,
    /// Write the per-record predictions as a scores file.
    #[arg(long)]
    pub scores_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TTestArg {
    Welch,
    Pooled,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global()?;
    }
    let cfg = RunConfig::load(cli.config.as_deref())?.with_seed(cli.seed);
    match cli.command {
        Command::PrepareMasks(a) => commands::prepare_masks(cfg, a),
        Command::TrainInpainter(a) => commands::train_inpainter(cfg, a),
        Command::BuildMetric(a) => commands::build_metric(cfg, a),
        Command::Score(a) => commands::score(cfg, a),
        Command::Evaluate(a) => commands::evaluate(cfg, a),
        Command::Benchmark(a) => commands::benchmark(cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
