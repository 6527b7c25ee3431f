use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cwaug::knn::Metric;
use cwaug::{CwssimParams, NormMode, PadMode, PyramidParams};

mod commands;
mod manifest;

use commands::Failure;

#[derive(Debug, Parser)]
#[command(name = "cwaug", version, about = "Elastic augmentation with a CW-SSIM quality gate")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Deform every image once.
    Deform(DeformArgs),
    /// Deform, score and keep candidates above the threshold.
    Augment(AugmentArgs),
    /// Grid of augment + k-NN runs over alpha, sigma and threshold lists.
    Sweep(SweepArgs),
    /// Print the CW-SSIM index of two images.
    Cwssim(CwssimArgs),
    /// k-NN error rate of a training set on a test set.
    Eval(EvalArgs),
    /// Score distribution of one candidate per image, with optional dumps.
    Stats(StatsArgs),
    /// Re-run the command recorded in a manifest and compare outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ElasticOpts {
    #[arg(long, default_value_t = 8.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 34.0)]
    pub sigma: f64,
    /// Field normalization: per-pixel unit vectors or one global scale.
    #[arg(long, value_parser = parse_norm, default_value = "perpixel")]
    pub norm: NormMode,
}

#[derive(Debug, Clone, Args)]
pub struct CwssimOpts {
    /// Stabilizing constant K.
    #[arg(long = "k-const", default_value_t = 0.03)]
    pub k_const: f64,
    #[arg(long, default_value_t = 7)]
    pub window: usize,
    #[arg(long, default_value_t = 1)]
    pub step: usize,
    /// Comma-separated 1-based pyramid levels to average.
    #[arg(long = "levels-used", value_delimiter = ',', default_value = "2")]
    pub levels_used: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    #[arg(long, default_value_t = 6)]
    pub orientations: usize,
    /// Padded FFT side (default: next power of two).
    #[arg(long = "pad-to")]
    pub pad_to: Option<usize>,
    #[arg(long = "pad-mode", value_parser = parse_pad_mode, default_value = "replicate")]
    pub pad_mode: PadMode,
}

impl CwssimOpts {
    pub fn params(&self) -> CwssimParams {
        CwssimParams {
            k: self.k_const,
            window: self.window,
            step: self.step,
            levels_used: self.levels_used.clone(),
            pyramid: PyramidParams {
                levels: self.levels,
                orientations: self.orientations,
                pad_to: self.pad_to,
                pad_mode: self.pad_mode,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct DeformArgs {
    #[arg(long = "in", alias = "input")]
    pub input: PathBuf,
    #[arg(long = "out", alias = "output")]
    pub output: PathBuf,
    #[command(flatten)]
    pub elastic: ElasticOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long = "out-images")]
    pub out_images: PathBuf,
    #[arg(long = "out-labels")]
    pub out_labels: PathBuf,
    #[command(flatten)]
    pub elastic: ElasticOpts,
    #[command(flatten)]
    pub cwssim: CwssimOpts,
    #[arg(long, default_value_t = cwaug::AugmentConfig::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1)]
    pub multiplier: usize,
    #[arg(long, default_value_t = 10)]
    pub attempts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-candidate CSV path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Directory for graymaps of every rejected candidate.
    #[arg(long = "dump-rejected")]
    pub dump_rejected: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Separate test set; without it the test split comes from --images.
    #[arg(long = "test-images", requires = "test_labels")]
    pub test_images: Option<PathBuf>,
    #[arg(long = "test-labels", requires = "test_images")]
    pub test_labels: Option<PathBuf>,
    /// List `a,b,c` or inclusive range `start:end:step`.
    #[arg(long)]
    pub alphas: String,
    #[arg(long, default_value = "34")]
    pub sigmas: String,
    #[arg(long, default_value = "0.7")]
    pub thresholds: String,
    #[arg(long, value_parser = parse_norm, default_value = "perpixel")]
    pub norm: NormMode,
    #[command(flatten)]
    pub cwssim: CwssimOpts,
    #[arg(long, default_value_t = 1)]
    pub multiplier: usize,
    #[arg(long, default_value_t = 10)]
    pub attempts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Training items drawn from --images (default: all, or 500 when the
    /// test split also comes from --images).
    #[arg(long = "train-size")]
    pub train_size: Option<usize>,
    #[arg(long = "test-size")]
    pub test_size: Option<usize>,
    #[arg(long = "split-seed", default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long = "out", alias = "output")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct CwssimArgs {
    /// Two graymap files, or two indices when --idx is given.
    #[arg(num_args = 2, required = true)]
    pub operands: Vec<String>,
    #[arg(long)]
    pub idx: Option<PathBuf>,
    #[command(flatten)]
    pub cwssim: CwssimOpts,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long = "train-images")]
    pub train_images: PathBuf,
    #[arg(long = "train-labels")]
    pub train_labels: PathBuf,
    #[arg(long = "test-images")]
    pub test_images: PathBuf,
    #[arg(long = "test-labels")]
    pub test_labels: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, value_parser = parse_metric, default_value = "euclidean-pixel")]
    pub metric: Metric,
    #[command(flatten)]
    pub cwssim: CwssimOpts,
    #[arg(long = "train-subset")]
    pub train_subset: Option<usize>,
    #[arg(long = "test-subset")]
    pub test_subset: Option<usize>,
    #[arg(long = "subset-seed", default_value_t = 0)]
    pub subset_seed: u64,
    /// Write the JSON result here as well as to stdout.
    #[arg(long = "out", alias = "output")]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub images: PathBuf,
    #[command(flatten)]
    pub elastic: ElasticOpts,
    #[command(flatten)]
    pub cwssim: CwssimOpts,
    #[arg(long, default_value_t = cwaug::AugmentConfig::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Only the first N images.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Write source and candidate graymaps for candidates at or below the threshold.
    #[arg(long = "dump-rejected")]
    pub dump_rejected: Option<PathBuf>,
    /// Dump subband magnitude maps of this image index.
    #[arg(long, requires = "subband_dir")]
    pub subbands: Option<usize>,
    #[arg(long = "subband-dir")]
    pub subband_dir: Option<PathBuf>,
    #[arg(long = "out", alias = "output")]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

fn parse_norm(s: &str) -> Result<NormMode, String> {
    match s {
        "perpixel" | "per-pixel" => Ok(NormMode::PerPixel),
        "global" => Ok(NormMode::Global),
        _ => Err(format!("unknown normalization '{s}' (perpixel|global)")),
    }
}

fn parse_pad_mode(s: &str) -> Result<PadMode, String> {
    match s {
        "replicate" => Ok(PadMode::Replicate),
        "zero" => Ok(PadMode::Zero),
        _ => Err(format!("unknown pad mode '{s}' (replicate|zero)")),
    }
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    match s {
        "euclidean" | "euclidean-pixel" => Ok(Metric::EuclideanPixel),
        "cwssim" | "one-minus-cwssim" => Ok(Metric::OneMinusCwssim),
        _ => Err(format!("unknown metric '{s}' (euclidean-pixel|one-minus-cwssim)")),
    }
}

fn run(args: Vec<String>) -> Result<(), Failure> {
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { commands::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return if code == 0 { Ok(()) } else { Err(Failure::silent(code)) };
        }
    };
    let started = manifest::now();
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.threads {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| Failure::usage(format!("thread pool: {e}")))?
    };
    let name = command_name(&cli.command);
    let record = pool.install(|| match cli.command {
        Command::Deform(a) => commands::deform(&a),
        Command::Augment(a) => commands::augment(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Cwssim(a) => commands::cwssim(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Stats(a) => commands::stats(&a),
        Command::Replay(a) => replay(&a),
    })?;
    if let Some(path) = &record.manifest_path {
        let m = manifest::RunManifest::build(name, &args[1..], &record, started).map_err(Failure::io)?;
        m.write(path).map_err(Failure::io)?;
    }
    Ok(())
}

/// Re-runs a recorded command line and checks every recorded output digest.
fn replay(a: &ReplayArgs) -> Result<manifest::RunRecord, Failure> {
    let recorded = manifest::RunManifest::read(&a.manifest).map_err(Failure::io)?;
    if recorded.command == "replay" {
        return Err(Failure::usage("refusing to replay a replay"));
    }
    let mut argv = vec!["cwaug".to_string()];
    argv.extend(recorded.args.iter().cloned());
    run(argv)?;
    let mut mismatched = Vec::new();
    for out in &recorded.outputs {
        let now = manifest::FileDigest::of(&out.path).map_err(Failure::io)?;
        if now.sha256 != out.sha256 {
            mismatched.push(out.path.display().to_string());
        }
    }
    if !mismatched.is_empty() {
        return Err(Failure::new(
            commands::EXIT_FORMAT,
            anyhow::anyhow!("outputs differ from the manifest: {}", mismatched.join(", ")),
        ));
    }
    println!(
        "replayed {}: {} outputs match",
        recorded.command,
        recorded.outputs.len()
    );
    Ok(manifest::RunRecord::default())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Deform(_) => "deform",
        Command::Augment(_) => "augment",
        Command::Sweep(_) => "sweep",
        Command::Cwssim(_) => "cwssim",
        Command::Eval(_) => "eval",
        Command::Stats(_) => "stats",
        Command::Replay(_) => "replay",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if let Some(e) = &f.error {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(f.code)
        }
    }
}
