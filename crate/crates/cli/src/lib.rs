//! `gsimage` command-line tool: encode images to `.2dgs`, decode them,
//! train the two priors and benchmark initialization strategies.

pub mod bench;
pub mod corpus;
pub mod encode;
pub mod train;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub const THREADS_ENV: &str = "FAST2DGS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "gsimage", version, about = "2D Gaussian image codec")]
pub struct Cli {
    /// Worker threads for rendering; 1 gives bitwise-reproducible output.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit K Gaussians to an image and write a .2dgs file.
    Encode(EncodeArgs),
    /// Render a .2dgs file to PNG or PPM.
    Decode(DecodeArgs),
    /// Stage I: train the K-conditioned position prior.
    TrainPrior(TrainPriorArgs),
    /// Stage II: train the attribute network through the rasterizer.
    TrainAttr(TrainAttrArgs),
    /// Iteration-indexed PSNR / MS-SSIM table over a corpus.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitKind {
    Random,
    Gradient,
    Heatmap,
}

impl InitKind {
    pub fn name(self) -> &'static str {
        match self {
            InitKind::Random => "random",
            InitKind::Gradient => "gradient",
            InitKind::Heatmap => "heatmap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttrKind {
    Heuristic,
    Net,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Adam learning rate for the Gaussian parameters.
    #[arg(long, default_value_t = 2e-3)]
    pub lr: f64,
    /// Pixels per optimizer unit for Gaussian centres.
    #[arg(long, default_value_t = 1.0)]
    pub position_unit: f64,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    /// Number of Gaussians.
    #[arg(short = 'k', long = "k", value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[arg(long, value_enum, default_value_t = InitKind::Random)]
    pub init: InitKind,
    #[arg(long, default_value_t = 5000)]
    pub iters: usize,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Position-prior checkpoint manifest (required for --init heatmap).
    #[arg(long, required_if_eq("init", "heatmap"))]
    pub posnet: Option<PathBuf>,
    /// Attribute-network checkpoint manifest; heuristic attributes otherwise.
    #[arg(long)]
    pub attrnet: Option<PathBuf>,
    /// Write the `iteration,psnr,loss` trace here.
    #[arg(long)]
    pub trace_csv: Option<PathBuf>,
    /// Trace sampling interval in iterations.
    #[arg(long, default_value_t = 10)]
    pub log_every: usize,
    /// Write the sampling heatmap in raw f32 form.
    #[arg(long)]
    pub heatmap_raw: Option<PathBuf>,
    /// Write an 8-bit preview of the sampling heatmap.
    #[arg(long)]
    pub heatmap_png: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    pub input: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainCommon {
    /// Directory of PNG/PPM training images.
    pub corpus: PathBuf,
    /// Checkpoint manifest to write (the blob goes next to it as `.bin`).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 100)]
    pub k_min: usize,
    #[arg(long, default_value_t = 4000)]
    pub k_max: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Continue from this checkpoint; the step counter carries on.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// One `step,image,k,loss` row per step.
    #[arg(long)]
    pub trace_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainPriorArgs {
    #[command(flatten)]
    pub common: TrainCommon,
    /// Inner fitting iterations per step.
    #[arg(long, default_value_t = 300)]
    pub t_opt: usize,
    #[arg(long, default_value_t = 2e-3)]
    pub fit_lr: f64,
    #[arg(long, default_value_t = 1.0)]
    pub fit_position_unit: f64,
    /// Kernel width of the projection target.
    #[arg(long, default_value_t = gsimage::init::DEFAULT_SIGMA_PROJ)]
    pub sigma_proj: f64,
}

#[derive(Debug, Args)]
pub struct TrainAttrArgs {
    #[command(flatten)]
    pub common: TrainCommon,
    /// Frozen position prior that supplies the sampling heatmaps.
    #[arg(long, conflicts_with = "reference_heatmaps")]
    pub posnet: Option<PathBuf>,
    /// Directory of raw heatmaps named `<image stem>.heat`, used instead
    /// of a position prior.
    #[arg(long)]
    pub reference_heatmaps: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Directory of PNG/PPM evaluation images.
    pub corpus: PathBuf,
    /// CSV output: image,K,init,iteration,PSNR,MS-SSIM.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "500")]
    pub k: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "random")]
    pub init: Vec<InitKind>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "heuristic")]
    pub attributes: Vec<AttrKind>,
    /// Run the 2×2 grid {heatmap, random} × {net, heuristic} instead of the
    /// --init / --attributes lists.
    #[arg(long)]
    pub ablation: bool,
    /// Iteration checkpoints at which metrics are recorded.
    #[arg(long, value_delimiter = ',', default_value = "0,100,500")]
    pub iters: Vec<usize>,
    /// Seeds per configuration; rows report the mean over seeds.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub posnet: Option<PathBuf>,
    #[arg(long)]
    pub attrnet: Option<PathBuf>,
}

/// Runs a parsed command inside a pool of the requested size.
pub fn run(cli: Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        anyhow::ensure!(n >= 1, "--threads must be at least 1");
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("building thread pool")?;
    pool.install(|| match cli.command {
        Command::Encode(a) => encode::cmd_encode(&a),
        Command::Decode(a) => encode::cmd_decode(&a),
        Command::TrainPrior(a) => train::cmd_train_prior(&a),
        Command::TrainAttr(a) => train::cmd_train_attr(&a),
        Command::Bench(a) => bench::cmd_bench(&a),
    })
}
