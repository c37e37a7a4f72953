//! Command-line surface for patch-based normal estimation: estimation and
//! evaluation, training, neighbourhood sweeps, registration runs, attention
//! export, and synthetic shape generation.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "patchnorm", version, about = "Point-cloud normal estimation toolkit")]
struct Cli {
    /// RNG seed; every subcommand is deterministic given its flags and seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for generated files (created if missing).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// TOML config file supplying defaults; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate normals for a cloud and score them when ground truth exists.
    Estimate(EstimateArgs),
    /// Train the attention model on synthetic shapes or a dataset manifest.
    Train(TrainArgs),
    /// Score a predicted normals file against a ground-truth one.
    Eval(EvalArgs),
    /// Evaluate estimators across a grid of neighbourhood sizes.
    #[command(name = "sweep-k")]
    SweepK(SweepArgs),
    /// Register perturbed shapes with point-to-plane ICP.
    Icp(IcpArgs),
    /// Export attention maps for selected patches.
    #[command(name = "attn-dump")]
    AttnDump(AttnDumpArgs),
    /// Generate a synthetic shape with analytic normals.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum Estimator {
    Pca,
    Jet,
    Tmhsa,
    Gt,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Pca => "pca",
            Estimator::Jet => "jet",
            Estimator::Tmhsa => "tmhsa",
            Estimator::Gt => "gt",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum SyntheticPreset {
    /// Spheres, cuboids, and creased planes in equal parts.
    Mixed,
    /// Creased planes only.
    Creases,
    /// Cuboids only.
    Cubes,
}

#[derive(Args)]
struct EstimateArgs {
    /// Input cloud (.xyz).
    #[arg(long)]
    input: PathBuf,
    /// Ground-truth normals; defaults to the input's .normals sibling.
    #[arg(long)]
    normals: Option<PathBuf>,
    #[arg(long, value_enum)]
    estimator: Option<Estimator>,
    /// Neighbourhood size (tmhsa uses the checkpoint's own k).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Evaluate only the points listed in this .pidx file.
    #[arg(long)]
    pidx: Option<PathBuf>,
    /// Evaluate a seeded random subset of this many points.
    #[arg(long)]
    subsample: Option<usize>,
    /// PGP thresholds in degrees, comma separated.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
}

#[derive(Args)]
struct TrainArgs {
    /// Synthetic data preset (mutually exclusive with --dataset).
    #[arg(long, value_enum, conflicts_with = "dataset")]
    synthetic: Option<SyntheticPreset>,
    /// Dataset root containing <name>.xyz/.normals files.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Split file (one shape name per line) under the dataset root.
    #[arg(long, requires = "dataset")]
    split: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    lr_decay_epochs: Option<Vec<usize>>,
    #[arg(long)]
    lr_decay_factor: Option<f64>,
    /// Keep the softmax temperature fixed at its initial value.
    #[arg(long)]
    freeze_temperature: bool,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    /// Shapes per kind in the synthetic preset.
    #[arg(long)]
    shapes_per_kind: Option<usize>,
    #[arg(long)]
    points_per_shape: Option<usize>,
    /// Training patches sampled per shape.
    #[arg(long)]
    patches_per_shape: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted normals file.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth normals file.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
}

#[derive(Args)]
struct SweepArgs {
    /// Input clouds with .normals siblings; omit to use --synthetic.
    #[arg(long)]
    input: Vec<PathBuf>,
    #[arg(long, value_enum)]
    synthetic: Option<SyntheticPreset>,
    /// Neighbourhood sizes to sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Estimators to sweep (tmhsa contributes one row at its own k).
    #[arg(long, value_enum, value_delimiter = ',')]
    estimators: Option<Vec<Estimator>>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Evaluation sites sampled per cloud.
    #[arg(long)]
    samples_per_cloud: Option<usize>,
    #[arg(long)]
    shape_count: Option<usize>,
    #[arg(long)]
    points_per_shape: Option<usize>,
}

#[derive(Args)]
struct IcpArgs {
    /// Destination clouds; omit to use a synthetic cuboid suite.
    #[arg(long)]
    input: Vec<PathBuf>,
    /// Number of synthetic cuboids when no inputs are given.
    #[arg(long)]
    shape_count: Option<usize>,
    #[arg(long)]
    points_per_shape: Option<usize>,
    /// Source of destination normals.
    #[arg(long, value_enum)]
    normal_source: Option<Estimator>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Perturbation rotation per axis, degrees: x,y,z.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    rot_deg: Option<Vec<f64>>,
    /// Perturbation translation: x,y,z.
    #[arg(long, value_delimiter = ',', num_args = 3, allow_hyphen_values = true)]
    trans: Option<Vec<f64>>,
    #[arg(long)]
    stop_threshold: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    max_iterations: Option<u64>,
}

#[derive(Args)]
struct AttnDumpArgs {
    /// Input cloud (.xyz).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Explicit patch centre indices, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "num_patches")]
    patch_indices: Option<Vec<usize>>,
    /// Seeded random number of patch centres.
    #[arg(long)]
    num_patches: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    /// sphere | cube | cylinder | torus | creased-plane
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    count: Option<usize>,
    /// Output file stem; defaults to the kind.
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long, value_delimiter = ',', num_args = 3)]
    half_extents: Option<Vec<f64>>,
    #[arg(long)]
    height: Option<f64>,
    #[arg(long)]
    major_radius: Option<f64>,
    #[arg(long)]
    minor_radius: Option<f64>,
    #[arg(long)]
    half_width: Option<f64>,
    #[arg(long)]
    half_depth: Option<f64>,
    #[arg(long)]
    dihedral_deg: Option<f64>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let ctx = match config::Context::resolve(cli.seed, cli.out_dir, cli.config.as_deref()) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("error: {:#}", e);
            std::process::exit(1);
        }
    };
    let result = match cli.command {
        Command::Estimate(args) => commands::estimate::run(&args, &ctx),
        Command::Train(args) => commands::train::run(&args, &ctx),
        Command::Eval(args) => commands::eval::run(&args, &ctx),
        Command::SweepK(args) => commands::sweep::run(&args, &ctx),
        Command::Icp(args) => commands::icp::run(&args, &ctx),
        Command::AttnDump(args) => commands::attn::run(&args, &ctx),
        Command::Synth(args) => commands::synth::run(&args, &ctx),
    };
    if let Err(e) = result {
        eprintln!("error: {:#}", e);
        std::process::exit(1);
    }
}
