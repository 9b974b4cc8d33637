use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use dynsplat::eval::metrics_text;
use dynsplat::pipeline::{run, DatasetSpec, PipelineConfig};

#[derive(Parser)]
#[command(name = "dynsplat", version, about = "RGB-D SLAM with a static Gaussian map for dynamic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process a sequence and write trajectory, metrics, renders and the map.
    Run(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// `key = value` configuration file; absent keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// TUM-layout directory or `synthetic:<name>[:<frames>]`.
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Use the raw masks without background-model refinement.
    #[arg(long)]
    no_prior_mask: bool,
    /// Use the fixed base threshold instead of the mask-adaptive one.
    #[arg(long)]
    no_adaptive_features: bool,
    #[arg(long)]
    dump_masks: bool,
    #[arg(long)]
    dump_features: bool,
}

fn execute(args: RunArgs) -> anyhow::Result<()> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    cfg.dataset = Some(args.dataset.parse::<DatasetSpec>()?);
    cfg.out_dir = Some(args.out.clone());
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.prior_mask &= !args.no_prior_mask;
    cfg.features.adaptive &= !args.no_adaptive_features;
    cfg.dump_masks |= args.dump_masks;
    cfg.dump_features |= args.dump_features;

    let out = run(&cfg)?;
    print!("{}", metrics_text(&out.metrics()));
    log::info!("artifacts written to {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let Cli { command } = Cli::parse();
    let result = match command {
        Command::Run(args) => execute(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
