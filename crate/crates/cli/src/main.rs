use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gradgrasp_cli::commands::{self, Common};
use gradgrasp_cli::config::RunConfig;
use gradgrasp_cli::CliResult;

/// Batch grasp planning on point clouds for URDF grippers.
#[derive(Parser)]
#[command(name = "gradgrasp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (directory for `batch`); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
    /// Recompute the gripper weight map instead of using the cache.
    #[arg(long)]
    no_cache: bool,
    /// Include wall times in the output.
    #[arg(long)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Plan grasps on one object.
    Plan {
        #[command(flatten)]
        common: CommonArgs,
        /// Point cloud; defaults to io.input.
        object: Option<PathBuf>,
        /// Number of initial poses.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Plan every point cloud in a directory.
    Batch {
        #[command(flatten)]
        common: CommonArgs,
        dir: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Refine given poses under a ladder of inner-step budgets.
    Refine {
        #[command(flatten)]
        common: CommonArgs,
        /// JSONL poses (grasp records or rotation/translation/joints rows).
        poses: PathBuf,
        object: Option<PathBuf>,
        /// Comma-separated budgets; 0 is always added.
        #[arg(long, value_delimiter = ',', default_value = "10")]
        steps: Vec<usize>,
    },
    /// Plan with anchors restricted to labelled points.
    Masked {
        #[command(flatten)]
        common: CommonArgs,
        object: Option<PathBuf>,
        /// One integer label per cloud point.
        #[arg(long)]
        labels: PathBuf,
        /// Comma-separated label ids allowed as anchors.
        #[arg(long, value_delimiter = ',', required = true)]
        mask: Vec<i64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Valid proportion under Gaussian position noise, as CSV.
    NoiseSweep {
        #[command(flatten)]
        common: CommonArgs,
        object: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.002,0.005,0.01")]
        sigmas: Vec<f64>,
        /// Seeds per sigma; the median proportion is reported.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Compute and cache the gripper weight map, write a PLY preview.
    Weightmap {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn common(args: &CommonArgs) -> CliResult<Common> {
    let mut c = Common::new(RunConfig::load(&args.config)?);
    c.seed = args.seed;
    c.out = args.out.clone();
    c.jobs = args.jobs;
    c.use_cache = !args.no_cache;
    c.timing = args.timing;
    Ok(c)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Plan { common: a, object, samples } => {
            commands::plan(&common(&a)?, object.as_deref(), samples)?;
        }
        Command::Batch { common: a, dir, samples } => {
            let m = commands::batch(&common(&a)?, &dir, samples)?;
            log::info!("{} objects, {} skipped, valid proportion {:.3}", m.objects.len(), m.skipped.len(), m.valid_proportion);
        }
        Command::Refine { common: a, poses, object, steps } => {
            commands::refine(&common(&a)?, &poses, object.as_deref(), &steps)?;
        }
        Command::Masked {
            common: a,
            object,
            labels,
            mask,
            samples,
        } => {
            commands::masked(&common(&a)?, object.as_deref(), &labels, &mask, samples)?;
        }
        Command::NoiseSweep {
            common: a,
            object,
            sigmas,
            repeats,
            samples,
        } => {
            commands::noise_sweep(&common(&a)?, object.as_deref(), &sigmas, repeats, samples)?;
        }
        Command::Weightmap { common: a } => {
            let w = commands::weightmap(&common(&a)?)?;
            log::info!("cache {}", if w.cache_hit { "hit" } else { "miss" });
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
