use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::{BenchArgs, LossArgs, SynthArgs};
use config::{RunConfig, SharedArgs, UsageError};

#[derive(Debug, Parser)]
#[command(
    name = "localmatch",
    version,
    about = "Local matching engine for memory-based video object segmentation"
)]
struct Cli {
    #[command(flatten)]
    shared: SharedArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic feature video with ground-truth masks
    Synth {
        #[arg(long, default_value_t = 10)]
        frames: usize,
        /// Frame size as HxW
        #[arg(long, default_value = "64x64")]
        size: String,
        #[arg(long, default_value_t = 16)]
        channels: usize,
        #[arg(long, default_value_t = 2)]
        objects: usize,
        /// Per-step translation `dy,dx`, several separated by `;`; the last repeats
        #[arg(long, default_value = "1,0", allow_hyphen_values = true)]
        motion: String,
    },
    /// Propagate the first-frame mask through a video
    Segment {
        /// Manifest file or a directory containing manifest.txt
        #[arg(long)]
        input: PathBuf,
    },
    /// Score predicted masks against ground truth
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Comma-separated seen object ids
        #[arg(long)]
        seen: Option<String>,
        /// Comma-separated unseen object ids
        #[arg(long)]
        unseen: Option<String>,
    },
    /// Evaluate the contrastive loss on a query frame against keyframes
    Loss {
        /// Manifest: the last entry is the query, scheduled earlier entries are keyframes
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        query: Option<PathBuf>,
        #[arg(long = "keyframe")]
        keyframes: Vec<PathBuf>,
        /// Projection channels
        #[arg(long, default_value_t = localmatch::contrastive::DEFAULT_PROJECTION_CHANNELS)]
        projection: usize,
        /// Compare analytic gradients with central differences
        #[arg(long)]
        grad_check: bool,
    },
    /// Time gather-oracle against direction-shift sampling
    Bench {
        /// Comma-separated HxWxD geometries
        #[arg(long, default_value = "64x64x64")]
        sizes: String,
        #[arg(long, default_value = "5,7,9,13,15,17,19")]
        ks: String,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Keyframe intervals for a matching-time sweep
        #[arg(long = "r-list")]
        r_list: Option<String>,
        /// Also time the full matching stage over the window sizes
        #[arg(long)]
        matching: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let default_noise = match cli.command {
        Command::Synth { .. } => 0.05,
        _ => 0.0,
    };
    let run = RunConfig::resolve(&cli.shared, default_noise)?;
    match cli.command {
        Command::Synth {
            frames,
            size,
            channels,
            objects,
            motion,
        } => commands::synth(
            &run,
            &SynthArgs {
                frames,
                size,
                channels,
                objects,
                motion,
            },
        ),
        Command::Segment { input } => commands::segment(&run, &input),
        Command::Eval { pred, gt, seen, unseen } => {
            commands::eval(&run, &pred, &gt, seen.as_deref(), unseen.as_deref())
        }
        Command::Loss {
            input,
            query,
            keyframes,
            projection,
            grad_check,
        } => commands::loss(
            &run,
            &LossArgs {
                input,
                query,
                keyframes,
                projection,
                grad_check,
            },
        ),
        Command::Bench {
            sizes,
            ks,
            reps,
            r_list,
            matching,
        } => commands::bench(
            &run,
            &BenchArgs {
                sizes,
                ks,
                reps,
                r_list,
                matching,
            },
        ),
    }
}

fn is_usage(err: &anyhow::Error) -> bool {
    use localmatch::Error as E;
    err.downcast_ref::<UsageError>().is_some()
        || matches!(
            err.downcast_ref::<E>(),
            Some(E::InvalidWindow(_) | E::InvalidTemperature(_) | E::InvalidConfig(_) | E::CoarsePatchTooLarge { .. })
        )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_usage(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
