//! `surgsim` command-line entry point.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Output directories are created under this root unless absolute.
pub const OUTPUT_ROOT_VAR: &str = "SURGSIM_OUTPUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "surgsim", version, about = "Batched surgical-robot simulation and PPO training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Dotted-path override, e.g. `train.n_robots=64`. Repeatable.
    #[arg(long = "override", short = 'o', value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy with PPO.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Measure stepping or training throughput.
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `sim` (random actions) or `learn` (full training loop).
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        envs: Option<usize>,
        /// Aggregate transitions timed per run.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        task: Option<String>,
        /// Bundled robot name or descriptor file.
        #[arg(long)]
        robot: Option<String>,
        /// Also time a sequential loop of single-env instances (sim mode).
        #[arg(long)]
        baseline: bool,
    },
    /// Evaluate a checkpoint with deterministic mean actions.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 64)]
        episodes: usize,
        /// Write per-step trajectories as CSV.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Write target and final images of image-matching episodes as PGM.
        #[arg(long)]
        dump_images: Option<PathBuf>,
    },
    /// List bundled robot descriptors.
    ListRobots,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { cfg } => commands::train(&cfg),
        Command::Bench {
            cfg,
            mode,
            envs,
            steps,
            runs,
            task,
            robot,
            baseline,
        } => commands::bench(
            &cfg,
            &commands::BenchFlags {
                mode,
                envs,
                steps,
                runs,
                task,
                robot,
                baseline,
            },
        ),
        Command::Eval {
            cfg,
            checkpoint,
            episodes,
            trajectory,
            dump_images,
        } => commands::eval(&cfg, &checkpoint, episodes, trajectory.as_deref(), dump_images.as_deref()),
        Command::ListRobots => commands::list_robots(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
