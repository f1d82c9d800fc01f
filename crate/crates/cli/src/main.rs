//! Command-line entry point. Exit codes: 0 success, 1 usage error,
//! 2 data/configuration error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use surfrec::error::Error;
use surfrec::scansim::Variant;
use surfrec_cli::commands::{self, ReconstructOpts};
use surfrec_cli::config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "surfrec",
    about = "Patch-based implicit surface reconstruction: dataset generation, training, reconstruction, evaluation, ablations",
    version
)]
struct Cli {
    /// Experiment config file (key = value lines); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Regenerate outputs that already exist.
    #[arg(long, global = true)]
    force: bool,

    /// Worker threads for shape-level parallelism (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate normalized meshes, simulated-scan clouds, and query sets.
    MakeDataset,
    /// Train a model variant on the dataset (resumes from checkpoints).
    Train {
        /// Model variant to train (default: config's model_variant).
        #[arg(long)]
        variant: Option<String>,
    },
    /// Reconstruct meshes from dataset clouds using a trained checkpoint.
    Reconstruct {
        /// Checkpoint file (default: newest in the variant's train dir).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Which dataset clouds to reconstruct (default: train_variant).
        #[arg(long)]
        cloud_variant: Option<String>,
        #[arg(long)]
        grid_res: Option<usize>,
        #[arg(long)]
        epsilon_cells: Option<f64>,
        #[arg(long)]
        confidence: Option<usize>,
        /// Evaluate every grid cell instead of only the band near the cloud.
        #[arg(long)]
        dense: bool,
    },
    /// Compare reconstructions to the ground-truth meshes.
    Eval {
        #[arg(long)]
        cloud_variant: Option<String>,
    },
    /// Train and evaluate every configured variant; emit a comparison table.
    Ablate,
    /// Print the effective configuration in config-file form.
    PrintConfig,
}

fn parse_variant(s: Option<String>) -> Result<Option<Variant>, Error> {
    s.map(|s| Variant::parse(&s)).transpose()
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be >= 1".into()));
        }
        // a pool may already exist (e.g. under test); that is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    match cli.cmd {
        Cmd::MakeDataset => commands::cmd_make_dataset(&cfg, cli.force),
        Cmd::Train { variant } => commands::cmd_train(&cfg, cli.force, variant.as_deref()),
        Cmd::Reconstruct {
            checkpoint,
            cloud_variant,
            grid_res,
            epsilon_cells,
            confidence,
            dense,
        } => {
            let opts = ReconstructOpts {
                checkpoint,
                cloud_variant: parse_variant(cloud_variant)?,
                grid_res,
                epsilon_cells,
                confidence,
                dense,
            };
            commands::cmd_reconstruct(&cfg, cli.force, &opts)
        }
        Cmd::Eval { cloud_variant } => commands::cmd_eval(&cfg, parse_variant(cloud_variant)?),
        Cmd::Ablate => commands::cmd_ablate(&cfg, cli.force),
        Cmd::PrintConfig => {
            print!("{}", cfg.to_text());
            Ok(())
        }
    }
}

/// 2 for data/config problems, 3 for numerical failures.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_)
        | Error::PropagationDiverged(_)
        | Error::BatchTooSmall(_)
        | Error::AmbiguousSign { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with success status
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
