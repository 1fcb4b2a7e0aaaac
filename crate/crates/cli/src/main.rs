mod commands;
mod study;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nasforge_core::backend::BackendError;
use nasforge_core::search::SearchError;
use nasforge_core::{BuildError, DslError};

#[derive(Parser)]
#[command(
    name = "nasforge",
    version,
    about = "Hardware-aware architecture search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a search space (or an exported graph) and describe it.
    Inspect {
        file: PathBuf,
        /// Print this many sampled architectures.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a study and write its history and best model.
    Explore {
        study: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        budget: Option<usize>,
        /// random or evolutionary
        #[arg(long)]
        sampler: Option<String>,
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long)]
        hardware_in_loop: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate deployable code from an exported graph.
    Emit {
        graph: PathBuf,
        #[arg(long, value_enum)]
        target: Target,
        #[arg(long)]
        out: PathBuf,
        /// Remove an op from the target, as for a device without it.
        #[arg(long = "without", value_name = "OP")]
        without: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Target {
    C,
    Json,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<DslError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<SearchError>() {
            match e {
                SearchError::NoCompleteTrial(_) => return 3,
                SearchError::Dsl(_) => return 2,
                _ => {}
            }
        }
        if let Some(BackendError::Capability { .. }) = cause.downcast_ref::<BackendError>() {
            return 4;
        }
        if let Some(BuildError::Capability { .. }) = cause.downcast_ref::<BuildError>() {
            return 4;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Inspect { file, sample, seed } => commands::inspect(&file, sample, seed),
        Command::Explore {
            study,
            seed,
            budget,
            sampler,
            parallelism,
            hardware_in_loop,
            out,
        } => {
            let overrides = study::Overrides {
                seed,
                budget,
                sampler,
                parallelism,
                hardware_in_loop,
                out,
            };
            commands::explore(&study, &overrides)
        }
        Command::Emit {
            graph,
            target,
            out,
            without,
        } => commands::emit(&graph, target, &out, &without),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
