//! `ser`: command-line runner for cross-domain review recommenders.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ser_core::corpus::Domain;
use ser_core::variant::Variant;

use config::{RunArgs, UsageError};

#[derive(Debug, Parser)]
#[command(name = "ser", version, about = "Review-based cross-domain recommendation with disentangled features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one variant; writes config.json, checkpoint, train_log.csv and metrics.csv.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score the target test split with a trained checkpoint.
    Eval {
        /// Checkpoint file (default: <out>/checkpoint).
        #[arg(long, env = "SER_CHECKPOINT")]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train several variants under several seeds; reports min/median/max MSE.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', env = "SER_SEEDS")]
        seeds: Option<Vec<u64>>,
        /// Comma-separated variants.
        #[arg(long, value_delimiter = ',', env = "SER_VARIANTS")]
        variants: Option<Vec<Variant>>,
    },
    /// Write specific and common features of random samples to embeddings.tsv.
    Export {
        #[arg(long, env = "SER_CHECKPOINT")]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        /// Samples per domain; the file gets four rows per sample.
        #[arg(long, default_value_t = 200, env = "SER_COUNT")]
        count: usize,
    },
    /// Domain-classification accuracy of linear probes on frozen features.
    Probe {
        #[arg(long, env = "SER_CHECKPOINT")]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Words closest to the specific and common features of a user-item pair.
    Explain {
        #[arg(long, env = "SER_CHECKPOINT")]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        user: String,
        #[arg(long)]
        item: String,
        /// `source` or `target`.
        #[arg(long, default_value = "target", value_parser = parse_domain)]
        domain: Domain,
        #[arg(long, default_value_t = 5, env = "SER_N_WORDS")]
        n_words: usize,
    },
    /// Generate a two-domain synthetic corpus and its word vectors.
    Synth {
        #[arg(long, default_value_t = 0, env = "SER_SEED")]
        seed: u64,
        /// Records per domain (at least 100).
        #[arg(long, default_value_t = 1000, env = "SER_SIZE")]
        size: usize,
        #[arg(long, env = "SER_OUT")]
        out: PathBuf,
    },
}

fn parse_domain(s: &str) -> Result<Domain, String> {
    match s.to_ascii_lowercase().as_str() {
        "source" | "s" => Ok(Domain::Source),
        "target" | "t" => Ok(Domain::Target),
        _ => Err(format!("unknown domain `{s}` (expected source or target)")),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { run } => commands::train(&run),
        Command::Eval { checkpoint, run } => commands::eval(&checkpoint, &run),
        Command::Ablate { run, seeds, variants } => commands::ablate(&run, &seeds, &variants),
        Command::Export { checkpoint, run, count } => commands::export(&checkpoint, &run, count),
        Command::Probe { checkpoint, run } => commands::probe(&checkpoint, &run),
        Command::Explain { checkpoint, run, user, item, domain, n_words } => {
            commands::explain(&checkpoint, &run, &user, &item, domain, n_words)
        }
        Command::Synth { seed, size, out } => commands::synth(seed, size, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
