//! `m2mrf` command-line runner.
//!
//! Every command resolves its configuration (JSON file, then flags) and writes
//! it as `run_config.json` into the output directory before anything else.
//! Exit codes: 0 success, 1 runtime or verification failure, 2 usage error.

mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use m2mrf::net::Variant;

#[derive(Parser, Debug)]
#[command(name = "m2mrf", version, about = "Many-to-many feature reassembly: data, training, evaluation, checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|_| {
        let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
        format!("unknown variant {s:?}; expected one of {}", names.join(", "))
    })
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic lesion dataset.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of samples.
        #[arg(long)]
        n: Option<usize>,
        /// Image side in pixels (multiple of 4).
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a fusion network on a generated dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// A, B, C, D, baseline-sc-bl or baseline-mp.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Initial learning rate of the poly schedule.
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint: metrics report and prediction maps.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a self-check suite and print one line per property.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Suite {
    Gradcheck,
    Oracle,
    Params,
    Shapes,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen {
            config,
            n,
            size,
            seed,
            out,
        } => run::gen(config.as_deref(), run::GenFlags { n, size, seed, out }),
        Command::Train {
            config,
            variant,
            iters,
            dataset,
            seed,
            lr,
            out,
        } => run::train(
            config.as_deref(),
            run::TrainFlags {
                variant,
                iters,
                dataset,
                seed,
                lr,
                out,
            },
        ),
        Command::Eval {
            config,
            checkpoint,
            dataset,
            out,
        } => run::eval(
            config.as_deref(),
            run::EvalFlags {
                checkpoint,
                dataset,
                out,
            },
        ),
        Command::Verify { suite, seed } => run::verify(suite, seed),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(run::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(run::Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
