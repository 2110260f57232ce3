//! `ape`: train, tune and run automatic post-editing systems.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::{Flags, Settings};

#[derive(Parser, Debug)]
#[command(name = "ape", version, about = "Statistical automatic post-editing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key=value configuration file; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Align mt with pe, extract phrases, estimate models (--src --mt --pe --model)
    Train,
    /// Drop entries with neg-impact at or above --threshold (--table --output)
    Prune,
    /// MERT on a dev set (--model --mt --pe [--src] [--weights] [--rerank])
    Tune,
    /// Post-edit --mt or --constraints with a trained model
    Decode,
    /// TER, BLEU, precision and repetition rate (--hyp --reference [--mt])
    Evaluate,
    /// Simulate online post-editing over a triplet stream (--mt --pe [--src])
    Online,
    /// Combine mt and APE output with quality estimates (--strategy)
    QeCombine,
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => settings::read_config(p)?,
        None => Vec::new(),
    };
    let s = Settings::resolve(&file, &cli.flags)?;
    rayon::ThreadPoolBuilder::new().num_threads(s.jobs).build_global()?;
    match cli.command {
        Command::Train => commands::train(&s),
        Command::Prune => commands::prune(&s),
        Command::Tune => commands::tune(&s),
        Command::Decode => commands::decode(&s),
        Command::Evaluate => commands::evaluate(&s),
        Command::Online => commands::online(&s),
        Command::QeCombine => commands::qe_combine(&s),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
