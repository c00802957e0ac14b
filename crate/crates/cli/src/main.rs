use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ecglatent_cli::{run, Command, Overrides, RunConfig, Selection};

/// Compress ECG representative beats into 30-dimensional latent encodings.
#[derive(Parser)]
#[command(name = "ecglatent", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML run configuration; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model name (PCA, AE, SAE, VAE, BetaVAE, CyclicalBetaVAE, AnnealedBetaVAE) or `all`.
    #[arg(long, global = true)]
    variant: Option<Selection>,
    /// Fraction of the training split used by `train` and `probe`.
    #[arg(long, global = true)]
    train_fraction: Option<f64>,
    /// Run directory for every artifact.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// 3×8 lead transform matrix replacing the built-in one.
    #[arg(long, global = true)]
    kors_matrix: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Generate a synthetic 12-lead corpus.
    Synth,
    /// Extract X/Y/Z representative beats and fit the scaling.
    Preprocess,
    /// Train the selected model(s) on the training split.
    Train,
    /// Export latent encodings of every beat as CSV.
    Encode,
    /// Reconstruct held-out beats, report fidelity and draw SVG plots.
    Reconstruct,
    /// Reconstruction table over every trained checkpoint.
    Evaluate,
    /// Linear and logistic probes on the encodings of every checkpoint.
    Probe,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Synth => Command::Synth,
            Cmd::Preprocess => Command::Preprocess,
            Cmd::Train => Command::Train,
            Cmd::Encode => Command::Encode,
            Cmd::Reconstruct => Command::Reconstruct,
            Cmd::Evaluate => Command::Evaluate,
            Cmd::Probe => Command::Probe,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        variant: cli.variant,
        train_fraction: cli.train_fraction,
        out: cli.out,
        kors_matrix: cli.kors_matrix,
    };
    let result = RunConfig::load(cli.config.as_deref(), &overrides).and_then(|cfg| run(cli.command.into(), &cfg));
    match result {
        Ok(outcome) => {
            for p in &outcome.written {
                println!("wrote {}", p.display());
            }
            if let Some(s) = outcome.summary {
                println!("{s}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
