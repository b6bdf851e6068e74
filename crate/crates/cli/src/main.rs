mod commands;
mod error;
mod svg;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "affine-adam", version, about = "Lemma checks, convergence studies and estimators for modified Adam/RMSProp")]
struct Cli {
    /// Experiment config (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for trajectory runs
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Fail on the first per-step invariant violation
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Randomized checks of the sequence lemmas and the telescoping bound
    VerifyLemmas {
        #[arg(long)]
        cases: Option<usize>,
        #[arg(long, hide = true)]
        inject_bug: bool,
    },
    /// Monte-Carlo convergence study at one accuracy level
    Run,
    /// Iteration counts across accuracy levels
    ScaleStudy,
    /// Coordinate-wise smoothness from trajectories
    EstimateSmoothness,
    /// Affine noise constants from repeated gradient samples
    EstimateNoise,
    /// Modified against original Adam on the logistic toy
    Parity,
}

fn execute(cli: Cli) -> Result<String, CliError> {
    let ctx = Context::load(cli.config.as_deref(), cli.seed, cli.strict, cli.out)?;
    let seed = ctx.config.as_ref().map_or(cli.seed.unwrap_or(0), |c| c.seed);
    let work = || match cli.command {
        Command::VerifyLemmas { cases, inject_bug } => commands::verify_lemmas(&ctx, cases, seed, inject_bug),
        Command::Run => commands::run(&ctx),
        Command::ScaleStudy => commands::scale_study(&ctx),
        Command::EstimateSmoothness => commands::estimate_smoothness(&ctx),
        Command::EstimateNoise => commands::estimate_noise(&ctx),
        Command::Parity => commands::parity(&ctx),
    };
    match cli.jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .install(work),
        None => work(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
