use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ppkit::cli::{error_json, run, Command};
use ppkit::Error;

#[derive(Parser)]
#[command(name = "ppkit", version, about = "Spatial point process diagnostics, simulation and LGCP fitting")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Inhomogeneous K / cross-K with envelopes and CSR tests.
    Diagnose(Common),
    /// Simulate an LGCP from the configured model.
    Simulate(Common),
    /// Minimum contrast then MCMC.
    Fit(Common),
    /// Correlation curves, intensity-ratio maps and fitted cross-K.
    Report(Common),
}

fn init_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("PPKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("PPKIT_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Cmd::Diagnose(a) => (Command::Diagnose, a),
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Fit(a) => (Command::Fit, a),
        Cmd::Report(a) => (Command::Report, a),
    };
    let result = init_threads().and_then(|_| run(cmd, &args.config, args.seed, args.out.as_deref()));
    match result {
        Ok(out) => {
            println!("{}", serde_json::to_string(&out).expect("output summary serialises"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
