use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use pnpcm::cli;

#[derive(Parser)]
#[command(
    name = "pnpcm",
    about = "Plug-and-play ADMM solver for linear inverse problems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct a measurement described by a config file.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Run the 2×2 noise-injection × momentum grid over an image directory.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Paired runs plus the noise-injection convergence-bound check.
    /// Exits 0 iff the bound is satisfied.
    CheckTheorem {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Synthesize and store a measurement without reconstructing.
    Synthesize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Serve the external-denoiser wire protocol as an echo test double.
    DenoiseServeEcho {
        /// TCP listen address (default 127.0.0.1:0; the bound port is printed).
        #[arg(long)]
        listen: Option<String>,
        /// Serve on stdin/stdout instead of TCP.
        #[arg(long)]
        stdio: bool,
        #[arg(long)]
        quiet: bool,
    },
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let outcome: Result<u8, pnpcm::Error> = match &args.command {
        Command::Reconstruct {
            config,
            seed,
            out,
            quiet,
        } => cli::cmd_reconstruct(config, *seed, out.as_deref(), *quiet).map(|_| 0),
        Command::Ablate {
            config,
            seed,
            out,
            quiet,
        } => cli::cmd_ablate(config, *seed, out.as_deref(), *quiet).map(|_| 0),
        Command::CheckTheorem {
            config,
            seed,
            out,
            quiet,
        } => cli::cmd_check_theorem(config, *seed, out.as_deref(), *quiet)
            .map(|(_, report)| if report.satisfied { 0 } else { 1 }),
        Command::Synthesize {
            config,
            seed,
            out,
            quiet,
        } => cli::cmd_synthesize(config, *seed, out.as_deref(), *quiet).map(|_| 0),
        Command::DenoiseServeEcho {
            listen,
            stdio,
            quiet,
        } => cli::cmd_serve_echo(listen.as_deref(), *stdio, *quiet).map(|_| 0),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
