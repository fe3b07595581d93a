use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wgspec::cli::{execute, CliCommand, CliRequest};

/// Complex-scaled spectra and scattering data of a two-dimensional
/// acoustic waveguide with a penetrable obstacle.
#[derive(Parser)]
#[command(name = "wgspec", version, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute eigenvalues of the scaled operator near the configured shifts
    Spectrum(Common),
    /// Sweep the fundamental reflection coefficient over a wavenumber grid
    Sweep(Common),
    /// Re-derive classification data for an existing eigenvalue table
    Classify(Common),
    /// Write the finite element mesh as text
    MeshDump(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration file
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Output directory, created if missing
    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    /// Cap on worker threads
    #[arg(long, value_name = "N")]
    threads: Option<usize>,

    /// Exit 0 even when some shifts fail to converge
    #[arg(long)]
    allow_partial: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Spectrum(c) => (CliCommand::Spectrum, c),
        Cmd::Sweep(c) => (CliCommand::Sweep, c),
        Cmd::Classify(c) => (CliCommand::Classify, c),
        Cmd::MeshDump(c) => (CliCommand::MeshDump, c),
    };
    let request = CliRequest {
        command,
        config_path: common.config,
        out_dir: common.out,
        threads: common.threads,
        allow_partial: common.allow_partial,
    };
    ExitCode::from(execute(&request) as u8)
}
