use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gmclab_cli::{rerun, run, CliError, CliResult, CommandKind, ExperimentConfig, Overrides};

/// Lattice experiments on bulk and boundary Gaussian multiplicative chaos.
#[derive(Debug, Parser)]
#[command(name = "gmclab", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Moment estimates across resolutions, optionally over a (p, q) grid.
    ScanMoments(RunArgs),
    /// Exact-in-law scaling of quotient moments under z -> r z.
    VerifyScaling(RunArgs),
    /// Paired check of the lattice Girsanov identity.
    VerifyGirsanov(RunArgs),
    /// Gaussian comparison on a preset finite instance.
    VerifyKahane(RunArgs),
    /// Exact Whitney, gamma or pi tilings of a Carleson cube.
    Tile(RunArgs),
    /// Hill tail index of bulk masses.
    TailIndex(RunArgs),
    /// Rerun a manifest and compare result digests.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

fn build_config(kind: CommandKind, args: &RunArgs) -> CliResult<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    config.command = kind;
    args.overrides.apply(&mut config);
    Ok(config)
}

fn execute(cli: Cli) -> CliResult<bool> {
    let (kind, args) = match cli.command {
        Cmd::Rerun {
            manifest,
            output_dir,
        } => {
            let r = rerun(&manifest, output_dir)?;
            println!(
                "{}",
                serde_json::json!({
                    "output_dir": r.outcome.output_dir,
                    "reproduced": r.reproduced(),
                    "mismatched": r.mismatched,
                })
            );
            return Ok(r.reproduced());
        }
        Cmd::ScanMoments(a) => (CommandKind::ScanMoments, a),
        Cmd::VerifyScaling(a) => (CommandKind::VerifyScaling, a),
        Cmd::VerifyGirsanov(a) => (CommandKind::VerifyGirsanov, a),
        Cmd::VerifyKahane(a) => (CommandKind::VerifyKahane, a),
        Cmd::Tile(a) => (CommandKind::Tile, a),
        Cmd::TailIndex(a) => (CommandKind::TailIndex, a),
    };
    let config = build_config(kind, &args)?;
    let outcome = run(&config)?;
    println!(
        "{}",
        serde_json::json!({
            "command": kind.name(),
            "output_dir": outcome.output_dir,
            "passed": outcome.passed,
        })
    );
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            println!("{}", e.to_json());
            eprintln!("gmclab: {e}");
            ExitCode::from(CliError::exit_code(&e) as u8)
        }
    }
}
