use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use loopflow_cli::commands::{self, Command, Session};
use loopflow_cli::{CliError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "loopflow", version, about = "Heat-flow graph maps on loop spaces: experiments and audits")]
struct Cli {
    /// JSON run config
    #[arg(long, short)]
    config: PathBuf,

    /// Output root; falls back to the config's `outdir`, then $LOOPFLOW_OUTDIR, then `./out`
    #[arg(long)]
    outdir: Option<PathBuf>,

    /// Worker threads for the sweeps (default: all cores)
    #[arg(long)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Argument(format!("--jobs: {e}")))?;
    }
    let cfg = RunConfig::load(&cli.config)?;
    let root = cli
        .outdir
        .or_else(|| cfg.outdir.clone())
        .or_else(|| std::env::var_os("LOOPFLOW_OUTDIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let session = Session::open(cfg)?;
    println!("config {} ({} subcommand)", session.hash, cli.command.name());
    for line in commands::run(&session, &cli.command, &root)? {
        println!("{line}");
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
