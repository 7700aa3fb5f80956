//! `protoattn` command-line tool.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 I/O or file-format
//! error, 4 numeric failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{AttendArgs, BenchArgs, ClusterArgs, Context, Report, SynthArgs, TrackArgs};
use config::FileConfig;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "protoattn", version, about = "Prototype attention toolkit: clustering, memory reads, toy tracking, cost tables")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for output files.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Print a JSON summary on stdout instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Config file with `key = value` lines under `[section]` headers.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit GMM prototypes to a key map.
    Cluster(ClusterArgs),
    /// Read a prototype memory bank and aggregate with the current frame.
    Attend(AttendArgs),
    /// Run the toy tracker on a synthetic scene.
    Track(TrackArgs),
    /// Emit the cost comparison table and chart.
    Bench(BenchArgs),
    /// Render a synthetic sequence to disk.
    Synth(SynthArgs),
}

fn run(cli: Cli) -> Result<Report, CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let threads = cli.threads.or(file.usize(None, "threads")?);
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let ctx = Context {
        seed: cli.seed.or(file.u64(None, "seed")?).unwrap_or(0),
        out_dir: cli.out_dir.or(file.string(None, "out_dir")?.map(PathBuf::from)).unwrap_or_else(|| ".".into()),
        file,
    };
    match &cli.command {
        Command::Cluster(a) => commands::cluster(&ctx, a),
        Command::Attend(a) => commands::attend(&ctx, a),
        Command::Track(a) => commands::track(&ctx, a),
        Command::Bench(a) => commands::bench(&ctx, a),
        Command::Synth(a) => commands::synth(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(report) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&report.json).unwrap_or_default());
            } else {
                for line in report.lines {
                    println!("{line}");
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
