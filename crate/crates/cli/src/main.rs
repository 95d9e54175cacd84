//! `mclandscape`: generate instances, recover them exactly, and map the
//! gradient-descent landscape from a config file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mclandscape::harness::{run_config, Command, Overrides, CONFIG_REFERENCE, OUT_ENV};

#[derive(Debug, Parser)]
#[command(name = "mclandscape", version, about, after_long_help = CONFIG_REFERENCE)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Build an instance and save it as JSON.
    Gen(Common),
    /// Recover the ground truth by propagation along the graph.
    Solve(Common),
    /// One gradient-descent run followed by Newton polishing.
    Descend(Common),
    /// Multistart enumeration of critical points with the lower-bound check.
    Census(Common),
    /// Success-rate table over a grid of perturbation sizes.
    Experiment(Common),
    /// Upper estimate of the distance to ambiguous measurements.
    Metric(Common),
    /// Graph analysis, class membership and incoherence.
    Check(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Config file (TOML, or JSON by extension).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR", env = OUT_ENV)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, c) = match cli.command {
        Cmd::Gen(c) => (Command::Gen, c),
        Cmd::Solve(c) => (Command::Solve, c),
        Cmd::Descend(c) => (Command::Descend, c),
        Cmd::Census(c) => (Command::Census, c),
        Cmd::Experiment(c) => (Command::Experiment, c),
        Cmd::Metric(c) => (Command::Metric, c),
        Cmd::Check(c) => (Command::Check, c),
    };
    let ov = Overrides {
        command: Some(command),
        seed: c.seed,
        out_dir: c.out,
        threads: c.threads,
    };
    match run_config(&c.config, &ov) {
        Ok(summary) => {
            println!("{}: {}", summary.command.name(), summary.verdict);
            for p in &summary.outputs {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
