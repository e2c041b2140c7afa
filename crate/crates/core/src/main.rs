use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use hdns::harness::{self, Checkpoint, ExperimentConfig, ExperimentKind, RunOptions};
use hdns::Error;

#[derive(Parser)]
#[command(name = "hdns", version, about = "Stochastic hyperdissipative Navier-Stokes experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment file (TOML), or a manifest written by an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Also write a CSV next to every line-delimited output.
    #[arg(long)]
    export_csv: bool,
    /// Continue a simulate run from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    Simulate(RunArgs),
    Skeleton(RunArgs),
    Ergodic(RunArgs),
    Action(RunArgs),
    LdpSweep(RunArgs),
    Decompose(RunArgs),
    Lipschitz(RunArgs),
    Tail(RunArgs),
    /// Print the header of a checkpoint file.
    CheckpointInfo {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Serialize)]
struct CheckpointInfo {
    version: u32,
    n: usize,
    step: u64,
    time: f64,
    energy: f64,
    dissipation_integral: f64,
    rng_stream: u64,
    rng_word_pos: u128,
}

fn run(cli: Cli) -> Result<(), Error> {
    let (kind, args) = match cli.command {
        Command::CheckpointInfo { checkpoint } => {
            let c = Checkpoint::read(&checkpoint)?;
            let info = CheckpointInfo {
                version: harness::checkpoint::FORMAT_VERSION,
                n: c.field.grid().n_per_axis(),
                step: c.step,
                time: c.time,
                energy: c.field.energy(),
                dissipation_integral: c.dissipation_integral,
                rng_stream: c.rng.stream,
                rng_word_pos: c.rng.word_pos,
            };
            println!("{}", serde_json::to_string_pretty(&info).expect("serializes"));
            return Ok(());
        }
        Command::Simulate(a) => (ExperimentKind::Simulate, a),
        Command::Skeleton(a) => (ExperimentKind::Skeleton, a),
        Command::Ergodic(a) => (ExperimentKind::Ergodic, a),
        Command::Action(a) => (ExperimentKind::Action, a),
        Command::LdpSweep(a) => (ExperimentKind::LdpSweep, a),
        Command::Decompose(a) => (ExperimentKind::Decompose, a),
        Command::Lipschitz(a) => (ExperimentKind::Lipschitz, a),
        Command::Tail(a) => (ExperimentKind::Tail, a),
    };
    let cfg = ExperimentConfig::load(&args.config).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("{}: {io}", args.config.display())),
        other => other,
    })?;
    if cfg.kind != kind {
        return Err(Error::Config(format!(
            "config describes a {} experiment, not {}",
            cfg.kind.name(),
            kind.name()
        )));
    }
    let opts = RunOptions {
        resume: args.resume,
        export_csv: args.export_csv,
    };
    let out = harness::run_with_threads(&cfg, &opts, args.threads)?;
    for f in &out.files {
        println!("{}", cfg.output_dir.join(f).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
