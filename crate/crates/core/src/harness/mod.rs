//! Experiment orchestration: configuration, persistence and the experiment
//! drivers behind the `hdns` command line tool.

pub mod checkpoint;
pub mod config;
mod experiments;
mod ldp;
mod probes;
pub mod records;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};

pub use checkpoint::Checkpoint;
pub use config::{ExperimentConfig, ExperimentKind};
pub use experiments::{
    run_action, run_ergodic, run_invariant_tail, run_simulate, run_skeleton, TailRow,
};
pub use ldp::{gaussian_tail, ldp_row, run_ldp_sweep, LdpRow};
pub use probes::{decomposition_levels, run_decomposition_check, run_lipschitz_probe, DecompositionRow, LipschitzRow};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub resume: Option<PathBuf>,
    pub export_csv: bool,
}

/// Files written by one experiment, relative to its output directory.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub files: Vec<String>,
    /// Extra manifest entries such as burn-in choices.
    pub notes: Vec<(String, String)>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    tool_version: &'static str,
    experiment: &'static str,
    config_hash: String,
    seed: u64,
    threads: usize,
    wall_time_s: f64,
    resumed_from: Option<String>,
    outputs: &'a [String],
    notes: std::collections::BTreeMap<String, String>,
    config: toml::Value,
}

/// Runs the experiment named by `cfg.kind` and writes its manifest.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    if opts.resume.is_some() && cfg.kind != ExperimentKind::Simulate {
        return Err(Error::Config("--resume is only supported for simulate".into()));
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    let start = Instant::now();
    let mut out = match cfg.kind {
        ExperimentKind::Simulate => run_simulate(cfg, opts.resume.as_deref())?,
        ExperimentKind::Skeleton => run_skeleton(cfg)?,
        ExperimentKind::Ergodic => run_ergodic(cfg)?,
        ExperimentKind::Action => run_action(cfg)?,
        ExperimentKind::LdpSweep => run_ldp_sweep(cfg)?,
        ExperimentKind::Decompose => run_decomposition_check(cfg)?,
        ExperimentKind::Lipschitz => run_lipschitz_probe(cfg)?,
        ExperimentKind::Tail => run_invariant_tail(cfg)?,
    };
    if opts.export_csv {
        for p in records::export_dir(&cfg.output_dir)? {
            out.files.push(file_name(&p));
        }
    }
    out.files.push(MANIFEST_FILE.into());
    let manifest = Manifest {
        tool: "hdns",
        tool_version: env!("CARGO_PKG_VERSION"),
        experiment: cfg.kind.name(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        threads: rayon::current_num_threads(),
        wall_time_s: start.elapsed().as_secs_f64(),
        resumed_from: opts.resume.as_ref().map(|p| p.display().to_string()),
        outputs: &out.files,
        notes: out.notes.iter().cloned().collect(),
        config: toml::Value::try_from(cfg).map_err(|e| Error::Config(e.to_string()))?,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(cfg.output_dir.join(MANIFEST_FILE), text)?;
    Ok(out)
}

/// Runs on a dedicated pool of `threads` workers (all cores when `None`).
pub fn run_with_threads(cfg: &ExperimentConfig, opts: &RunOptions, threads: Option<usize>) -> Result<RunOutput> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_experiment(cfg, opts))
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NumericalAbort { .. } => 3,
        Error::Io(_) | Error::Checkpoint(_) | Error::UnsupportedVersion { .. } => 4,
        _ => 2,
    }
}

pub(crate) fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
