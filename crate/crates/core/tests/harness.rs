use std::path::{Path, PathBuf};
use std::process::Command;

use hdns::dynamics::SolverConfig;
use hdns::forcing::make_noise;
use hdns::harness::records::{read_lines, validate_observable_stream, OBSERVABLES_FILE};
use hdns::harness::{
    decomposition_levels, exit_code, run_experiment, run_with_threads, Checkpoint, ExperimentConfig, RunOptions,
    MANIFEST_FILE,
};
use hdns::harness::config::smooth_field;
use hdns::spectral::make_grid;
use hdns::Error;

fn simulate_config(dir: &Path, t_end: f64, ensemble: usize) -> ExperimentConfig {
    let text = format!(
        r#"
kind = "simulate"
seed = 31
output_dir = "{}"

[grid]
n = 8

[physics]
epsilon = [0.05]
sobolev_orders = [1.0]

[time]
dt = 1e-3
t_end = {t_end}
record_stride = 10

[samples]
ensemble = {ensemble}

[checkpoint]
every = 100

[initial]
kind = "random"
norm = 1.0
k0 = 1.5
seed = 3
"#,
        dir.display()
    );
    ExperimentConfig::from_toml_str(&text).unwrap()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn manifest(dir: &Path) -> toml::Table {
    toml::from_str(&read(dir.join(MANIFEST_FILE))).unwrap()
}

#[test]
fn zero_horizon_writes_only_initial_state() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = simulate_config(tmp.path(), 0.0, 1);
    run_experiment(&cfg, &RunOptions::default()).unwrap();
    assert!(!tmp.path().join(OBSERVABLES_FILE).exists());
    let c = Checkpoint::read(&tmp.path().join("checkpoints/member-0-final.bin")).unwrap();
    assert_eq!(c.step, 0);
    assert_eq!(c.field, cfg.initial_state(&cfg.grid().unwrap()).unwrap());
    assert!(tmp.path().join(MANIFEST_FILE).exists());
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let full = tempfile::tempdir().unwrap();
    run_experiment(&simulate_config(full.path(), 0.3, 1), &RunOptions::default()).unwrap();
    let expected = read(full.path().join(OBSERVABLES_FILE));

    // Stop at t = 0.1, then continue from the final checkpoint.
    let part = tempfile::tempdir().unwrap();
    run_experiment(&simulate_config(part.path(), 0.1, 1), &RunOptions::default()).unwrap();
    let opts = RunOptions {
        resume: Some(part.path().join("checkpoints/member-0-final.bin")),
        export_csv: false,
    };
    run_experiment(&simulate_config(part.path(), 0.3, 1), &opts).unwrap();
    assert_eq!(read(part.path().join(OBSERVABLES_FILE)), expected);
    assert!(manifest(part.path())["resumed_from"].as_str().is_some());

    // Resuming mid-run from an intermediate checkpoint drops the later records first.
    let opts = RunOptions {
        resume: Some(full.path().join("checkpoints/member-0-step-200.bin")),
        export_csv: false,
    };
    run_experiment(&simulate_config(full.path(), 0.3, 1), &opts).unwrap();
    assert_eq!(read(full.path().join(OBSERVABLES_FILE)), expected);
}

#[test]
fn output_is_independent_of_thread_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_with_threads(&simulate_config(a.path(), 0.1, 4), &RunOptions::default(), Some(1)).unwrap();
    run_with_threads(&simulate_config(b.path(), 0.1, 4), &RunOptions::default(), Some(4)).unwrap();
    assert_eq!(read(a.path().join(OBSERVABLES_FILE)), read(b.path().join(OBSERVABLES_FILE)));
    assert_eq!(manifest(a.path())["threads"].as_integer(), Some(1));
    assert_eq!(manifest(b.path())["threads"].as_integer(), Some(4));
}

#[test]
fn outputs_follow_their_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = simulate_config(tmp.path(), 0.05, 2);
    let out = run_experiment(&cfg, &RunOptions { resume: None, export_csv: true }).unwrap();
    assert!(out.files.iter().any(|f| f.ends_with(".csv")));
    // 2 members with records at t = 0, 0.01, ..., 0.05.
    assert_eq!(validate_observable_stream(&tmp.path().join(OBSERVABLES_FILE)).unwrap(), 12);
    let lines = read_lines(&tmp.path().join(OBSERVABLES_FILE)).unwrap();
    let first = lines[0].as_object().unwrap();
    for key in ["t", "energy_H", "dissipation_H54", "norm_Hs", "psi", "run_id"] {
        assert!(first.contains_key(key), "{key}");
    }
    let csv = read(tmp.path().join("observables.csv"));
    let header = csv.lines().next().unwrap();
    assert!(header.contains("norm_Hs.1"), "{header}");
    assert_eq!(csv.lines().count(), 13);

    let m = manifest(tmp.path());
    assert_eq!(m["config_hash"].as_str(), Some(cfg.hash().as_str()));
    assert_eq!(m["experiment"].as_str(), Some("simulate"));
    // The manifest is itself a valid config that reproduces the run.
    let again = ExperimentConfig::load(&tmp.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(again.hash(), cfg.hash());
}

#[test]
fn invalid_streams_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join(OBSERVABLES_FILE);
    std::fs::write(&p, "{\"t\": 0.0}\n").unwrap();
    assert!(validate_observable_stream(&p).is_err());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let err = ExperimentConfig::from_toml_str("kind = \"simulate\"\nseed = 1\nbogus = 2\n").unwrap_err();
    assert_eq!(exit_code(&err), 2);
}

#[test]
fn ldp_always_event_has_zero_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        r#"
kind = "ldp-sweep"
seed = 1
output_dir = "{}"
[grid]
n = 4
[physics]
nonlinear = false
noise_modes = [[1, 0, 0]]
epsilon = [0.5, 0.1]
[samples]
per_epsilon = 100
chunk = 30
[ldp]
event = "always"
horizon = 1.0
"#,
        tmp.path().display()
    );
    run_experiment(&ExperimentConfig::from_toml_str(&text).unwrap(), &RunOptions::default()).unwrap();
    let rows = read_lines(&tmp.path().join("ldp.jsonl")).unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(r["p_hat"].as_f64(), Some(1.0));
        assert_eq!(r["rate_estimate"].as_f64(), Some(0.0));
    }
}

#[test]
fn ldp_threshold_rows_are_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        r#"
kind = "ldp-sweep"
seed = 1
output_dir = "{}"
[grid]
n = 4
[physics]
nonlinear = false
noise_modes = [[1, 0, 0]]
epsilon = [1.0, 0.5]
[samples]
per_epsilon = 20000
chunk = 5000
[ldp]
event = "threshold"
k = [1, 0, 0]
threshold_std = 1.0
horizon = 5.0
"#,
        tmp.path().display()
    );
    run_experiment(&ExperimentConfig::from_toml_str(&text).unwrap(), &RunOptions::default()).unwrap();
    for r in read_lines(&tmp.path().join("ldp.jsonl")).unwrap() {
        let rate = r["rate_estimate"].as_f64().unwrap();
        let lo = r["rate_interval"][0].as_f64().unwrap();
        let hi = r["rate_interval"][1].as_f64().unwrap();
        assert!(lo <= rate && rate <= hi);
        // The exact finite-eps rate sits inside the 95% interval here.
        let exact = r["exact_rate"].as_f64().unwrap();
        assert!(lo <= exact && exact <= hi, "{r}");
    }
}

#[test]
fn decomposition_is_exact_without_convection() {
    let grid = make_grid(8).unwrap();
    let noise = make_noise(&grid, 2.0).unwrap();
    let solver = SolverConfig {
        nonlinear: false,
        epsilon: 0.1,
        dt: 1e-2,
        t_end: 0.5,
        ..Default::default()
    };
    let u0 = smooth_field(&grid, 1.0, 1.5, 4);
    for row in decomposition_levels(&u0, &solver, &noise, 2).unwrap() {
        assert!(row.max_error < 1e-13, "{row:?}");
    }
}

#[test]
fn decomposition_converges_at_first_order() {
    let grid = make_grid(8).unwrap();
    let noise = make_noise(&grid, 2.0).unwrap();
    let solver = SolverConfig {
        epsilon: 0.01,
        dt: 4e-3,
        t_end: 0.4,
        ..Default::default()
    };
    let u0 = smooth_field(&grid, 1.0, 1.5, 4);
    let rows = decomposition_levels(&u0, &solver, &noise, 3).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows[1..] {
        let q = r.reduction.unwrap();
        assert!((1.7..2.3).contains(&q), "{rows:?}");
    }
}

#[test]
fn lipschitz_probe_reports_finite_ratios() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        r#"
kind = "lipschitz"
seed = 2
output_dir = "{}"
[grid]
n = 8
[time]
dt = 1e-2
t_end = 0.5
[initial]
kind = "random"
norm = 0.5
k0 = 1.5
seed = 7
[lipschitz]
radii = [0.5, 1.0]
pairs = 2
scales = [0.1]
nodes = 3
"#,
        tmp.path().display()
    );
    run_experiment(&ExperimentConfig::from_toml_str(&text).unwrap(), &RunOptions::default()).unwrap();
    let rows = read_lines(&tmp.path().join("lipschitz.jsonl")).unwrap();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let ratio = r["ratio"].as_f64().unwrap();
        assert!(ratio.is_finite() && ratio >= 0.0);
        assert!(r["distance"].as_f64().unwrap() > 0.0);
    }
    for s in read_lines(&tmp.path().join("lipschitz_summary.jsonl")).unwrap() {
        assert!(s["max_ratio"].as_f64().unwrap() >= s["mean_ratio"].as_f64().unwrap());
    }
}

#[test]
fn invariant_tail_is_monotone_in_radius() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        r#"
kind = "tail"
seed = 5
output_dir = "{}"
[grid]
n = 4
[physics]
nonlinear = false
noise_modes = [[1, 0, 0]]
epsilon = [0.5]
[time]
dt = 1e-2
t_end = 50.0
record_stride = 5
[tail]
radii = [0.0, 0.2, 0.4, 0.8]
burn_in = 5.0
batches = 10
"#,
        tmp.path().display()
    );
    run_experiment(&ExperimentConfig::from_toml_str(&text).unwrap(), &RunOptions::default()).unwrap();
    let rows: Vec<_> = read_lines(&tmp.path().join("tail.jsonl"))
        .unwrap()
        .into_iter()
        .filter(|r| r["epsilon"].as_f64() == Some(0.5))
        .collect();
    assert_eq!(rows[0]["occupation"].as_f64(), Some(1.0));
    for w in rows.windows(2) {
        assert!(w[1]["occupation"].as_f64().unwrap() <= w[0]["occupation"].as_f64().unwrap());
    }
}

fn hdns() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hdns"))
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, cfg.to_toml_string()).unwrap();
    p
}

#[test]
fn cli_runs_and_lists_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = simulate_config(&tmp.path().join("out"), 0.02, 1);
    let path = write_config(tmp.path(), &cfg);
    let out = hdns()
        .args(["simulate", "--threads", "2", "--export-csv", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let listed = String::from_utf8(out.stdout).unwrap();
    assert!(listed.contains("observables.jsonl") && listed.contains("manifest.toml"));

    let info = hdns()
        .args(["checkpoint-info", "--checkpoint"])
        .arg(tmp.path().join("out/checkpoints/member-0-final.bin"))
        .output()
        .unwrap();
    assert!(info.status.success());
    let v: serde_json::Value = serde_json::from_slice(&info.stdout).unwrap();
    assert_eq!(v["step"].as_u64(), Some(20));
    assert_eq!(v["n"].as_u64(), Some(8));
}

#[test]
fn cli_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = simulate_config(&tmp.path().join("out"), 0.01, 1);
    let path = write_config(tmp.path(), &cfg);

    let missing = hdns().args(["simulate", "--config", "/nonexistent.toml"]).status().unwrap();
    assert_eq!(missing.code(), Some(2));

    let mismatch = hdns().args(["ergodic", "--config"]).arg(&path).status().unwrap();
    assert_eq!(mismatch.code(), Some(2));

    let ok = hdns().args(["simulate", "--config"]).arg(&path).status().unwrap();
    assert_eq!(ok.code(), Some(0));

    let ckpt = tmp.path().join("out/checkpoints/member-0-final.bin");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    let bad = tmp.path().join("bad.bin");
    std::fs::write(&bad, &bytes).unwrap();
    let corrupt = hdns().args(["simulate", "--config"]).arg(&path).arg("--resume").arg(&bad).status().unwrap();
    assert_eq!(corrupt.code(), Some(4));

    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[8] = 99;
    std::fs::write(&bad, &bytes).unwrap();
    match Checkpoint::read(&bad) {
        Err(e @ Error::UnsupportedVersion { .. }) => assert_eq!(exit_code(&e), 4),
        other => panic!("{other:?}"),
    }
}
