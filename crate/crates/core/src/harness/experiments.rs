use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::action::{quasi_potential, ActionProblem};
use crate::dynamics::{advance_segment, integrate, Drive, RunState, SolverConfig};
use crate::ergodics::{
    batch_means, coupled_gap, exponential_moment_bound, time_average, Observable, RateFit,
};
use crate::error::{Error, Result};
use crate::forcing::{ControlPath, NoiseOperator};
use crate::rng::StreamRng;
use crate::spectral::SpectralField;

use super::checkpoint::Checkpoint;
use super::config::{field_from_modes, ExperimentConfig};
use super::records::{self, ObservableRecord, OBSERVABLES_FILE};
use super::RunOutput;

fn run_id(cfg: &ExperimentConfig, member: usize) -> String {
    format!("{}-s{}-m{member}", cfg.kind.name(), cfg.seed)
}

#[derive(Serialize)]
struct AbortRecord<'a> {
    run_id: &'a str,
    t: f64,
    what: &'a str,
    last: Option<&'a ObservableRecord>,
}

/// Output of one ensemble member before it is written out.
struct Member {
    lines: Vec<ObservableRecord>,
    abort: Option<Error>,
}

fn simulate_member(
    cfg: &ExperimentConfig,
    solver: &SolverConfig,
    noise: &NoiseOperator,
    member: usize,
    start: Option<&Checkpoint>,
    ckpt_dir: &Path,
) -> Result<Member> {
    let grid = noise.grid();
    let steps = solver.steps()? as u64;
    let (mut state, mut rng) = match start {
        Some(c) => {
            c.field.check_same_grid(&SpectralField::zeros(grid))?;
            if c.step > steps {
                return Err(Error::Config(format!(
                    "checkpoint at step {} is past the configured end (step {steps})",
                    c.step
                )));
            }
            (c.run_state(), StreamRng::from_state(&c.rng))
        }
        None => (RunState::new(cfg.initial_state(grid)?), StreamRng::new(cfg.seed, member as u64)),
    };
    let id = run_id(cfg, member);
    let mut lines = Vec::new();
    let stride = solver.record_stride as u64;
    let every = if cfg.checkpoint.every == 0 {
        steps.max(1)
    } else {
        cfg.checkpoint.every
    };
    let mut continuing = start.is_some();
    while state.step < steps {
        let seg = (every - state.step % every).min(steps - state.step);
        // The starting record of a continued segment is already written.
        let mut skip = continuing && state.step % stride == 0;
        let mut drive = Drive::Stochastic { noise, rng: &mut rng };
        let res = advance_segment(&mut state, solver, &mut drive, seg, |obs, _| {
            if skip {
                skip = false;
            } else {
                lines.push(ObservableRecord::new(obs, &id));
            }
            Ok(())
        });
        continuing = true;
        if let Err(e) = res {
            return Ok(Member { lines, abort: Some(e) });
        }
        if state.step < steps && state.step % every == 0 {
            let path = ckpt_dir.join(format!("member-{member}-step-{}.bin", state.step));
            Checkpoint::new(&state, solver.dt, rng.state()).write(&path)?;
        }
    }
    Checkpoint::new(&state, solver.dt, rng.state()).write(&ckpt_dir.join(format!("member-{member}-final.bin")))?;
    Ok(Member { lines, abort: None })
}

/// Ensemble of stochastic runs; each member owns stream `member` of the
/// master seed. A resumed run appends to the stream already on disk.
pub fn run_simulate(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<RunOutput> {
    let grid = cfg.grid()?;
    let noise = cfg.noise(&grid)?;
    let solver = cfg.solver(cfg.physics.epsilon[0]);
    let steps = solver.steps()?;
    let dir = &cfg.output_dir;
    let ckpt_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;
    let start = resume.map(Checkpoint::read).transpose()?;
    if start.is_some() && cfg.samples.ensemble != 1 {
        return Err(Error::Config("--resume needs samples.ensemble = 1".into()));
    }
    let members: Vec<Member> = (0..cfg.samples.ensemble)
        .into_par_iter()
        .map(|m| simulate_member(cfg, &solver, &noise, m, start.as_ref(), &ckpt_dir))
        .collect::<Result<_>>()?;

    let mut out = RunOutput::default();
    if steps > 0 {
        let path = dir.join(OBSERVABLES_FILE);
        let mut text = String::new();
        if let Some(c) = &start {
            // Keep what the interrupted run wrote up to the checkpoint.
            // Lines are copied verbatim so earlier records stay bit-identical.
            if path.exists() {
                let values = records::read_lines(&path)?;
                let text_in = std::fs::read_to_string(&path)?;
                let lines = text_in.lines();
                for (v, line) in values.iter().zip(lines) {
                    if v["t"].as_f64().is_some_and(|t| t <= c.time) {
                        text.push_str(line);
                        text.push('\n');
                    }
                }
            }
        }
        for m in &members {
            for r in &m.lines {
                text.push_str(&records::to_line(r));
            }
        }
        std::fs::write(&path, text)?;
        out.files.push(OBSERVABLES_FILE.into());
    }
    out.files.push("checkpoints".into());
    for (i, m) in members.into_iter().enumerate() {
        if let Some(err) = m.abort {
            let id = run_id(cfg, i);
            let (t, what) = match &err {
                Error::NumericalAbort { t, what } => (*t, what.clone()),
                e => (f64::NAN, e.to_string()),
            };
            let rec = AbortRecord {
                run_id: &id,
                t,
                what: &what,
                last: m.lines.last(),
            };
            let mut f = std::fs::File::create(dir.join("abort.json"))?;
            writeln!(f, "{}", serde_json::to_string(&rec).expect("serializes"))?;
            return Err(err);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct SkeletonSummary {
    pub initial_energy: f64,
    pub final_energy: f64,
    pub dissipation_integral: f64,
    /// `|E(T) + 2 int D - E(0)|`; meaningful for the free equation.
    pub energy_balance_defect: f64,
    pub control_budget: f64,
    pub energy_decay: Option<RateFit>,
}

/// Deterministic skeleton run with a control that is constant in time.
pub fn run_skeleton(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let grid = cfg.grid()?;
    let noise = cfg.noise(&grid)?;
    let solver = cfg.solver(0.0);
    let steps = solver.steps()?;
    let section = cfg.skeleton.clone().unwrap_or_default();
    let control = if section.control.is_empty() {
        None
    } else {
        Some(ControlPath::constant(
            &field_from_modes(&grid, &section.control)?,
            solver.dt,
            steps,
        )?)
    };
    let u0 = cfg.initial_state(&grid)?;
    let traj = integrate(
        &u0,
        &solver,
        Drive::Skeleton {
            noise: &noise,
            control: control.as_ref(),
        },
    )?;
    let id = run_id(cfg, 0);
    let recs: Vec<_> = traj.records.iter().map(|o| ObservableRecord::new(o, &id)).collect();
    records::write_lines(&cfg.output_dir.join(OBSERVABLES_FILE), &recs)?;

    let e0 = u0.energy();
    let e1 = traj.final_state.energy();
    let d = traj.records.last().map(|r| r.psi - r.energy).unwrap_or(0.0);
    let energy_decay = section.fit_window.and_then(|[lo, hi]| {
        let (ts, ys): (Vec<f64>, Vec<f64>) = traj
            .records
            .iter()
            .filter(|r| r.t >= lo && r.t <= hi)
            .map(|r| (r.t, r.energy))
            .unzip();
        crate::ergodics::fit_decay_rate(&ts, &ys, 0.0, f64::INFINITY).ok()
    });
    let summary = SkeletonSummary {
        initial_energy: e0,
        final_energy: e1,
        dissipation_integral: d,
        energy_balance_defect: (e1 + 2.0 * d - e0).abs(),
        control_budget: control.as_ref().map(|c| c.budget()).unwrap_or(0.0),
        energy_decay,
    };
    records::write_json(&cfg.output_dir.join("summary.json"), &summary)?;
    Ok(RunOutput {
        files: vec![OBSERVABLES_FILE.into(), "summary.json".into()],
        notes: Vec::new(),
    })
}

#[derive(Serialize)]
struct EstimateRow {
    run_id: String,
    observable: String,
    value: f64,
    stderr: f64,
    window: (f64, f64),
    batches: usize,
}

#[derive(Serialize)]
struct GapRow {
    run_id: String,
    dynamics: &'static str,
    initial_gap: f64,
    rate: Option<f64>,
    std_error: Option<f64>,
    window: Option<(f64, f64)>,
    points: usize,
}

/// Long-time averages, coupled-gap decay and the exponential moment bound.
pub fn run_ergodic(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let grid = cfg.grid()?;
    let noise = cfg.noise(&grid)?;
    let eps = cfg.physics.epsilon[0];
    let solver = cfg.solver(eps);
    let section = cfg.ergodic.clone().unwrap_or_default();
    let u0 = cfg.initial_state(&grid)?;
    let mut observables = vec![Observable::Energy, Observable::Dissipation];
    observables.extend(cfg.physics.sobolev_orders.iter().map(|&s| Observable::SobolevNorm(s)));

    struct MemberOut {
        estimates: Vec<EstimateRow>,
        gaps: Vec<GapRow>,
        psi_end: f64,
    }
    let members: Vec<MemberOut> = (0..cfg.samples.ensemble)
        .into_par_iter()
        .map(|m| -> Result<MemberOut> {
            let id = run_id(cfg, m);
            let mut rng = StreamRng::new(cfg.seed, m as u64);
            let traj = integrate(&u0, &solver, Drive::Stochastic { noise: &noise, rng: &mut rng })?;
            let mut estimates = Vec::new();
            for o in &observables {
                let est = time_average(&traj, o, section.burn_in, section.batches)?;
                estimates.push(EstimateRow {
                    run_id: id.clone(),
                    observable: est.observable,
                    value: est.value,
                    stderr: est.batch_std_error,
                    window: (est.burn_in, est.horizon),
                    batches: est.batches,
                });
            }
            let mut gaps = Vec::new();
            if section.gap_perturbation > 0.0 {
                let mut prng = StreamRng::new(cfg.seed, (1 << 40) + m as u64);
                let dir = SpectralField::random_transverse(&grid, &mut prng, |i| {
                    (-grid.k2(i) / 4.0).exp()
                });
                let u0b = u0.add(&dir.scaled(section.gap_perturbation / dir.norm_h()));
                let gap_cfg = SolverConfig {
                    seed: cfg.seed.wrapping_add(m as u64),
                    ..solver.clone()
                };
                let mut variants = vec![("nonlinear", gap_cfg.clone())];
                if gap_cfg.nonlinear {
                    variants.push((
                        "linear",
                        SolverConfig {
                            nonlinear: false,
                            ..gap_cfg
                        },
                    ));
                } else {
                    variants[0].0 = "linear";
                }
                for (name, c) in variants {
                    let g = coupled_gap(&u0, &u0b, &c, &noise)?;
                    gaps.push(GapRow {
                        run_id: id.clone(),
                        dynamics: name,
                        initial_gap: g.gaps[0],
                        rate: g.fit.map(|f| f.rate),
                        std_error: g.fit.map(|f| f.std_error),
                        window: g.fit.map(|f| f.window),
                        points: g.fit.map(|f| f.points).unwrap_or(0),
                    });
                }
            }
            let psi_end = traj.records.last().map(|r| r.psi).unwrap_or(0.0);
            Ok(MemberOut {
                estimates,
                gaps,
                psi_end,
            })
        })
        .collect::<Result<_>>()?;

    let dir = &cfg.output_dir;
    let est: Vec<_> = members.iter().flat_map(|m| &m.estimates).collect();
    records::write_lines(&dir.join("estimates.jsonl"), &est)?;
    let mut files = vec!["estimates.jsonl".to_string()];
    let gaps: Vec<_> = members.iter().flat_map(|m| &m.gaps).collect();
    if !gaps.is_empty() {
        records::write_lines(&dir.join("gaps.jsonl"), &gaps)?;
        files.push("gaps.jsonl".into());
    }
    if members.len() >= 2 {
        let psi: Vec<f64> = members.iter().map(|m| m.psi_end).collect();
        let bound = exponential_moment_bound(
            &psi,
            u0.energy(),
            eps,
            solver.t_end,
            noise.hs_norm_sq(0.0),
            section.moment_constant,
        )?;
        records::write_json(&dir.join("moment_bound.json"), &bound)?;
        files.push("moment_bound.json".into());
    }
    Ok(RunOutput {
        files,
        notes: vec![("burn_in".into(), section.burn_in.to_string())],
    })
}

#[derive(Serialize)]
struct ActionRow<'a> {
    target_id: &'a str,
    #[serde(rename = "T")]
    horizon: f64,
    steps: usize,
    action: f64,
    /// Same path measured without `G^{-1}`.
    residual_action: f64,
    endpoint_error: f64,
    iterations: usize,
    converged: bool,
}

#[derive(Serialize)]
struct QuasiPotentialSummary<'a> {
    target_id: &'a str,
    value: f64,
    horizon: f64,
    /// `sum lambda_k |x_k|^2 / g_k^2`, the quasi-potential of the linear
    /// equation.
    linear_value: Option<f64>,
}

/// `(T, action)` profile over the configured horizons for one target.
pub fn run_action(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let grid = cfg.grid()?;
    let noise = cfg.noise(&grid)?;
    let section = cfg.action.clone().expect("validated");
    let target = field_from_modes(&grid, &section.target)?;
    let solver = cfg.solver(0.0);
    let mut template = ActionProblem::new(target.clone(), 1.0, 1);
    if let Some(p) = &section.penalties {
        template.penalties = p.clone();
    }
    template.grad_tol = section.grad_tol;
    template.max_iter = section.max_iter;
    let qp = quasi_potential(&target, &cfg.time.horizons, &noise, &solver, &template)?;
    let rows: Vec<_> = qp
        .profile
        .iter()
        .map(|p| ActionRow {
            target_id: &section.target_id,
            horizon: p.horizon,
            steps: p.steps,
            action: p.action,
            residual_action: p.residual_action,
            endpoint_error: p.endpoint_error,
            iterations: p.iterations,
            converged: p.converged,
        })
        .collect();
    records::write_lines(&cfg.output_dir.join("action.jsonl"), &rows)?;
    let mut linear = 0.0;
    let mut reachable = true;
    for &idx in grid.representatives() {
        let d = target.real_dofs(idx);
        let mass: f64 = d.iter().map(|v| v * v).sum();
        if mass == 0.0 {
            continue;
        }
        let g = noise.amplitude(idx);
        if g == 0.0 {
            reachable = false;
            break;
        }
        linear += grid.k2(idx).powf(cfg.physics.alpha) * mass / (g * g);
    }
    let summary = QuasiPotentialSummary {
        target_id: &section.target_id,
        value: qp.value,
        horizon: qp.horizon,
        linear_value: reachable.then_some(linear),
    };
    records::write_json(&cfg.output_dir.join("quasi_potential.json"), &summary)?;
    Ok(RunOutput {
        files: vec!["action.jsonl".into(), "quasi_potential.json".into()],
        notes: Vec::new(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TailRow {
    pub epsilon: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    #[serde(rename = "R2")]
    pub radius_sq: f64,
    pub occupation: f64,
    pub stderr: f64,
    /// `eps log occupation`; `None` on lower-bound rows.
    pub eps_log_occupation: Option<f64>,
    /// Zero occupation: only `eps log mu <= eps log(1 / samples)` is known.
    pub lower_bound_only: bool,
    pub eps_log_bound: f64,
    pub samples: usize,
    /// `eps log P(||v|| > R)` for the stationary single-mode linear law.
    pub analytic_eps_log: Option<f64>,
}

/// Occupation-time estimate of `mu^eps(||u||_H > R)` from one long run per
/// `eps` after the configured burn-in.
pub fn run_invariant_tail(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let grid = cfg.grid()?;
    let noise = cfg.noise(&grid)?;
    let section = cfg.tail.clone().unwrap_or_default();
    let u0 = cfg.initial_state(&grid)?;

    // Linear single-mode benchmark: ||v||^2 / sigma^2 is chi-square with
    // four degrees of freedom.
    let forced: Vec<usize> = grid
        .representatives()
        .iter()
        .copied()
        .filter(|&i| noise.amplitude(i) > 0.0)
        .collect();
    let single = (!cfg.physics.nonlinear && forced.len() == 1).then(|| {
        let i = forced[0];
        let g = noise.amplitude(i);
        g * g / (2.0 * grid.k2(i).powf(cfg.physics.alpha))
    });

    let rows: Vec<Vec<TailRow>> = cfg
        .physics
        .epsilon
        .par_iter()
        .enumerate()
        .map(|(e_idx, &eps)| -> Result<Vec<TailRow>> {
            let solver = cfg.solver(eps);
            let steps = solver.steps()? as u64;
            let mut rng = StreamRng::new(cfg.seed, e_idx as u64);
            let mut state = RunState::new(u0.clone());
            let mut norms = Vec::new();
            let mut drive = Drive::Stochastic { noise: &noise, rng: &mut rng };
            advance_segment(&mut state, &solver, &mut drive, steps, |obs, _| {
                if obs.t >= section.burn_in {
                    norms.push(obs.energy.sqrt());
                }
                Ok(())
            })?;
            let mut out = Vec::new();
            for &r in &section.radii {
                let ind: Vec<f64> = norms.iter().map(|&x| if x > r { 1.0 } else { 0.0 }).collect();
                let (occ, se) = batch_means(&ind, section.batches)?;
                let n = ind.len();
                let hits = ind.iter().filter(|&&x| x > 0.0).count();
                let analytic = single.map(|s2| {
                    let x = r * r / (eps * s2);
                    eps * (-x / 2.0 + (1.0 + x / 2.0).ln())
                });
                out.push(TailRow {
                    epsilon: eps,
                    radius: r,
                    radius_sq: r * r,
                    occupation: occ,
                    stderr: se,
                    eps_log_occupation: (hits > 0).then(|| eps * occ.ln()),
                    lower_bound_only: hits == 0,
                    eps_log_bound: eps * (1.0 / n as f64).ln(),
                    samples: n,
                    analytic_eps_log: analytic,
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<TailRow> = rows.into_iter().flatten().collect();
    records::write_lines(&cfg.output_dir.join("tail.jsonl"), &rows)?;
    Ok(RunOutput {
        files: vec!["tail.jsonl".into()],
        notes: vec![
            ("burn_in".into(), section.burn_in.to_string()),
            ("occupation".into(), "single trajectory per epsilon".into()),
        ],
    })
}
