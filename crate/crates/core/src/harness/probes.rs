use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{solve_random_nse, Propagator, RandomNseScheme, SolverConfig};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::spectral::{SpectralField, TorusGrid};

use super::config::ExperimentConfig;
use super::records;
use super::RunOutput;

#[derive(Clone, Debug, Serialize)]
pub struct DecompositionRow {
    pub dt: f64,
    pub steps: usize,
    /// `max_t ||u(t) - (v(t) + u~(t))||_H`
    pub max_error: f64,
    pub max_norm_u: f64,
    pub relative_error: f64,
    /// Previous (coarser) level error over this one.
    pub reduction: Option<f64>,
}

/// Direct solution against `v + M(v)` on one Brownian path, at `dt` and at
/// each refinement `dt / 2^j`; coarse increments aggregate the fine ones
/// through the exact stochastic convolution.
pub fn decomposition_levels(
    u0: &SpectralField,
    solver: &SolverConfig,
    noise: &crate::forcing::NoiseOperator,
    refinements: usize,
) -> Result<Vec<DecompositionRow>> {
    u0.check_same_grid(&SpectralField::zeros(noise.grid()))?;
    let levels = refinements.max(1);
    let fine = 1usize << (levels - 1);
    let fine_cfg = solver.with_dt(solver.dt / fine as f64);
    let fine_steps = fine_cfg.steps()?;
    let fine_prop = Propagator::new(&fine_cfg, noise)?;
    let mut rng = StreamRng::new(solver.seed, 0);
    let mut xi: Vec<SpectralField> = (0..fine_steps).map(|_| fine_prop.sample_noise(u0, &mut rng)).collect();
    let mut by_level = Vec::with_capacity(levels);
    let mut cfg = fine_cfg;
    loop {
        by_level.push((cfg.clone(), xi.clone()));
        if by_level.len() == levels {
            break;
        }
        let decay = Propagator::new(&cfg, noise)?.decay().to_vec();
        xi = xi
            .chunks(2)
            .map(|p| {
                let mut c = p[0].clone();
                c.multiply_modes(&decay);
                c.axpy(1.0, &p[1]);
                c
            })
            .collect();
        cfg = cfg.with_dt(cfg.dt * 2.0);
    }
    by_level.reverse();

    let mut rows: Vec<DecompositionRow> = Vec::new();
    for (cfg, xi) in by_level {
        let prop = Propagator::new(&cfg, noise)?;
        let mut u = u0.clone();
        let mut v = SpectralField::zeros(noise.grid());
        let mut us = vec![u.clone()];
        let mut vs = vec![v.clone()];
        for x in &xi {
            u = prop.advance(&u, None, Some(x))?;
            v = prop.step_linear_with(&v, x);
            if !u.is_finite() {
                return Err(Error::NumericalAbort {
                    t: us.len() as f64 * cfg.dt,
                    what: "direct solution blew up".into(),
                });
            }
            us.push(u.clone());
            vs.push(v.clone());
        }
        let tcfg = SolverConfig {
            snapshot_every: 1,
            record_stride: 1,
            ..cfg.clone()
        };
        let traj = solve_random_nse(u0, &vs, &tcfg, RandomNseScheme::Heun)?;
        let mut max_error: f64 = 0.0;
        let mut max_norm: f64 = 0.0;
        for ((uu, vv), (_, w)) in us.iter().zip(&vs).zip(&traj.snapshots) {
            max_error = max_error.max(uu.sub(&vv.add(w)).norm_h());
            max_norm = max_norm.max(uu.norm_h());
        }
        let reduction = rows.last().map(|r| r.max_error / max_error);
        rows.push(DecompositionRow {
            dt: cfg.dt,
            steps: xi.len(),
            max_error,
            max_norm_u: max_norm,
            relative_error: if max_norm > 0.0 { max_error / max_norm } else { max_error },
            reduction,
        });
    }
    Ok(rows)
}

pub fn run_decomposition_check(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let grid = cfg.grid()?;
    let noise = cfg.noise(&grid)?;
    let solver = cfg.solver(cfg.physics.epsilon[0]);
    let u0 = cfg.initial_state(&grid)?;
    let section = cfg.decompose.clone().unwrap_or_default();
    let rows = decomposition_levels(&u0, &solver, &noise, section.refinements)?;
    records::write_lines(&cfg.output_dir.join("decompose.jsonl"), &rows)?;
    Ok(RunOutput {
        files: vec!["decompose.jsonl".into()],
        notes: vec![("scheme".into(), "integrating-factor Heun for u~".into())],
    })
}

/// Piecewise-linear path through `nodes.len()` equally spaced nodes on `[0, t]`.
#[derive(Clone, Debug)]
pub struct LinearPath {
    pub nodes: Vec<SpectralField>,
    pub horizon: f64,
}

impl LinearPath {
    fn random(grid: &Arc<TorusGrid>, nodes: usize, horizon: f64, rng: &mut StreamRng) -> Self {
        let nodes = (0..nodes)
            .map(|_| {
                SpectralField::random_transverse(grid, rng, |i| {
                    let k2 = grid.k2(i);
                    1.0 / (1.0 + k2 * k2)
                })
            })
            .collect();
        Self { nodes, horizon }
    }

    fn scaled(&self, a: f64) -> Self {
        Self {
            nodes: self.nodes.iter().map(|f| f.scaled(a)).collect(),
            horizon: self.horizon,
        }
    }

    fn add(&self, other: &Self, a: f64) -> Self {
        Self {
            nodes: self
                .nodes
                .iter()
                .zip(&other.nodes)
                .map(|(x, y)| {
                    let mut z = x.clone();
                    z.axpy(a, y);
                    z
                })
                .collect(),
            horizon: self.horizon,
        }
    }

    /// `(int ||Lambda^{5/4} v||^4 dt)^{1/4}`. The integrand is a quartic in
    /// time on each segment, which Boole's rule integrates exactly.
    pub fn l4_norm(&self, alpha: f64) -> f64 {
        let segs = self.nodes.len() - 1;
        if segs == 0 {
            return 0.0;
        }
        let h = self.horizon / segs as f64;
        let mut total = 0.0;
        for w in self.nodes.windows(2) {
            let f = |s: f64| {
                let mut z = w[0].scaled(1.0 - s);
                z.axpy(s, &w[1]);
                z.sobolev_norm_sq(alpha).powi(2)
            };
            let vals: Vec<f64> = (0..=4).map(|j| f(j as f64 / 4.0)).collect();
            total += h / 90.0 * (7.0 * vals[0] + 32.0 * vals[1] + 12.0 * vals[2] + 32.0 * vals[3] + 7.0 * vals[4]);
        }
        total.powf(0.25)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LipschitzRow {
    #[serde(rename = "R")]
    pub radius: f64,
    pub scale: f64,
    pub pair: usize,
    pub norm_v1: f64,
    pub norm_v2: f64,
    pub distance: f64,
    pub sup_difference: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
struct LipschitzSummary {
    #[serde(rename = "R")]
    radius: f64,
    max_ratio: f64,
    mean_ratio: f64,
    pairs: usize,
}

/// Empirical Lipschitz ratios of `v -> u~` on the `L^4(0,T;H^{5/4})` ball.
pub fn run_lipschitz_probe(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let grid = cfg.grid()?;
    let section = cfg.lipschitz.clone().unwrap_or_default();
    let solver = SolverConfig {
        snapshot_every: 1,
        ..cfg.solver(0.0)
    };
    let alpha = cfg.physics.alpha;
    let u0 = cfg.initial_state(&grid)?;
    let horizon = solver.t_end;
    let mut jobs = Vec::new();
    for &r in &section.radii {
        for &s in &section.scales {
            for p in 0..section.pairs {
                jobs.push((r, s, p));
            }
        }
    }
    let rows: Vec<LipschitzRow> = jobs
        .par_iter()
        .enumerate()
        .map(|(j, &(radius, scale, pair))| -> Result<LipschitzRow> {
            let mut rng = StreamRng::new(cfg.seed, j as u64);
            let base = LinearPath::random(&grid, section.nodes, horizon, &mut rng);
            let frac = 0.5 + 0.4 * rng.uniform();
            let v1 = base.scaled(radius * frac / base.l4_norm(alpha));
            let dir = LinearPath::random(&grid, section.nodes, horizon, &mut rng);
            let mut step = scale * radius / dir.l4_norm(alpha);
            // Shrink the perturbation until v2 lies in the ball; v2 != v1.
            let v2 = loop {
                let plus = v1.add(&dir, step);
                if plus.l4_norm(alpha) <= radius {
                    break plus;
                }
                let minus = v1.add(&dir, -step);
                if minus.l4_norm(alpha) <= radius {
                    break minus;
                }
                step *= 0.5;
            };
            let m1 = solve_random_nse(&u0, &v1.nodes, &solver, RandomNseScheme::Heun)?;
            let m2 = solve_random_nse(&u0, &v2.nodes, &solver, RandomNseScheme::Heun)?;
            let sup = m1
                .snapshots
                .iter()
                .zip(&m2.snapshots)
                .map(|((_, a), (_, b))| a.sub(b).norm_h())
                .fold(0.0, f64::max);
            let distance = v1.add(&v2, -1.0).l4_norm(alpha);
            Ok(LipschitzRow {
                radius,
                scale,
                pair,
                norm_v1: v1.l4_norm(alpha),
                norm_v2: v2.l4_norm(alpha),
                distance,
                sup_difference: sup,
                ratio: sup / distance,
            })
        })
        .collect::<Result<_>>()?;
    records::write_lines(&cfg.output_dir.join("lipschitz.jsonl"), &rows)?;
    let summary: Vec<LipschitzSummary> = section
        .radii
        .iter()
        .map(|&r| {
            let rs: Vec<f64> = rows.iter().filter(|x| x.radius == r).map(|x| x.ratio).collect();
            LipschitzSummary {
                radius: r,
                max_ratio: rs.iter().copied().fold(0.0, f64::max),
                mean_ratio: rs.iter().sum::<f64>() / rs.len() as f64,
                pairs: rs.len(),
            }
        })
        .collect();
    records::write_lines(&cfg.output_dir.join("lipschitz_summary.jsonl"), &summary)?;
    Ok(RunOutput {
        files: vec!["lipschitz.jsonl".into(), "lipschitz_summary.jsonl".into()],
        notes: Vec::new(),
    })
}
