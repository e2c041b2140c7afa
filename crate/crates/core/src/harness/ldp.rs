use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::dynamics::{Propagator, SolverConfig};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::spectral::SpectralField;

use super::config::{ExperimentConfig, LdpEvent};
use super::records;
use super::RunOutput;

/// One epsilon of a Monte Carlo sweep.
#[derive(Clone, Debug, Serialize)]
pub struct LdpRow {
    pub epsilon: f64,
    pub samples: u64,
    pub hits: u64,
    pub p_hat: f64,
    /// Binomial standard error `sqrt(p (1 - p) / n)`.
    pub p_stderr: f64,
    /// 95% Wilson interval.
    pub p_interval: (f64, f64),
    /// `-eps log p_hat`; `None` on lower-bound rows.
    pub rate_estimate: Option<f64>,
    /// `-eps log` of the Wilson interval, as (low, high) rate.
    pub rate_interval: (f64, f64),
    /// No hits: only `rate >= rate_lower_bound` (rule of three) is known.
    pub lower_bound_only: bool,
    pub rate_lower_bound: f64,
    /// `inf I` over the event, `a^2 / (2 s_T^2)` for the threshold event.
    pub analytic_rate: f64,
    /// `-eps log P` of the exact Gaussian law at this `eps`.
    pub exact_rate: f64,
    /// `|rate_estimate - analytic_rate| / analytic_rate`.
    pub relative_error: Option<f64>,
}

/// Upper Gaussian tail `Q(z) = P(Z >= z)`.
pub fn gaussian_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

fn wilson(hits: u64, n: u64) -> (f64, f64) {
    let z = 1.959963984540054;
    let n = n as f64;
    let p = hits as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    let lo = if hits == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if hits as f64 == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Builds one sweep row from the hit count.
pub fn ldp_row(epsilon: f64, samples: u64, hits: u64, analytic_rate: f64, exact_p: f64) -> LdpRow {
    let n = samples as f64;
    let p = hits as f64 / n;
    let (lo, hi) = wilson(hits, samples);
    let rate = |q: f64| if q > 0.0 { -epsilon * q.ln() } else { f64::INFINITY };
    let rate_estimate = (hits > 0).then(|| rate(p));
    LdpRow {
        epsilon,
        samples,
        hits,
        p_hat: p,
        p_stderr: (p * (1.0 - p) / n).sqrt(),
        p_interval: (lo, hi),
        rate_estimate,
        rate_interval: (rate(hi), rate(lo)),
        lower_bound_only: hits == 0,
        rate_lower_bound: rate(3.0 / n),
        analytic_rate,
        exact_rate: rate(exact_p),
        relative_error: rate_estimate
            .filter(|_| analytic_rate > 0.0)
            .map(|r| (r - analytic_rate).abs() / analytic_rate),
    }
}

/// Monte Carlo estimate of `P(v(T) in event)` for the linear equation from
/// rest, per epsilon, with exact Ornstein-Uhlenbeck transitions. Sample
/// chunk `c` of epsilon `e` draws from stream `e * 2^32 + c`.
pub fn run_ldp_sweep(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let grid = cfg.grid()?;
    let noise = cfg.noise(&grid)?;
    let ldp = cfg.ldp.clone().expect("validated");
    let horizon = ldp.horizon;
    let dt = horizon / ldp.steps as f64;
    let samples = cfg.samples.per_epsilon;
    let chunk = cfg.samples.chunk;
    let chunks = samples.div_ceil(chunk);

    // Event as (mode index, threshold) on the first real degree of freedom.
    let event = match &ldp.event {
        LdpEvent::Always => None,
        LdpEvent::Threshold {
            k,
            threshold,
            threshold_std,
        } => {
            let idx = grid
                .index_of(*k)
                .filter(|&i| grid.in_mask(i))
                .ok_or_else(|| Error::Config(format!("mode {k:?} is not retained")))?;
            let g = noise.amplitude(idx);
            if g == 0.0 {
                return Err(Error::Config(format!("mode {k:?} carries no noise")));
            }
            let lambda = grid.k2(idx).powf(cfg.physics.alpha);
            let s_inf = (g * g / (2.0 * lambda)).sqrt();
            let s_t2 = -g * g * (-2.0 * lambda * horizon).exp_m1() / (2.0 * lambda);
            let a = threshold.unwrap_or_else(|| threshold_std.unwrap() * s_inf);
            Some((idx, a, s_t2))
        }
    };

    let mut rows = Vec::new();
    for (e_idx, &eps) in cfg.physics.epsilon.iter().enumerate() {
        let (hits, analytic, exact_p) = match event {
            None => (samples, 0.0, 1.0),
            Some((idx, a, s_t2)) => {
                let solver = SolverConfig {
                    dt,
                    t_end: horizon,
                    epsilon: eps,
                    alpha: cfg.physics.alpha,
                    nonlinear: false,
                    seed: cfg.seed,
                    ..Default::default()
                };
                let prop = Propagator::new(&solver, &noise)?;
                let hits: u64 = (0..chunks)
                    .into_par_iter()
                    .map(|c| {
                        let mut rng = StreamRng::new(cfg.seed, ((e_idx as u64) << 32) + c);
                        let count = chunk.min(samples - c * chunk);
                        let mut h = 0;
                        for _ in 0..count {
                            let mut v = SpectralField::zeros(&grid);
                            for _ in 0..ldp.steps {
                                v = prop.step_linear_exact(&v, &mut rng);
                            }
                            if v.real_dofs(idx)[0] >= a {
                                h += 1;
                            }
                        }
                        h
                    })
                    .sum();
                let exact_p = gaussian_tail(a / (eps * s_t2).sqrt());
                (hits, a * a / (2.0 * s_t2), exact_p)
            }
        };
        rows.push(ldp_row(eps, samples, hits, analytic, exact_p));
    }
    records::write_lines(&cfg.output_dir.join("ldp.jsonl"), &rows)?;
    Ok(RunOutput {
        files: vec!["ldp.jsonl".into()],
        notes: vec![("chunk".into(), chunk.to_string())],
    })
}
