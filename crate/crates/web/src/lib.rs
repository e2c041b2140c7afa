//! Browser bindings: free energy decay, the action-versus-horizon profile of
//! a single-mode target and Monte Carlo large-deviation rates.
//!
//! Every export returns a flat `Float64Array` of fixed-width rows so the page
//! can plot it without a serialization layer.

use wasm_bindgen::prelude::*;

use hdns::action::{minimize_action, ActionProblem};
use hdns::dynamics::{integrate, Drive, Propagator, SolverConfig};
use hdns::forcing::{make_noise, NoiseOperator};
use hdns::harness::config::smooth_field;
use hdns::harness::{gaussian_tail, ldp_row};
use hdns::rng::StreamRng;
use hdns::spectral::{make_grid, SpectralField};

const MODE: [i32; 3] = [1, 0, 0];

fn single_mode_noise() -> Result<NoiseOperator, String> {
    let grid = make_grid(4).map_err(|e| e.to_string())?;
    make_noise(&grid, 2.0)
        .and_then(|n| n.restricted_to(&[MODE]))
        .map_err(|e| e.to_string())
}

/// Rows `(t, ||u||^2)` of the free deterministic flow from a smooth random
/// field of energy `norm^2` on an `8^3` grid.
pub fn energy_decay_rows(norm: f64, k0: f64, seed: u64, t_end: f64, dt: f64) -> Result<Vec<f64>, String> {
    let grid = make_grid(8).map_err(|e| e.to_string())?;
    let noise = make_noise(&grid, 2.0).map_err(|e| e.to_string())?;
    let steps = (t_end / dt).round().max(1.0);
    let cfg = SolverConfig {
        dt,
        t_end,
        record_stride: (steps / 200.0).ceil() as usize,
        ..Default::default()
    };
    let u0 = smooth_field(&grid, norm, k0, seed);
    let traj = integrate(&u0, &cfg, Drive::Skeleton { noise: &noise, control: None }).map_err(|e| e.to_string())?;
    Ok(traj.records.iter().flat_map(|r| [r.t, r.energy]).collect())
}

/// Rows `(T, minimal action)` for reaching `amplitude` along the forced
/// mode from rest, followed by one row `(inf, linear quasi-potential)`.
pub fn action_profile_rows(amplitude: f64, horizons: &[f64], dt: f64) -> Result<Vec<f64>, String> {
    let noise = single_mode_noise()?;
    let grid = noise.grid().clone();
    let target = SpectralField::single_dof(&grid, MODE, amplitude).map_err(|e| e.to_string())?;
    let cfg = SolverConfig {
        dt,
        nonlinear: false,
        ..Default::default()
    };
    let mut out = Vec::with_capacity(2 * horizons.len() + 2);
    for &t in horizons {
        let steps = (t / dt).round().max(1.0) as usize;
        let res = minimize_action(&ActionProblem::new(target.clone(), t, steps), &noise, &cfg)
            .map_err(|e| e.to_string())?;
        out.extend([t, res.action]);
    }
    let idx = grid.index_of(MODE).expect("mode on grid");
    let mass: f64 = target.real_dofs(idx).iter().map(|v| v * v).sum();
    let g = noise.amplitude(idx);
    out.extend([f64::INFINITY, grid.k2(idx).powf(1.25) * mass / (g * g)]);
    Ok(out)
}

/// Rows `(eps, Monte Carlo rate or NaN, exact rate, asymptotic rate)` for
/// the event that the forced mode exceeds `threshold_std` stationary
/// standard deviations at time `horizon`.
pub fn ldp_rate_rows(threshold_std: f64, horizon: f64, epsilons: &[f64], samples: u64, seed: u64) -> Result<Vec<f64>, String> {
    let noise = single_mode_noise()?;
    let grid = noise.grid().clone();
    let idx = grid.index_of(MODE).expect("mode on grid");
    let g = noise.amplitude(idx);
    let lambda = grid.k2(idx).powf(1.25);
    let s_t2 = -g * g * (-2.0 * lambda * horizon).exp_m1() / (2.0 * lambda);
    let a = threshold_std * (g * g / (2.0 * lambda)).sqrt();
    let mut out = Vec::with_capacity(4 * epsilons.len());
    for (e, &eps) in epsilons.iter().enumerate() {
        let cfg = SolverConfig {
            dt: horizon,
            t_end: horizon,
            epsilon: eps,
            nonlinear: false,
            ..Default::default()
        };
        let prop = Propagator::new(&cfg, &noise).map_err(|e| e.to_string())?;
        let mut rng = StreamRng::new(seed, e as u64);
        let zero = SpectralField::zeros(&grid);
        let hits = (0..samples)
            .filter(|_| prop.step_linear_exact(&zero, &mut rng).real_dofs(idx)[0] >= a)
            .count() as u64;
        let exact_p = gaussian_tail(a / (eps * s_t2).sqrt());
        let row = ldp_row(eps, samples, hits, a * a / (2.0 * s_t2), exact_p);
        out.extend([eps, row.rate_estimate.unwrap_or(f64::NAN), row.exact_rate, row.analytic_rate]);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn energy_decay(norm: f64, k0: f64, seed: u32, t_end: f64, dt: f64) -> Result<Vec<f64>, JsError> {
    energy_decay_rows(norm, k0, seed as u64, t_end, dt).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn action_profile(amplitude: f64, horizons: Vec<f64>, dt: f64) -> Result<Vec<f64>, JsError> {
    action_profile_rows(amplitude, &horizons, dt).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn ldp_rates(threshold_std: f64, horizon: f64, epsilons: Vec<f64>, samples: u32, seed: u32) -> Result<Vec<f64>, JsError> {
    ldp_rate_rows(threshold_std, horizon, &epsilons, samples as u64, seed as u64).map_err(|e| JsError::new(&e))
}
