//! Rate function, residual controls and a shooting minimum action method.
//!
//! The rate function is used in control form. For a path `u` of the
//! skeleton equation driven by `G phi`, `I(u) = 1/2 int ||phi||^2` with
//! `G phi = u' + A^alpha u + B(u, u)`. The discrete residual inverts the
//! integrating-factor stencil exactly:
//!
//! ```text
//! G phi_i = (u_{i+1} - e^{-lambda dt} u_i) / phi1 + B(u_i, u_i)
//! ```
//!
//! which tends to `(u_{i+1} - u_i)/dt + lambda u_i + B(u_i)` as `dt -> 0`.

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{Propagator, SolverConfig};
use crate::error::{Error, Result};
use crate::forcing::{ControlPath, NoiseOperator};
use crate::optimize::{lbfgs, LbfgsOptions, Point};
use crate::spectral::{linearized_adjoint, SpectralField};

/// `1/2 sum ||phi(t_i)||^2 dt`.
pub fn action_of_control(phi: &ControlPath) -> f64 {
    phi.budget()
}

/// Residual `M(u)` of the discrete skeleton stencil at each step.
fn residuals(path: &[SpectralField], prop: &Propagator) -> Result<Vec<SpectralField>> {
    if path.len() < 2 {
        return Err(Error::InsufficientData("path needs at least two nodes".into()));
    }
    let inv_phi1: Vec<f64> = prop
        .phi1()
        .iter()
        .map(|&p| if p > 0.0 { 1.0 / p } else { 0.0 })
        .collect();
    let mut out = Vec::with_capacity(path.len() - 1);
    for w in path.windows(2) {
        w[0].check_same_grid(&w[1])?;
        let mut m = w[0].clone();
        m.multiply_modes(prop.decay());
        let mut r = w[1].sub(&m);
        r.multiply_modes(&inv_phi1);
        r.axpy(1.0, &prop.convection(&w[0])?);
        out.push(r);
    }
    Ok(out)
}

/// Control `phi = G^{-1} M(u)` whose skeleton solution is `path`.
///
/// `path` holds the states at `t_0..=t_n` on the step `cfg.dt`.
pub fn residual_control(
    path: &[SpectralField],
    noise: &NoiseOperator,
    cfg: &SolverConfig,
) -> Result<ControlPath> {
    let prop = Propagator::new(cfg, noise)?;
    let res = residuals(path, &prop)?;
    let mut values = Vec::with_capacity(res.len());
    for (r, u) in res.into_iter().zip(path) {
        let tol = 1e-9 * (r.norm_h() + u.norm_h() / cfg.dt);
        let mut phi = r.clone();
        for (idx, c) in phi.coeffs_mut().iter_mut().enumerate() {
            let g = noise.amplitude(idx);
            if g > 0.0 {
                for z in c.iter_mut() {
                    *z /= g;
                }
            } else {
                let mag = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                if mag > tol {
                    return Err(Error::Infeasible { index: idx, residual: mag });
                }
                *c = [0.0.into(); 3];
            }
        }
        values.push(phi);
    }
    ControlPath::new(cfg.dt, values)
}

/// Control-form action `I(u) = 1/2 int ||G^{-1} M(u)||^2`.
pub fn action_of_path(path: &[SpectralField], noise: &NoiseOperator, cfg: &SolverConfig) -> Result<f64> {
    Ok(action_of_control(&residual_control(path, noise, cfg)?))
}

/// `1/2 int ||M(u)||^2`, the same functional without `G^{-1}`.
pub fn residual_action(path: &[SpectralField], noise: &NoiseOperator, cfg: &SolverConfig) -> Result<f64> {
    let prop = Propagator::new(cfg, noise)?;
    Ok(0.5 * residuals(path, &prop)?.iter().map(|r| r.energy()).sum::<f64>() * cfg.dt)
}

/// Discretized objective `1/2 sum ||phi_i||^2 dt + w ||u_n - x||^2` with the
/// forward map `u_{i+1} = e^{-lambda dt} u_i + phi1 (G phi_i - B(u_i))`,
/// `u_0 = 0`.
pub struct Shooting<'a> {
    prop: Propagator,
    noise: &'a NoiseOperator,
    target: &'a SpectralField,
    steps: usize,
}

impl<'a> Shooting<'a> {
    pub fn new(
        target: &'a SpectralField,
        horizon: f64,
        steps: usize,
        noise: &'a NoiseOperator,
        cfg: &SolverConfig,
    ) -> Result<Self> {
        target.check_same_grid(&SpectralField::zeros(noise.grid()))?;
        if steps == 0 || !(horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon {horizon} and steps {steps} must be positive"
            )));
        }
        let step_cfg = SolverConfig {
            dt: horizon / steps as f64,
            t_end: horizon,
            epsilon: 0.0,
            ..cfg.clone()
        };
        Ok(Self {
            prop: Propagator::new(&step_cfg, noise)?,
            noise,
            target,
            steps,
        })
    }

    pub fn dt(&self) -> f64 {
        self.prop.dt()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// States `u_0..=u_n` driven by `controls`.
    pub fn forward(&self, controls: &[SpectralField]) -> Result<Vec<SpectralField>> {
        let mut states = Vec::with_capacity(self.steps + 1);
        states.push(SpectralField::zeros(self.noise.grid()));
        for phi in controls.iter().take(self.steps) {
            let u = states.last().unwrap();
            let next = self.prop.step_skeleton(u, &self.noise.apply(phi))?;
            states.push(next);
        }
        Ok(states)
    }

    pub fn objective(&self, controls: &[SpectralField], weight: f64) -> Result<f64> {
        let states = self.forward(controls)?;
        Ok(self.value(controls, &states, weight))
    }

    fn value(&self, controls: &[SpectralField], states: &[SpectralField], weight: f64) -> f64 {
        let action = 0.5 * self.dt() * controls.iter().map(|p| p.energy()).sum::<f64>();
        action + weight * states[self.steps].sub(self.target).energy()
    }

    /// Objective and its gradient by the discrete adjoint of the stencil.
    pub fn value_and_gradient(&self, controls: &[SpectralField], weight: f64) -> Result<(f64, Point)> {
        let states = self.forward(controls)?;
        let value = self.value(controls, &states, weight);
        let mut mu = states[self.steps].sub(self.target).scaled(2.0 * weight);
        let mut grad = vec![SpectralField::zeros(self.noise.grid()); self.steps];
        for i in (0..self.steps).rev() {
            let mut w = mu.clone();
            w.multiply_modes(self.prop.phi1());
            let mut g = self.noise.apply(&w);
            g.axpy(self.dt(), &controls[i]);
            grad[i] = g;
            let mut next = mu;
            next.multiply_modes(self.prop.decay());
            if self.prop.is_nonlinear() {
                next.axpy(-1.0, &linearized_adjoint(&states[i], &w)?);
            }
            mu = next;
        }
        Ok((value, grad))
    }
}

#[derive(Clone, Debug)]
pub struct ActionProblem {
    pub target: SpectralField,
    pub horizon: f64,
    pub steps: usize,
    pub initial_guess: Option<ControlPath>,
    /// Strictly increasing endpoint penalty weights.
    pub penalties: Vec<f64>,
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl ActionProblem {
    pub fn new(target: SpectralField, horizon: f64, steps: usize) -> Self {
        Self {
            target,
            horizon,
            steps,
            initial_guess: None,
            penalties: DEFAULT_PENALTIES.to_vec(),
            grad_tol: 1e-8,
            max_iter: 5000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.target;
        let scale = t.sobolev_norm_sq(1.0).sqrt();
        if t.max_divergence() > 1e-10 * scale.max(1e-300) && scale > 0.0
            || t.hermitian_defect() > 1e-12 * scale.max(1e-300) && scale > 0.0
            || t.mean_mode().iter().any(|z| z.norm() > 0.0)
        {
            return Err(Error::InvalidParameter("target is not in H".into()));
        }
        if !(self.horizon > 0.0) || self.steps == 0 {
            return Err(Error::InvalidParameter("horizon and steps must be positive".into()));
        }
        if self.penalties.is_empty()
            || self.penalties[0] <= 0.0
            || self.penalties.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidParameter(
                "penalty schedule must be positive and strictly increasing".into(),
            ));
        }
        if let Some(g) = &self.initial_guess {
            if g.steps() != self.steps {
                return Err(Error::InvalidParameter(format!(
                    "initial guess has {} steps, problem has {}",
                    g.steps(),
                    self.steps
                )));
            }
        }
        Ok(())
    }
}

pub const DEFAULT_PENALTIES: [f64; 6] = [1e1, 1e2, 1e3, 1e4, 1e5, 1e6];

#[derive(Clone, Debug, Serialize)]
pub struct StageLog {
    pub penalty: f64,
    pub iterations: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub endpoint_error: f64,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct ActionResult {
    pub control: ControlPath,
    /// `||u(T) - x||_H`
    pub endpoint_error: f64,
    /// `1/2 int ||phi||^2` of the returned control.
    pub action: f64,
    /// `1/2 int ||G phi||^2`, the reading without `G^{-1}`.
    pub residual_action: f64,
    pub stages: Vec<StageLog>,
    pub converged: bool,
    /// Endpoint error failed to halve over the last penalty stage.
    pub infeasible: bool,
}

/// Minimizes the action to reach `problem.target` from rest at time
/// `problem.horizon`, using quadratic endpoint penalties with warm starts.
pub fn minimize_action(
    problem: &ActionProblem,
    noise: &NoiseOperator,
    cfg: &SolverConfig,
) -> Result<ActionResult> {
    problem.validate()?;
    let shooting = Shooting::new(&problem.target, problem.horizon, problem.steps, noise, cfg)?;
    let grid = noise.grid();
    let mut x: Point = match &problem.initial_guess {
        Some(g) => g.values().to_vec(),
        None => vec![SpectralField::zeros(grid); problem.steps],
    };
    let opts = LbfgsOptions {
        rel_tol: problem.grad_tol,
        max_iter: problem.max_iter,
        ..Default::default()
    };
    let mut stages = Vec::new();
    let mut converged = true;
    for &w in &problem.penalties {
        let out = lbfgs(x, opts, |p| shooting.value_and_gradient(p, w))?;
        let states = shooting.forward(&out.x)?;
        let err = states[problem.steps].sub(&problem.target).norm_h();
        converged &= out.converged;
        stages.push(StageLog {
            penalty: w,
            iterations: out.iterations,
            objective: out.value,
            grad_norm: out.grad_norm,
            endpoint_error: err,
            converged: out.converged,
        });
        x = out.x;
    }
    let control = ControlPath::new(shooting.dt(), x)?;
    let endpoint_error = stages.last().map(|s| s.endpoint_error).unwrap_or(0.0);
    let infeasible = stages.len() >= 2 && problem.target.energy() > 0.0 && {
        let n = stages.len();
        stages[n - 1].endpoint_error > 0.5 * stages[n - 2].endpoint_error
            && stages[n - 1].endpoint_error > 1e-6 * problem.target.norm_h()
    };
    let residual_action = 0.5
        * control.dt()
        * control.values().iter().map(|p| noise.apply(p).energy()).sum::<f64>();
    Ok(ActionResult {
        action: action_of_control(&control),
        residual_action,
        control,
        endpoint_error,
        stages,
        converged,
        infeasible,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ProfilePoint {
    pub horizon: f64,
    pub steps: usize,
    pub action: f64,
    pub residual_action: f64,
    pub endpoint_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct QuasiPotential {
    pub value: f64,
    pub horizon: f64,
    pub profile: Vec<ProfilePoint>,
}

/// `min_T` of the minimal action over the horizon grid, with step
/// `cfg.dt` at every horizon. `template` supplies penalties and tolerances.
pub fn quasi_potential(
    x: &SpectralField,
    horizons: &[f64],
    noise: &NoiseOperator,
    cfg: &SolverConfig,
    template: &ActionProblem,
) -> Result<QuasiPotential> {
    if horizons.is_empty() {
        return Err(Error::InvalidParameter("empty horizon grid".into()));
    }
    let profile: Vec<ProfilePoint> = horizons
        .par_iter()
        .map(|&t| {
            let steps = ((t / cfg.dt).round() as usize).max(1);
            let problem = ActionProblem {
                target: x.clone(),
                horizon: t,
                steps,
                initial_guess: None,
                ..template.clone()
            };
            let res = minimize_action(&problem, noise, cfg)?;
            Ok(ProfilePoint {
                horizon: t,
                steps,
                action: res.action,
                residual_action: res.residual_action,
                endpoint_error: res.endpoint_error,
                iterations: res.stages.iter().map(|s| s.iterations).sum(),
                converged: res.converged,
            })
        })
        .collect::<Result<_>>()?;
    let best = profile
        .iter()
        .min_by(|a, b| a.action.total_cmp(&b.action))
        .unwrap();
    Ok(QuasiPotential {
        value: best.action,
        horizon: best.horizon,
        profile,
    })
}
