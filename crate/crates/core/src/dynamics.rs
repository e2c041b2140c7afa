//! Time integration with an integrating-factor (exponential Euler) scheme.
//!
//! Per mode, with `lambda_k = |k|^{2 alpha}`,
//!
//! ```text
//! u+ = e^{-lambda dt} u + (1 - e^{-lambda dt}) / lambda * (F_k - B_k(u, u)) + sqrt(eps) xi_k
//! ```
//!
//! where `F = G phi` for the controlled skeleton equation and `xi_k` is the
//! exact Ornstein-Uhlenbeck quadrature of the stochastic convolution, with
//! per-degree-of-freedom variance `g_k^2 (1 - e^{-2 lambda dt}) / (2 lambda)`.

use log::warn;

use crate::error::{Error, Result};
use crate::forcing::{ControlPath, NoiseOperator};
use crate::rng::StreamRng;
use crate::spectral::{max_speed, nonlinear_term, SpectralField};

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Noise scale `eps` in front of `sqrt(eps) G dW`.
    pub epsilon: f64,
    /// Dissipation exponent; `A^alpha` has symbol `|k|^{2 alpha}`.
    pub alpha: f64,
    pub record_stride: usize,
    pub seed: u64,
    /// When false the convective term is dropped (linear dynamics).
    pub nonlinear: bool,
    /// Extra Sobolev orders `s` recorded as `||u||^2_{H^s}`.
    pub sobolev_orders: Vec<f64>,
    /// Keep a field snapshot every this many records (0 = none).
    pub snapshot_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 1.0,
            epsilon: 0.0,
            alpha: 1.25,
            record_stride: 1,
            seed: 0,
            nonlinear: true,
            sobolev_orders: Vec::new(),
            snapshot_every: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be nonnegative, got {}", self.t_end));
        }
        if !(self.epsilon >= 0.0) {
            return bad(format!("epsilon must be nonnegative, got {}", self.epsilon));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.record_stride == 0 {
            return bad("record_stride must be at least 1".into());
        }
        Ok(())
    }

    /// Number of steps covering `[0, t_end]`.
    pub fn steps(&self) -> Result<usize> {
        self.validate()?;
        let n = (self.t_end / self.dt).round();
        if (n * self.dt - self.t_end).abs() > 1e-9 * self.t_end.max(self.dt) {
            return Err(Error::InvalidParameter(format!(
                "t_end = {} is not a multiple of dt = {}",
                self.t_end, self.dt
            )));
        }
        Ok(n as usize)
    }

    pub fn with_t_end(&self, t_end: f64) -> Self {
        Self { t_end, ..self.clone() }
    }

    pub fn with_dt(&self, dt: f64) -> Self {
        Self { dt, ..self.clone() }
    }
}

/// Per-mode coefficients of one step of the exponential scheme.
#[derive(Clone, Debug)]
pub struct Propagator {
    dt: f64,
    epsilon: f64,
    nonlinear: bool,
    lambda: Vec<f64>,
    decay: Vec<f64>,
    phi1: Vec<f64>,
    ou_std: Vec<f64>,
}

impl Propagator {
    pub fn new(cfg: &SolverConfig, noise: &NoiseOperator) -> Result<Self> {
        cfg.validate()?;
        let grid = noise.grid();
        let len = grid.len();
        let mut lambda = vec![0.0; len];
        let mut decay = vec![0.0; len];
        let mut phi1 = vec![0.0; len];
        let mut ou_std = vec![0.0; len];
        for idx in 0..len {
            if !grid.in_mask(idx) || grid.k2(idx) == 0.0 {
                continue;
            }
            let l = grid.k2(idx).powf(cfg.alpha);
            lambda[idx] = l;
            decay[idx] = (-l * cfg.dt).exp();
            phi1[idx] = -(-l * cfg.dt).exp_m1() / l;
            let var = -(-2.0 * l * cfg.dt).exp_m1() / (2.0 * l);
            ou_std[idx] = noise.amplitude(idx) * var.sqrt();
        }
        Ok(Self {
            dt: cfg.dt,
            epsilon: cfg.epsilon,
            nonlinear: cfg.nonlinear,
            lambda,
            decay,
            phi1,
            ou_std,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn decay(&self) -> &[f64] {
        &self.decay
    }

    /// `(1 - e^{-lambda dt}) / lambda` per mode.
    pub fn phi1(&self) -> &[f64] {
        &self.phi1
    }

    pub fn is_nonlinear(&self) -> bool {
        self.nonlinear
    }

    /// `B(u, u)`, or zero when the nonlinearity is disabled.
    pub fn convection(&self, u: &SpectralField) -> Result<SpectralField> {
        if self.nonlinear {
            nonlinear_term(u)
        } else {
            Ok(SpectralField::zeros(u.grid()))
        }
    }

    /// `sqrt(eps) xi` for one step. No draws are made when `eps = 0`.
    pub fn sample_noise(&self, like: &SpectralField, rng: &mut StreamRng) -> SpectralField {
        if self.epsilon == 0.0 {
            return SpectralField::zeros(like.grid());
        }
        let s = self.epsilon.sqrt();
        SpectralField::random_transverse(like.grid(), rng, |i| s * self.ou_std[i])
    }

    /// `e^{-lambda dt} u + phi1 (forcing - conv) + noise`.
    pub fn combine(
        &self,
        u: &SpectralField,
        conv: &SpectralField,
        forcing: Option<&SpectralField>,
        noise: Option<&SpectralField>,
    ) -> SpectralField {
        let mut out = u.clone();
        out.multiply_modes(&self.decay);
        let mut drive = conv.scaled(-1.0);
        if let Some(f) = forcing {
            drive.axpy(1.0, f);
        }
        drive.multiply_modes(&self.phi1);
        out.axpy(1.0, &drive);
        if let Some(n) = noise {
            out.axpy(1.0, n);
        }
        out
    }

    /// One step with the convective term frozen at `u`.
    pub fn advance(
        &self,
        u: &SpectralField,
        forcing: Option<&SpectralField>,
        noise: Option<&SpectralField>,
    ) -> Result<SpectralField> {
        let conv = self.convection(u)?;
        Ok(self.combine(u, &conv, forcing, noise))
    }

    pub fn step_stochastic(&self, u: &SpectralField, rng: &mut StreamRng) -> Result<SpectralField> {
        let xi = self.sample_noise(u, rng);
        self.advance(u, None, Some(&xi))
    }

    /// Skeleton step with deterministic forcing `G phi` (already applied).
    pub fn step_skeleton(&self, u: &SpectralField, g_phi: &SpectralField) -> Result<SpectralField> {
        self.advance(u, Some(g_phi), None)
    }

    /// Exact Ornstein-Uhlenbeck transition of the linear equation.
    pub fn step_linear_exact(&self, v: &SpectralField, rng: &mut StreamRng) -> SpectralField {
        let xi = self.sample_noise(v, rng);
        self.step_linear_with(v, &xi)
    }

    pub fn step_linear_with(&self, v: &SpectralField, xi: &SpectralField) -> SpectralField {
        let mut out = v.clone();
        out.multiply_modes(&self.decay);
        out.axpy(1.0, xi);
        out
    }

    /// Step of `dw + A^alpha w dt + B(w + v, w + v) dt = 0` given `v` at
    /// both ends of the step.
    pub fn step_random_nse(
        &self,
        w: &SpectralField,
        v_now: &SpectralField,
        v_next: &SpectralField,
        scheme: RandomNseScheme,
    ) -> Result<SpectralField> {
        let b_now = self.convection(&w.add(v_now))?;
        match scheme {
            RandomNseScheme::Euler => Ok(self.combine(w, &b_now, None, None)),
            RandomNseScheme::Heun => {
                // Integrating-factor Heun: trapezoid in e^{lambda t} w.
                let mut pred = w.clone();
                pred.axpy(-self.dt, &b_now);
                pred.multiply_modes(&self.decay);
                let b_next = self.convection(&pred.add(v_next))?;
                let mut out = w.clone();
                out.axpy(-0.5 * self.dt, &b_now);
                out.multiply_modes(&self.decay);
                out.axpy(-0.5 * self.dt, &b_next);
                Ok(out)
            }
        }
    }
}

/// Time discretization used for the random Navier-Stokes equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RandomNseScheme {
    /// Same first-order stencil as the other steppers.
    Euler,
    /// Second-order integrating-factor Heun using `v` at both step ends.
    #[default]
    Heun,
}

pub fn step_stochastic(
    u: &SpectralField,
    cfg: &SolverConfig,
    noise: &NoiseOperator,
    rng: &mut StreamRng,
) -> Result<SpectralField> {
    Propagator::new(cfg, noise)?.step_stochastic(u, rng)
}

pub fn step_skeleton(
    u: &SpectralField,
    cfg: &SolverConfig,
    noise: &NoiseOperator,
    phi: &SpectralField,
) -> Result<SpectralField> {
    Propagator::new(cfg, noise)?.step_skeleton(u, &noise.apply(phi))
}

pub fn step_linear_exact(
    v: &SpectralField,
    cfg: &SolverConfig,
    noise: &NoiseOperator,
    rng: &mut StreamRng,
) -> Result<SpectralField> {
    Ok(Propagator::new(cfg, noise)?.step_linear_exact(v, rng))
}

/// Scalar observables recorded along a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Observables {
    pub t: f64,
    /// `||u||_H^2`
    pub energy: f64,
    /// `||Lambda^alpha u||^2`
    pub dissipation: f64,
    /// `(s, ||u||^2_{H^s})` for the configured orders.
    pub norms: Vec<(f64, f64)>,
    /// `||u(t)||^2 + int_0^t ||Lambda^alpha u||^2`
    pub psi: f64,
}

/// Recorded time series of a run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub dt: f64,
    pub record_stride: usize,
    pub records: Vec<Observables>,
    pub snapshots: Vec<(f64, SpectralField)>,
    pub final_state: SpectralField,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.energy).collect()
    }

    pub fn dissipations(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.dissipation).collect()
    }

    /// Trapezoid integral of the recorded dissipation.
    pub fn dissipation_integral(&self) -> f64 {
        self.records
            .windows(2)
            .map(|w| 0.5 * (w[0].dissipation + w[1].dissipation) * (w[1].t - w[0].t))
            .sum()
    }
}

/// Which evolution problem [`integrate`] drives.
pub enum Drive<'a> {
    Stochastic {
        noise: &'a NoiseOperator,
        rng: &'a mut StreamRng,
    },
    /// `phi = None` is the uncontrolled equation.
    Skeleton {
        noise: &'a NoiseOperator,
        control: Option<&'a ControlPath>,
    },
    Linear {
        noise: &'a NoiseOperator,
        rng: &'a mut StreamRng,
    },
    /// `v_path` is sampled uniformly on `[0, t_end]` and linearly
    /// interpolated to step times.
    RandomNse {
        v_path: &'a [SpectralField],
        scheme: RandomNseScheme,
    },
}

/// Mutable state of a run, sufficient to continue it bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct RunState {
    pub step: u64,
    pub u: SpectralField,
    /// Step-by-step trapezoid integral of the dissipation.
    pub dissipation_integral: f64,
}

impl RunState {
    pub fn new(u0: SpectralField) -> Self {
        Self {
            step: 0,
            u: u0,
            dissipation_integral: 0.0,
        }
    }
}

pub fn observe(u: &SpectralField, t: f64, cfg: &SolverConfig, dissipation_integral: f64) -> Observables {
    let energy = u.energy();
    Observables {
        t,
        energy,
        dissipation: u.sobolev_norm_sq(cfg.alpha),
        norms: cfg
            .sobolev_orders
            .iter()
            .map(|&s| (s, u.sobolev_norm_sq(s)))
            .collect(),
        psi: energy + dissipation_integral,
    }
}

fn check_invariants(u: &SpectralField, t: f64) -> Result<()> {
    if !u.is_finite() {
        return Err(Error::NumericalAbort {
            t,
            what: "non-finite coefficient".into(),
        });
    }
    let scale = u.sobolev_norm_sq(1.0).sqrt();
    let div = u.max_divergence();
    let herm = u.hermitian_defect();
    if div > 1e-10 * scale || herm > 1e-10 * scale || u.mean_mode().iter().any(|z| z.norm() > 0.0) {
        return Err(Error::NumericalAbort {
            t,
            what: format!("field left H (divergence {div:.3e}, hermitian defect {herm:.3e})"),
        });
    }
    Ok(())
}

fn interpolate(path: &[SpectralField], t: f64, t_end: f64) -> SpectralField {
    let segments = path.len() - 1;
    if segments == 0 || t_end == 0.0 {
        return path[0].clone();
    }
    let x = (t / t_end * segments as f64).clamp(0.0, segments as f64);
    let i = (x.floor() as usize).min(segments - 1);
    let frac = x - i as f64;
    if frac == 0.0 {
        return path[i].clone();
    }
    if frac == 1.0 {
        return path[i + 1].clone();
    }
    let mut out = path[i].scaled(1.0 - frac);
    out.axpy(frac, &path[i + 1]);
    out
}

/// Advances `state` by `steps` steps, calling `on_record` at every step
/// whose index is a multiple of `cfg.record_stride` (including the start
/// when `state.step` is).
pub fn advance_segment<F>(
    state: &mut RunState,
    cfg: &SolverConfig,
    drive: &mut Drive<'_>,
    steps: u64,
    mut on_record: F,
) -> Result<()>
where
    F: FnMut(&Observables, &SpectralField) -> Result<()>,
{
    let (prop, v_path) = match drive {
        Drive::Stochastic { noise, .. } | Drive::Skeleton { noise, .. } | Drive::Linear { noise, .. } => {
            (Propagator::new(cfg, noise)?, None)
        }
        Drive::RandomNse { v_path, .. } => {
            let zero = NoiseOperator::from_amplitudes(
                v_path[0].grid(),
                vec![0.0; v_path[0].grid().len()],
            )?;
            (Propagator::new(cfg, &zero)?, Some(*v_path))
        }
    };
    if let Some(p) = v_path {
        if p.is_empty() {
            return Err(Error::InvalidParameter("empty v path".into()));
        }
        state.u.check_same_grid(&p[0])?;
    }
    let stride = cfg.record_stride as u64;
    let t_of = |step: u64| step as f64 * cfg.dt;
    let mut warned = false;

    let mut record = |state: &RunState, warned: &mut bool| -> Result<()> {
        let t = t_of(state.step);
        check_invariants(&state.u, t)?;
        let obs = observe(&state.u, t, cfg, state.dissipation_integral);
        if !obs.energy.is_finite() || !obs.dissipation.is_finite() {
            return Err(Error::NumericalAbort {
                t,
                what: "non-finite observable".into(),
            });
        }
        if prop.is_nonlinear() && !*warned {
            let speed = max_speed(&state.u);
            let grid_k = state.u.grid().max_k();
            if speed > 0.0 && cfg.dt > 0.5 / (grid_k * speed) {
                warn!(
                    "dt = {} exceeds the advective heuristic 0.5 / (max|k| max|u|) = {:.3e} at t = {t}",
                    cfg.dt,
                    0.5 / (grid_k * speed)
                );
                *warned = true;
            }
        }
        on_record(&obs, &state.u)
    };

    if state.step % stride == 0 {
        record(state, &mut warned)?;
    }
    let end = state.step + steps;
    while state.step < end {
        let t = t_of(state.step);
        let d_prev = state.u.sobolev_norm_sq(cfg.alpha);
        let next = match drive {
            Drive::Stochastic { rng, .. } => prop.step_stochastic(&state.u, rng)?,
            Drive::Linear { rng, .. } => prop.step_linear_exact(&state.u, rng),
            Drive::Skeleton { noise, control } => match control {
                Some(c) => {
                    let phi = c.value(state.step as usize).ok_or_else(|| {
                        Error::InvalidParameter(format!(
                            "control path has {} steps, run needs step {}",
                            c.steps(),
                            state.step
                        ))
                    })?;
                    prop.step_skeleton(&state.u, &noise.apply(phi))?
                }
                None => prop.advance(&state.u, None, None)?,
            },
            Drive::RandomNse { v_path, scheme } => {
                let v_now = interpolate(v_path, t, cfg.t_end);
                let v_next = interpolate(v_path, t_of(state.step + 1), cfg.t_end);
                prop.step_random_nse(&state.u, &v_now, &v_next, *scheme)?
            }
        };
        if !next.is_finite() {
            return Err(Error::NumericalAbort {
                t: t_of(state.step + 1),
                what: "non-finite coefficient".into(),
            });
        }
        let d_next = next.sobolev_norm_sq(cfg.alpha);
        state.dissipation_integral += 0.5 * (d_prev + d_next) * cfg.dt;
        state.u = next;
        state.step += 1;
        if state.step % stride == 0 {
            record(state, &mut warned)?;
        }
    }
    Ok(())
}

/// Runs `[0, t_end]` from `u0` and records observables every
/// `record_stride` steps.
pub fn integrate(u0: &SpectralField, cfg: &SolverConfig, mut drive: Drive<'_>) -> Result<Trajectory> {
    let steps = cfg.steps()?;
    match &drive {
        Drive::Stochastic { noise, .. } | Drive::Skeleton { noise, .. } | Drive::Linear { noise, .. } => {
            u0.check_same_grid(&SpectralField::zeros(noise.grid()))?;
        }
        Drive::RandomNse { .. } => {}
    }
    let mut state = RunState::new(u0.clone());
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    advance_segment(&mut state, cfg, &mut drive, steps as u64, |obs, u| {
        if cfg.snapshot_every > 0 && records.len() % cfg.snapshot_every == 0 {
            snapshots.push((obs.t, u.clone()));
        }
        records.push(obs.clone());
        Ok(())
    })?;
    Ok(Trajectory {
        dt: cfg.dt,
        record_stride: cfg.record_stride,
        records,
        snapshots,
        final_state: state.u,
    })
}

/// Integrates the random Navier-Stokes equation for `u~` driven by `v`.
pub fn solve_random_nse(
    u0: &SpectralField,
    v_path: &[SpectralField],
    cfg: &SolverConfig,
    scheme: RandomNseScheme,
) -> Result<Trajectory> {
    integrate(u0, cfg, Drive::RandomNse { v_path, scheme })
}
