//! Time averages, exponential moments and two-trajectory stability.

use serde::Serialize;

use crate::dynamics::{Observables, Propagator, SolverConfig, Trajectory};
use crate::error::{Error, Result};
use crate::forcing::NoiseOperator;
use crate::rng::StreamRng;
use crate::spectral::SpectralField;

pub const MIN_BATCHES: usize = 10;

/// Scalar read off a trajectory record.
#[derive(Clone, Debug, PartialEq)]
pub enum Observable {
    Energy,
    Dissipation,
    Psi,
    /// `||u||^2_{H^s}`; `s` must be among the recorded orders.
    SobolevNorm(f64),
}

impl Observable {
    pub fn name(&self) -> String {
        match self {
            Observable::Energy => "energy_H".into(),
            Observable::Dissipation => "dissipation_H54".into(),
            Observable::Psi => "psi".into(),
            Observable::SobolevNorm(s) => format!("norm_H{s}"),
        }
    }

    pub fn value(&self, rec: &Observables) -> Option<f64> {
        match self {
            Observable::Energy => Some(rec.energy),
            Observable::Dissipation => Some(rec.dissipation),
            Observable::Psi => Some(rec.psi),
            Observable::SobolevNorm(s) => rec.norms.iter().find(|(o, _)| o == s).map(|(_, v)| *v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AverageEstimate {
    pub observable: String,
    pub value: f64,
    pub batch_std_error: f64,
    pub burn_in: f64,
    pub horizon: f64,
    pub batches: usize,
}

/// Mean and standard error from non-overlapping batch means.
pub fn batch_means(samples: &[f64], batches: usize) -> Result<(f64, f64)> {
    if batches < MIN_BATCHES {
        return Err(Error::InvalidParameter(format!(
            "need at least {MIN_BATCHES} batches, got {batches}"
        )));
    }
    let size = samples.len() / batches;
    if size == 0 {
        return Err(Error::InsufficientData(format!(
            "{} samples cannot fill {batches} batches",
            samples.len()
        )));
    }
    let means: Vec<f64> = samples
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let b = batches as f64;
    let mean = means.iter().sum::<f64>() / b;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (b - 1.0);
    Ok((mean, (var / b).sqrt()))
}

/// Time average of `observable` over records with `t >= burn_in`.
pub fn time_average(
    traj: &Trajectory,
    observable: &Observable,
    burn_in: f64,
    batches: usize,
) -> Result<AverageEstimate> {
    let horizon = traj.records.last().map(|r| r.t).unwrap_or(0.0);
    let mut samples = Vec::new();
    for rec in traj.records.iter().filter(|r| r.t >= burn_in) {
        let v = observable.value(rec).ok_or_else(|| {
            Error::InvalidParameter(format!("observable {} not recorded", observable.name()))
        })?;
        samples.push(v);
    }
    if horizon - burn_in <= 0.0 {
        return Err(Error::InsufficientData(format!(
            "burn-in {burn_in} leaves no data before horizon {horizon}"
        )));
    }
    let (value, err) = batch_means(&samples, batches)?;
    Ok(AverageEstimate {
        observable: observable.name(),
        value,
        batch_std_error: err,
        burn_in,
        horizon,
        batches,
    })
}

/// Least-squares fit of `log y = a - rate * t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub rate: f64,
    pub std_error: f64,
    pub window: (f64, f64),
    pub points: usize,
}

pub const GAP_FLOOR: f64 = 1e-300;

/// Fits the decay rate of `ys` over the window `ys in [lo, hi] * ys[0]`.
pub fn fit_decay_rate(ts: &[f64], ys: &[f64], lo: f64, hi: f64) -> Result<RateFit> {
    let y0 = ys.first().copied().unwrap_or(0.0);
    let pts: Vec<(f64, f64)> = ts
        .iter()
        .zip(ys)
        .filter(|(_, &y)| y >= lo * y0 && y <= hi * y0 && y > GAP_FLOOR)
        .map(|(&t, &y)| (t, y.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} points inside the fit window",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let slope = sxy / sxx;
    let icpt = ym - slope * tm;
    let ssr: f64 = pts.iter().map(|p| (p.1 - icpt - slope * p.0).powi(2)).sum();
    let se = if pts.len() > 2 {
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(RateFit {
        rate: -slope,
        std_error: se,
        window: (pts[0].0, pts[pts.len() - 1].0),
        points: pts.len(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GapSeries {
    pub times: Vec<f64>,
    /// `||u_a - u_b||_H^2`, clamped below at [`GAP_FLOOR`].
    pub gaps: Vec<f64>,
    /// `None` when the initial gap is zero.
    pub fit: Option<RateFit>,
}

/// Runs two copies of the stochastic equation on one noise realization and
/// fits the decay rate of their squared distance.
pub fn coupled_gap(
    u0_a: &SpectralField,
    u0_b: &SpectralField,
    cfg: &SolverConfig,
    noise: &NoiseOperator,
) -> Result<GapSeries> {
    u0_a.check_same_grid(u0_b)?;
    u0_a.check_same_grid(&SpectralField::zeros(noise.grid()))?;
    let steps = cfg.steps()?;
    let prop = Propagator::new(cfg, noise)?;
    let mut rng = StreamRng::new(cfg.seed, 0);
    let (mut a, mut b) = (u0_a.clone(), u0_b.clone());
    let mut times = vec![0.0];
    let mut gaps = vec![a.sub(&b).energy().max(GAP_FLOOR)];
    let identical = a == b;
    for step in 1..=steps {
        let xi = prop.sample_noise(&a, &mut rng);
        a = prop.advance(&a, None, Some(&xi))?;
        b = if identical {
            a.clone()
        } else {
            prop.advance(&b, None, Some(&xi))?
        };
        if step % cfg.record_stride == 0 {
            let t = step as f64 * cfg.dt;
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::NumericalAbort {
                    t,
                    what: "non-finite coefficient in coupled run".into(),
                });
            }
            times.push(t);
            gaps.push(a.sub(&b).energy().max(GAP_FLOOR));
        }
    }
    if identical {
        for g in gaps.iter_mut() {
            *g = 0.0;
        }
        return Ok(GapSeries { times, gaps, fit: None });
    }
    let fit = fit_decay_rate(&times, &gaps, 1e-12, 1e-2)?;
    Ok(GapSeries {
        times,
        gaps,
        fit: Some(fit),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentSeries {
    pub times: Vec<f64>,
    pub psi: Vec<f64>,
    /// `exp(psi)`, `inf` where it would overflow; `psi` is the log-scale value.
    pub exp_psi: Vec<f64>,
}

/// `Psi(t) = ||u(t)||^2 + int_0^t ||Lambda^alpha u||^2` from recorded data
/// (cumulative trapezoid of the recorded dissipation).
pub fn exponential_moment_series(traj: &Trajectory) -> MomentSeries {
    let mut integral = 0.0;
    let mut psi = Vec::with_capacity(traj.records.len());
    for (i, rec) in traj.records.iter().enumerate() {
        if i > 0 {
            let prev = &traj.records[i - 1];
            integral += 0.5 * (prev.dissipation + rec.dissipation) * (rec.t - prev.t);
        }
        psi.push(rec.energy + integral);
    }
    let exp_psi = psi
        .iter()
        .map(|&p| if p < 709.0 { p.exp() } else { f64::INFINITY })
        .collect();
    MomentSeries {
        times: traj.times(),
        psi,
        exp_psi,
    }
}

/// Ensemble check of `E exp(Psi(T)) <= exp(||u0||^2) + exp(C eps T ||G||^2)`.
#[derive(Clone, Debug, Serialize)]
pub struct MomentBound {
    pub mean: f64,
    pub std_error: f64,
    pub constant: f64,
    pub bound: f64,
    /// Smallest `C >= 0` for which the mean satisfies the bound.
    pub fitted_constant: f64,
    pub exceeded: bool,
}

pub fn exponential_moment_bound(
    psi_terminal: &[f64],
    initial_energy: f64,
    epsilon: f64,
    horizon: f64,
    hs_norm_sq: f64,
    constant: f64,
) -> Result<MomentBound> {
    if psi_terminal.len() < 2 {
        return Err(Error::InsufficientData("need at least two ensemble members".into()));
    }
    let vals: Vec<f64> = psi_terminal.iter().map(|p| p.exp()).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std_error = (var / n).sqrt();
    let scale = epsilon * horizon * hs_norm_sq;
    let bound = initial_energy.exp() + (constant * scale).exp();
    let excess = mean - initial_energy.exp();
    let fitted_constant = if excess <= 1.0 || scale == 0.0 {
        0.0
    } else {
        excess.ln() / scale
    };
    Ok(MomentBound {
        mean,
        std_error,
        constant,
        bound,
        fitted_constant,
        exceeded: mean - 3.0 * std_error > bound,
    })
}

/// Two-sample Kolmogorov-Smirnov test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KsTest {
    pub statistic: f64,
    /// Asymptotic p-value with the Stephens small-sample correction.
    pub p_value: f64,
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsTest> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("KS test needs two non-empty samples".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    Ok(KsTest {
        statistic: d,
        p_value: kolmogorov_tail(lambda),
    })
}

/// `P(K > lambda)` for the Kolmogorov distribution.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
