//! Noise operator `G`, Q-Wiener increments and deterministic controls.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::spectral::{SpectralField, TorusGrid};

/// Smallest admissible decay exponent of `G = (I + A^beta)^{-1}`.
pub const BETA_MIN: f64 = 11.0 / 8.0;

/// Diagonal noise operator with per-wavevector amplitudes `g_k`.
#[derive(Clone, Debug)]
pub struct NoiseOperator {
    grid: Arc<TorusGrid>,
    beta: Option<f64>,
    amplitudes: Vec<f64>,
}

/// `G = (I + A^beta)^{-1}` on the dealias mask, zero elsewhere.
pub fn make_noise(grid: &Arc<TorusGrid>, beta: f64) -> Result<NoiseOperator> {
    NoiseOperator::new(grid, beta)
}

impl NoiseOperator {
    pub fn new(grid: &Arc<TorusGrid>, beta: f64) -> Result<Self> {
        if !(beta > BETA_MIN) {
            return Err(Error::NoiseTooRough(beta));
        }
        let amplitudes = (0..grid.len())
            .map(|i| {
                let k2 = grid.k2(i);
                if grid.in_mask(i) && k2 > 0.0 {
                    1.0 / (1.0 + k2.powf(beta))
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self {
            grid: Arc::clone(grid),
            beta: Some(beta),
            amplitudes,
        })
    }

    /// Custom amplitude table, one entry per stored wavevector.
    pub fn from_amplitudes(grid: &Arc<TorusGrid>, amplitudes: Vec<f64>) -> Result<Self> {
        if amplitudes.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "amplitude table has {} entries, grid has {}",
                amplitudes.len(),
                grid.len()
            )));
        }
        for (i, &g) in amplitudes.iter().enumerate() {
            if !(g >= 0.0) || !g.is_finite() {
                return Err(Error::InvalidParameter(format!("amplitude {g} at index {i}")));
            }
            if g != amplitudes[grid.conj_index(i)] {
                return Err(Error::InvalidParameter(format!(
                    "amplitude table not symmetric under k -> -k at index {i}"
                )));
            }
            if g > 0.0 && (!grid.in_mask(i) || grid.k2(i) == 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "nonzero amplitude outside the retained modes at index {i}"
                )));
            }
        }
        Ok(Self {
            grid: Arc::clone(grid),
            beta: None,
            amplitudes,
        })
    }

    /// `g_k = 1` on every retained mode.
    pub fn identity(grid: &Arc<TorusGrid>) -> Self {
        let amplitudes = (0..grid.len())
            .map(|i| if grid.in_mask(i) && grid.k2(i) > 0.0 { 1.0 } else { 0.0 })
            .collect();
        Self {
            grid: Arc::clone(grid),
            beta: None,
            amplitudes,
        }
    }

    /// Keeps only the listed wavevectors (and their partners).
    pub fn restricted_to(&self, modes: &[[i32; 3]]) -> Result<Self> {
        let mut table = vec![0.0; self.grid.len()];
        for &k in modes {
            let idx = self
                .grid
                .index_of(k)
                .ok_or_else(|| Error::InvalidParameter(format!("wavevector {k:?} not on grid")))?;
            table[idx] = self.amplitudes[idx];
            table[self.grid.conj_index(idx)] = self.amplitudes[idx];
        }
        let mut out = Self::from_amplitudes(&self.grid, table)?;
        out.beta = self.beta;
        Ok(out)
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn beta(&self) -> Option<f64> {
        self.beta
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn amplitude(&self, idx: usize) -> f64 {
        self.amplitudes[idx]
    }

    /// `||G||^2_{L_2(H; H^s)} = sum |k|^{2s} g_k^2` over retained
    /// wavevectors, two transverse polarizations each.
    pub fn hs_norm_sq(&self, s: f64) -> f64 {
        self.grid
            .retained()
            .map(|i| 2.0 * self.grid.k2(i).powf(s) * self.amplitudes[i].powi(2))
            .sum()
    }

    /// `G phi`, mode by mode.
    pub fn apply(&self, phi: &SpectralField) -> SpectralField {
        let mut out = phi.clone();
        out.multiply_modes(&self.amplitudes);
        out
    }

    /// One increment `G dW` over a step of length `dt`.
    pub fn sample_increment(&self, dt: f64, rng: &mut StreamRng) -> Result<SpectralField> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let sq = dt.sqrt();
        Ok(SpectralField::random_transverse(&self.grid, rng, |i| {
            self.amplitudes[i] * sq
        }))
    }
}

pub fn hs_norm_sq(noise: &NoiseOperator, s: f64) -> f64 {
    noise.hs_norm_sq(s)
}

pub fn sample_increment(noise: &NoiseOperator, dt: f64, rng: &mut StreamRng) -> Result<SpectralField> {
    noise.sample_increment(dt, rng)
}

pub fn apply_control(noise: &NoiseOperator, phi: &SpectralField) -> SpectralField {
    noise.apply(phi)
}

/// Piecewise-constant H-valued control on a uniform time grid.
///
/// `values[i]` is the control on `[t_i, t_{i+1})`, `t_i = i * dt`, so a
/// path over `n` steps stores `n` values.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPath {
    dt: f64,
    values: Vec<SpectralField>,
}

impl ControlPath {
    pub fn new(dt: f64, values: Vec<SpectralField>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        if let Some(first) = values.first() {
            for v in &values[1..] {
                first.check_same_grid(v)?;
            }
        }
        Ok(Self { dt, values })
    }

    pub fn zeros(grid: &Arc<TorusGrid>, dt: f64, steps: usize) -> Result<Self> {
        Self::new(dt, vec![SpectralField::zeros(grid); steps])
    }

    pub fn constant(value: &SpectralField, dt: f64, steps: usize) -> Result<Self> {
        Self::new(dt, vec![value.clone(); steps])
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.values.len()
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.values.len() as f64
    }

    pub fn values(&self) -> &[SpectralField] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [SpectralField] {
        &mut self.values
    }

    pub fn value(&self, step: usize) -> Option<&SpectralField> {
        self.values.get(step)
    }

    /// Riemann sum `sum ||phi(t_i)||^2 dt`.
    pub fn energy_integral(&self) -> f64 {
        self.values.iter().map(|v| v.energy()).sum::<f64>() * self.dt
    }

    /// Running budget `1/2 int ||phi||^2`.
    pub fn budget(&self) -> f64 {
        0.5 * self.energy_integral()
    }

    /// Membership in `S_M`.
    pub fn in_ball(&self, m: f64) -> bool {
        self.energy_integral() <= m
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            dt: self.dt,
            values: self.values.iter().map(|v| v.scaled(a)).collect(),
        }
    }
}

/// `Gamma phi (t_i) = sum_{j < i} G phi(t_j) dt`, for `i = 0..=n`.
pub fn gamma_path(noise: &NoiseOperator, phi: &ControlPath) -> Vec<SpectralField> {
    let mut acc = SpectralField::zeros(noise.grid());
    let mut out = Vec::with_capacity(phi.steps() + 1);
    out.push(acc.clone());
    for v in phi.values() {
        acc.axpy(phi.dt(), &noise.apply(v));
        out.push(acc.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::make_grid;

    #[test]
    fn amplitude_examples() {
        let g = make_grid(8).unwrap();
        let noise = make_noise(&g, 2.0).unwrap();
        let i1 = g.index_of([1, 0, 0]).unwrap();
        let i4 = g.index_of([0, 2, 0]).unwrap();
        assert_eq!(noise.amplitude(i1), 0.5);
        assert_eq!(noise.amplitude(i4), 1.0 / 17.0);
        assert_eq!(noise.amplitude(0), 0.0);
        assert_eq!(noise.amplitude(g.index_of([3, 0, 0]).unwrap()), 0.0);
        let err = make_noise(&g, 1.0).unwrap_err();
        assert!(err.to_string().contains("H^(5/4)"));
        assert!(make_noise(&g, 11.0 / 8.0).is_err());
    }

    #[test]
    fn isotropic_and_symmetric() {
        let g = make_grid(8).unwrap();
        let noise = make_noise(&g, 1.6).unwrap();
        for i in 0..g.len() {
            assert_eq!(noise.amplitude(i), noise.amplitude(g.conj_index(i)));
            for j in 0..g.len() {
                if g.k2(i) == g.k2(j) && g.in_mask(i) && g.in_mask(j) {
                    assert_eq!(noise.amplitude(i), noise.amplitude(j));
                }
            }
        }
    }

    #[test]
    fn hs_norm_examples() {
        let g = make_grid(8).unwrap();
        let zero = NoiseOperator::from_amplitudes(&g, vec![0.0; g.len()]).unwrap();
        assert_eq!(zero.hs_norm_sq(0.0), 0.0);
        let single = make_noise(&g, 2.0).unwrap().restricted_to(&[[1, 0, 0]]).unwrap();
        assert!((single.hs_norm_sq(0.0) - 1.0).abs() < 1e-15);

        // Independent brute-force summation over the wavevector table.
        let noise = make_noise(&g, 2.0).unwrap();
        let mut brute = 0.0;
        for (idx, k) in g.wavevectors().iter().enumerate() {
            let masked = k.iter().all(|c| c.abs() <= 2);
            let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
            if masked && k2 > 0.0 {
                let gk = 1.0 / (1.0 + k2 * k2);
                brute += 2.0 * k2.powf(1.25) * gk * gk;
            }
            let _ = idx;
        }
        assert!((noise.hs_norm_sq(1.25) - brute).abs() < 1e-14 * brute);
    }

    #[test]
    fn custom_table_validation() {
        let g = make_grid(4).unwrap();
        let mut t = vec![0.0; g.len()];
        t[g.index_of([1, 0, 0]).unwrap()] = 1.0;
        assert!(NoiseOperator::from_amplitudes(&g, t.clone()).is_err());
        t[g.index_of([-1, 0, 0]).unwrap()] = 1.0;
        assert!(NoiseOperator::from_amplitudes(&g, t.clone()).is_ok());
        t[0] = 1.0;
        assert!(NoiseOperator::from_amplitudes(&g, t).is_err());
    }

    #[test]
    fn increments_are_deterministic_and_in_h() {
        let g = make_grid(8).unwrap();
        let noise = make_noise(&g, 2.0).unwrap();
        let a = noise.sample_increment(0.1, &mut StreamRng::new(1, 0)).unwrap();
        let b = noise.sample_increment(0.1, &mut StreamRng::new(1, 0)).unwrap();
        let c = noise.sample_increment(0.1, &mut StreamRng::new(2, 0)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.hermitian_defect(), 0.0);
        assert!(a.max_divergence() < 1e-14);
        let zero = NoiseOperator::from_amplitudes(&g, vec![0.0; g.len()]).unwrap();
        assert_eq!(zero.sample_increment(0.1, &mut StreamRng::new(1, 0)).unwrap().energy(), 0.0);
        assert!(noise.sample_increment(0.0, &mut StreamRng::new(1, 0)).is_err());
    }

    #[test]
    fn apply_control_examples() {
        let g = make_grid(8).unwrap();
        let phi = SpectralField::single_dof(&g, [1, 0, 0], 1.0).unwrap();
        assert_eq!(apply_control(&NoiseOperator::identity(&g), &phi), phi);
        let halved = apply_control(&make_noise(&g, 2.0).unwrap(), &phi);
        assert!((halved.norm_h() - 0.5).abs() < 1e-15);
        let zero = SpectralField::zeros(&g);
        assert_eq!(apply_control(&make_noise(&g, 2.0).unwrap(), &zero).energy(), 0.0);
    }

    #[test]
    fn gamma_examples() {
        let g = make_grid(4).unwrap();
        let noise = NoiseOperator::identity(&g);
        let zero = ControlPath::zeros(&g, 0.1, 5).unwrap();
        assert!(gamma_path(&noise, &zero).iter().all(|f| f.energy() == 0.0));
        let phi = SpectralField::single_dof(&g, [0, 1, 0], 2.0).unwrap();
        let path = gamma_path(&noise, &ControlPath::constant(&phi, 0.25, 8).unwrap());
        assert_eq!(path.len(), 9);
        for (i, f) in path.iter().enumerate() {
            let t = 0.25 * i as f64;
            assert!(f.sub(&phi.scaled(t)).norm_h() < 1e-14);
        }
    }

    #[test]
    fn control_budget() {
        let g = make_grid(4).unwrap();
        let phi = SpectralField::single_dof(&g, [0, 1, 0], 1.0).unwrap();
        let path = ControlPath::constant(&phi, 0.01, 100).unwrap();
        assert!((path.budget() - 0.5).abs() < 1e-12);
        assert!(path.in_ball(1.0 + 1e-12));
        assert!(!path.in_ball(0.99));
        assert!((path.scaled(3.0).budget() - 4.5).abs() < 1e-12);
    }
}
