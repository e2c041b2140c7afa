use std::sync::Arc;

use num_complex::Complex64;

use super::grid::TorusGrid;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

pub type Vec3c = [Complex64; 3];

const ZERO3: Vec3c = [Complex64::new(0.0, 0.0); 3];

/// Velocity field stored as its full complex Fourier spectrum.
///
/// Physical values are `u(x) = sum_k u_k exp(i k.x)`. Fields in H are
/// Hermitian (`u_{-k} = conj(u_k)`), zero-mean and divergence-free; the
/// constructors that produce fields in H enforce all three.
#[derive(Clone, Debug)]
pub struct SpectralField {
    grid: Arc<TorusGrid>,
    coeffs: Vec<Vec3c>,
}

impl PartialEq for SpectralField {
    fn eq(&self, other: &Self) -> bool {
        self.grid.n_per_axis() == other.grid.n_per_axis() && self.coeffs == other.coeffs
    }
}

fn dot_re(a: &Vec3c, b: &Vec3c) -> f64 {
    // Re(a . conj(b))
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

fn norm_sq(a: &Vec3c) -> f64 {
    a.iter().map(|c| c.norm_sqr()).sum()
}

impl SpectralField {
    pub fn zeros(grid: &Arc<TorusGrid>) -> Self {
        Self {
            grid: Arc::clone(grid),
            coeffs: vec![ZERO3; grid.len()],
        }
    }

    /// Wraps raw coefficients without enforcing any invariant.
    pub fn from_coeffs(grid: &Arc<TorusGrid>, coeffs: Vec<Vec3c>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} coefficients, got {}",
                grid.len(),
                coeffs.len()
            )));
        }
        Ok(Self {
            grid: Arc::clone(grid),
            coeffs,
        })
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Vec3c] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Vec3c] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Vec3c> {
        self.coeffs
    }

    pub fn mode(&self, k: [i32; 3]) -> Option<Vec3c> {
        self.grid.index_of(k).map(|i| self.coeffs[i])
    }

    /// Sets `u_k = value` and `u_{-k} = conj(value)`.
    pub fn set_mode(&mut self, k: [i32; 3], value: Vec3c) -> Result<()> {
        let idx = self
            .grid
            .index_of(k)
            .ok_or_else(|| Error::InvalidParameter(format!("wavevector {k:?} not on grid")))?;
        let c = self.grid.conj_index(idx);
        self.coeffs[idx] = value;
        self.coeffs[c] = value.map(|z| z.conj());
        if c == idx {
            self.coeffs[idx] = value.map(|z| Complex64::new(z.re, 0.0));
        }
        Ok(())
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<()> {
        let (a, b) = (self.grid.n_per_axis(), other.grid.n_per_axis());
        if a != b {
            return Err(Error::GridMismatch { left: a, right: b });
        }
        Ok(())
    }

    /// Replaces each pair by its Hermitian average.
    pub fn enforce_hermitian(&mut self) {
        for idx in 0..self.coeffs.len() {
            let c = self.grid.conj_index(idx);
            if c < idx {
                continue;
            }
            let a = self.coeffs[idx];
            let b = self.coeffs[c];
            let mut avg = ZERO3;
            for d in 0..3 {
                avg[d] = (a[d] + b[d].conj()) * 0.5;
            }
            self.coeffs[idx] = avg;
            self.coeffs[c] = avg.map(|z| z.conj());
        }
    }

    /// Zeroes every coefficient outside the dealias mask.
    pub fn apply_mask(&mut self) {
        for (idx, c) in self.coeffs.iter_mut().enumerate() {
            if !self.grid.in_mask(idx) {
                *c = ZERO3;
            }
        }
    }

    /// Leray projection `u_k - (k.u_k) k / |k|^2`; mode 0 is set to zero.
    pub fn leray_project(&self) -> Self {
        let mut out = self.clone();
        for (idx, c) in out.coeffs.iter_mut().enumerate() {
            let k2 = self.grid.k2(idx);
            if k2 == 0.0 {
                *c = ZERO3;
                continue;
            }
            let k = self.grid.wavevector(idx).map(f64::from);
            let kdotu = c[0] * k[0] + c[1] * k[1] + c[2] * k[2];
            for d in 0..3 {
                c[d] -= kdotu * (k[d] / k2);
            }
        }
        out
    }

    /// Applies the Fourier multiplier `|k|^s`.
    pub fn frac_power(&self, s: f64) -> Self {
        let mut out = self.clone();
        for (idx, c) in out.coeffs.iter_mut().enumerate() {
            let k2 = self.grid.k2(idx);
            if k2 == 0.0 {
                *c = ZERO3;
                continue;
            }
            let m = k2.powf(0.5 * s);
            for z in c.iter_mut() {
                *z *= m;
            }
        }
        out
    }

    /// `sum_{k != 0} |k|^{2s} |u_k|^2` over every stored wavevector.
    pub fn sobolev_norm_sq(&self, s: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(idx, _)| self.grid.k2(*idx) > 0.0)
            .map(|(idx, c)| {
                let ns = norm_sq(c);
                if ns == 0.0 {
                    0.0
                } else if s == 0.0 {
                    ns
                } else {
                    self.grid.k2(idx).powf(s) * ns
                }
            })
            .sum()
    }

    /// Energy `||u||_H^2`.
    pub fn energy(&self) -> f64 {
        self.sobolev_norm_sq(0.0)
    }

    pub fn norm_h(&self) -> f64 {
        self.energy().sqrt()
    }

    /// L2 inner product `sum_k u_k . conj(v_k)` (real for Hermitian inputs).
    pub fn inner_product(&self, other: &Self) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self.inner_unchecked(other))
    }

    pub(crate) fn inner_unchecked(&self, other: &Self) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| dot_re(a, b))
            .sum()
    }

    /// `max_k |k . u_k|`.
    pub fn max_divergence(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(idx, c)| {
                let k = self.grid.wavevector(idx).map(f64::from);
                (c[0] * k[0] + c[1] * k[1] + c[2] * k[2]).norm()
            })
            .fold(0.0, f64::max)
    }

    /// `max_k |u_{-k} - conj(u_k)|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (idx, c) in self.coeffs.iter().enumerate() {
            let p = &self.coeffs[self.grid.conj_index(idx)];
            for d in 0..3 {
                worst = worst.max((p[d] - c[d].conj()).norm());
            }
        }
        worst
    }

    /// Energy carried outside the dealias mask.
    pub fn out_of_mask_energy(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(idx, _)| !self.grid.in_mask(*idx))
            .map(|(_, c)| norm_sq(c))
            .sum()
    }

    pub fn mean_mode(&self) -> Vec3c {
        self.coeffs[0]
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs
            .iter()
            .all(|c| c.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    pub fn scale(&mut self, a: f64) {
        for c in &mut self.coeffs {
            for z in c.iter_mut() {
                *z *= a;
            }
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        debug_assert_eq!(self.grid.n_per_axis(), other.grid.n_per_axis());
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            for d in 0..3 {
                x[d] += y[d] * a;
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Applies a real per-wavevector multiplier.
    pub fn multiply_modes(&mut self, mult: &[f64]) {
        for (c, &m) in self.coeffs.iter_mut().zip(mult) {
            for z in c.iter_mut() {
                *z *= m;
            }
        }
    }

    /// Real components of the velocity on the physical grid.
    pub fn to_physical(&self) -> [Vec<f64>; 3] {
        let mut out: [Vec<f64>; 3] = Default::default();
        let mut buf = vec![Complex64::new(0.0, 0.0); self.grid.len()];
        for (d, o) in out.iter_mut().enumerate() {
            for (b, c) in buf.iter_mut().zip(&self.coeffs) {
                *b = c[d];
            }
            self.grid.fft3(&mut buf, true);
            *o = buf.iter().map(|z| z.re).collect();
        }
        out
    }

    /// Forward transform of real physical components, Hermitian-symmetrized.
    pub fn from_physical(grid: &Arc<TorusGrid>, values: &[Vec<f64>; 3]) -> Self {
        let mut field = Self::zeros(grid);
        let norm = 1.0 / grid.len() as f64;
        let mut buf = vec![Complex64::new(0.0, 0.0); grid.len()];
        for (d, v) in values.iter().enumerate() {
            for (b, &x) in buf.iter_mut().zip(v) {
                *b = Complex64::new(x, 0.0);
            }
            grid.fft3(&mut buf, false);
            for (c, b) in field.coeffs.iter_mut().zip(&buf) {
                c[d] = b * norm;
            }
        }
        field.enforce_hermitian();
        field
    }

    /// Random field in H supported on the dealias mask.
    ///
    /// Each retained pair receives, per transverse polarization, a complex
    /// coefficient whose cosine and sine parts are independent normals with
    /// standard deviation `std(idx)`. The draw order is fixed by ascending
    /// representative index.
    pub fn random_transverse<F>(grid: &Arc<TorusGrid>, rng: &mut StreamRng, std: F) -> Self
    where
        F: Fn(usize) -> f64,
    {
        let mut field = Self::zeros(grid);
        field.add_transverse_noise(rng, std);
        field
    }

    pub(crate) fn add_transverse_noise<F>(&mut self, rng: &mut StreamRng, std: F)
    where
        F: Fn(usize) -> f64,
    {
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        let grid = Arc::clone(&self.grid);
        for &idx in grid.representatives() {
            let sigma = std(idx);
            if sigma == 0.0 {
                continue;
            }
            let pol = grid.polarizations(idx);
            let mut v = ZERO3;
            for e in &pol {
                let a = rng.normal();
                let b = rng.normal();
                let z = Complex64::new(a, -b) * (sigma * inv_sqrt2);
                for d in 0..3 {
                    v[d] += z * e[d];
                }
            }
            let c = grid.conj_index(idx);
            for d in 0..3 {
                self.coeffs[idx][d] += v[d];
                self.coeffs[c][d] += v[d].conj();
            }
        }
    }

    /// Coordinates of the pair `{k, -k}` against the real orthonormal basis
    /// `sqrt(2) cos(k.x) e_p`, `sqrt(2) sin(k.x) e_p`: returns
    /// `[cos_1, sin_1, cos_2, sin_2]`.
    pub fn real_dofs(&self, idx: usize) -> [f64; 4] {
        let pol = self.grid.polarizations(idx);
        let c = &self.coeffs[idx];
        let s2 = std::f64::consts::SQRT_2;
        let mut out = [0.0; 4];
        for (p, e) in pol.iter().enumerate() {
            let z = c[0] * e[0] + c[1] * e[1] + c[2] * e[2];
            out[2 * p] = s2 * z.re;
            out[2 * p + 1] = -s2 * z.im;
        }
        out
    }

    /// Field equal to `amplitude * sqrt(2) cos(k.x) e_1(k)`, one real
    /// degree of freedom of the pair `{k, -k}`.
    pub fn single_dof(grid: &Arc<TorusGrid>, k: [i32; 3], amplitude: f64) -> Result<Self> {
        let idx = grid
            .index_of(k)
            .filter(|&i| grid.in_mask(i) && grid.k2(i) > 0.0)
            .ok_or_else(|| Error::InvalidParameter(format!("wavevector {k:?} not retained")))?;
        let e = grid.polarizations(idx)[0];
        let a = amplitude * std::f64::consts::FRAC_1_SQRT_2;
        let mut f = Self::zeros(grid);
        f.set_mode(k, e.map(|x| Complex64::new(a * x, 0.0)))?;
        Ok(f)
    }
}
