use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Uniform grid on the periodic box [0, 2pi]^3 with its wavevector table.
///
/// Coefficients are stored row-major: index `(i0 * n + i1) * n + i2`, where
/// axis position `i` carries the integer wavenumber `i` for `i <= n/2` and
/// `i - n` otherwise, so every component lies in `(-n/2, n/2]`.
pub struct TorusGrid {
    n: usize,
    wavevectors: Vec<[i32; 3]>,
    k2: Vec<f64>,
    dealias: Vec<bool>,
    conj: Vec<usize>,
    /// Retained (masked, nonzero) wavevectors with `idx < conj[idx]`.
    representatives: Vec<usize>,
    /// Orthonormal transverse basis per wavevector; zero outside the mask.
    polarizations: Vec<[[f64; 3]; 2]>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("n", &self.n)
            .field("retained", &(2 * self.representatives.len()))
            .finish()
    }
}

/// Builds the grid for `n_per_axis` modes per axis.
pub fn make_grid(n_per_axis: usize) -> Result<Arc<TorusGrid>> {
    TorusGrid::new(n_per_axis).map(Arc::new)
}

fn wavenumber(i: usize, n: usize) -> i32 {
    if i <= n / 2 {
        i as i32
    } else {
        i as i32 - n as i32
    }
}

fn transverse_basis(k: [i32; 3]) -> [[f64; 3]; 2] {
    let kf = [k[0] as f64, k[1] as f64, k[2] as f64];
    let norm = (kf[0] * kf[0] + kf[1] * kf[1] + kf[2] * kf[2]).sqrt();
    let khat = [kf[0] / norm, kf[1] / norm, kf[2] / norm];
    // Cross with the coordinate axis least aligned with k.
    let axis = (0..3)
        .min_by(|&a, &b| khat[a].abs().total_cmp(&khat[b].abs()))
        .unwrap();
    let mut a = [0.0; 3];
    a[axis] = 1.0;
    let e1 = normalize(cross(a, khat));
    let e2 = normalize(cross(khat, e1));
    [e1, e2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

impl TorusGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 4 || n % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "modes per axis must be even and at least 4, got {n}"
            )));
        }
        let len = n * n * n;
        let mut wavevectors = Vec::with_capacity(len);
        let mut k2 = Vec::with_capacity(len);
        let mut dealias = Vec::with_capacity(len);
        let mut conj = Vec::with_capacity(len);
        // |k_i| < n/3  <=>  3|k_i| < n
        let keep = |c: i32| (3 * c.unsigned_abs() as usize) < n;
        for i0 in 0..n {
            for i1 in 0..n {
                for i2 in 0..n {
                    let k = [wavenumber(i0, n), wavenumber(i1, n), wavenumber(i2, n)];
                    wavevectors.push(k);
                    k2.push((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64);
                    dealias.push(keep(k[0]) && keep(k[1]) && keep(k[2]));
                    let j = |i: usize| (n - i) % n;
                    conj.push((j(i0) * n + j(i1)) * n + j(i2));
                }
            }
        }
        let mut representatives = Vec::new();
        let mut polarizations = vec![[[0.0; 3]; 2]; len];
        for idx in 0..len {
            if dealias[idx] && k2[idx] > 0.0 {
                polarizations[idx] = transverse_basis(wavevectors[idx]);
                if idx < conj[idx] {
                    representatives.push(idx);
                }
            }
        }
        // Partners share the representative's real basis so that conjugation
        // maps transverse vectors to transverse vectors.
        for &idx in &representatives {
            polarizations[conj[idx]] = polarizations[idx];
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n,
            wavevectors,
            k2,
            dealias,
            conj,
            representatives,
            polarizations,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    pub fn n_per_axis(&self) -> usize {
        self.n
    }

    /// Total number of stored wavevectors, `n^3`.
    pub fn len(&self) -> usize {
        self.wavevectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavevectors.is_empty()
    }

    pub fn wavevectors(&self) -> &[[i32; 3]] {
        &self.wavevectors
    }

    pub fn wavevector(&self, idx: usize) -> [i32; 3] {
        self.wavevectors[idx]
    }

    pub fn k2(&self, idx: usize) -> f64 {
        self.k2[idx]
    }

    pub fn dealias_mask(&self) -> &[bool] {
        &self.dealias
    }

    pub fn in_mask(&self, idx: usize) -> bool {
        self.dealias[idx]
    }

    /// Index of `-k`.
    pub fn conj_index(&self, idx: usize) -> usize {
        self.conj[idx]
    }

    /// Smallest nonzero `|k|^2`; always 1 on the unit-wavenumber torus.
    pub fn lambda_min(&self) -> f64 {
        1.0
    }

    pub fn max_k(&self) -> f64 {
        self.retained().map(|i| self.k2[i].sqrt()).fold(0.0, f64::max)
    }

    /// One index per retained conjugate pair `{k, -k}`, ascending.
    pub fn representatives(&self) -> &[usize] {
        &self.representatives
    }

    /// All retained nonzero wavevector indices.
    pub fn retained(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| self.dealias[i] && self.k2[i] > 0.0)
    }

    pub fn polarizations(&self, idx: usize) -> [[f64; 3]; 2] {
        self.polarizations[idx]
    }

    pub fn index_of(&self, k: [i32; 3]) -> Option<usize> {
        let n = self.n as i32;
        let mut pos = [0usize; 3];
        for (p, &c) in pos.iter_mut().zip(k.iter()) {
            if c <= -n / 2 || c > n / 2 {
                return None;
            }
            *p = c.rem_euclid(n) as usize;
        }
        Some((pos[0] * self.n + pos[1]) * self.n + pos[2])
    }

    /// In-place unnormalized 3D FFT over a full coefficient block.
    pub(crate) fn fft3(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        let plan = if inverse { &self.inverse } else { &self.forward };
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        // Contiguous axis.
        plan.process_with_scratch(data, &mut scratch);
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        // Middle axis.
        for i0 in 0..n {
            for i2 in 0..n {
                for (i1, l) in line.iter_mut().enumerate() {
                    *l = data[(i0 * n + i1) * n + i2];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for (i1, l) in line.iter().enumerate() {
                    data[(i0 * n + i1) * n + i2] = *l;
                }
            }
        }
        // Slowest axis.
        for i1 in 0..n {
            for i2 in 0..n {
                for (i0, l) in line.iter_mut().enumerate() {
                    *l = data[(i0 * n + i1) * n + i2];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for (i0, l) in line.iter().enumerate() {
                    data[(i0 * n + i1) * n + i2] = *l;
                }
            }
        }
    }
}
