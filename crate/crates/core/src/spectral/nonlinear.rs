//! Pseudo-spectral evaluation of the convective term with 2/3-rule
//! dealiasing.
//!
//! For inputs supported on the dealias mask every product below has
//! wavenumbers with `|k_i| < 2n/3`; aliased copies land at `|k_i| > n/3`
//! and are removed by the mask, so the retained coefficients are exact.

use num_complex::Complex64;

use super::field::SpectralField;
use crate::error::{Error, Result};

fn require_band_limited(f: &SpectralField) -> Result<()> {
    let outside = f.out_of_mask_energy();
    if outside > 0.0 {
        return Err(Error::NotBandLimited(outside));
    }
    Ok(())
}

/// Physical-space components of `d v_i / d x_j`, indexed `[i][j]`.
fn physical_gradient(v: &SpectralField) -> [[Vec<f64>; 3]; 3] {
    let grid = v.grid();
    let mut out: [[Vec<f64>; 3]; 3] = Default::default();
    let mut buf = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            for (idx, b) in buf.iter_mut().enumerate() {
                let kj = grid.wavevector(idx)[j] as f64;
                *b = v.coeffs()[idx][i] * Complex64::new(0.0, kj);
            }
            grid.fft3(&mut buf, true);
            *slot = buf.iter().map(|z| z.re).collect();
        }
    }
    out
}

fn finish(u: &SpectralField, phys: [Vec<f64>; 3]) -> SpectralField {
    let mut out = SpectralField::from_physical(u.grid(), &phys);
    out.apply_mask();
    out
}

fn convective_unchecked(u: &SpectralField, v: &SpectralField) -> SpectralField {
    let up = u.to_physical();
    let grad = physical_gradient(v);
    let len = u.grid().len();
    let mut prod: [Vec<f64>; 3] = Default::default();
    for (i, p) in prod.iter_mut().enumerate() {
        *p = (0..len)
            .map(|x| up[0][x] * grad[i][0][x] + up[1][x] * grad[i][1][x] + up[2][x] * grad[i][2][x])
            .collect();
    }
    finish(u, prod)
}

/// Dealiased convective term `(u . grad) v` before Leray projection.
pub fn convective(u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
    u.check_same_grid(v)?;
    require_band_limited(u)?;
    require_band_limited(v)?;
    Ok(convective_unchecked(u, v))
}

/// `B(u, v) = P (u . grad) v`.
pub fn bilinear(u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
    Ok(convective(u, v)?.leray_project())
}

/// `B(u, u)`.
pub fn nonlinear_term(u: &SpectralField) -> Result<SpectralField> {
    bilinear(u, u)
}

/// `b(u, v, w) = ((u . grad) v, w)` with the unprojected convective term.
pub fn trilinear(u: &SpectralField, v: &SpectralField, w: &SpectralField) -> Result<f64> {
    u.check_same_grid(w)?;
    require_band_limited(w)?;
    convective(u, v)?.inner_product(w)
}

/// Adjoint of the linearization `delta -> B(u, delta) + B(delta, u)` with
/// respect to the H inner product, applied to `mu`:
/// `P[(grad u)^T mu - (u . grad) mu]` on the mask. Requires `div u = 0`.
pub fn linearized_adjoint(u: &SpectralField, mu: &SpectralField) -> Result<SpectralField> {
    u.check_same_grid(mu)?;
    require_band_limited(u)?;
    require_band_limited(mu)?;
    let grad_u = physical_gradient(u);
    let mp = mu.to_physical();
    let len = u.grid().len();
    let mut prod: [Vec<f64>; 3] = Default::default();
    for (j, p) in prod.iter_mut().enumerate() {
        *p = (0..len)
            .map(|x| mp[0][x] * grad_u[0][j][x] + mp[1][x] * grad_u[1][j][x] + mp[2][x] * grad_u[2][j][x])
            .collect();
    }
    let mut out = finish(u, prod);
    out.axpy(-1.0, &convective_unchecked(u, mu));
    Ok(out.leray_project())
}

/// Max physical speed `max_x |u(x)|`.
pub fn max_speed(u: &SpectralField) -> f64 {
    let p = u.to_physical();
    (0..u.grid().len())
        .map(|x| (p[0][x] * p[0][x] + p[1][x] * p[1][x] + p[2][x] * p[2][x]).sqrt())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use crate::spectral::make_grid;

    fn random(seed: u64) -> SpectralField {
        let g = make_grid(8).unwrap();
        let mut rng = StreamRng::new(seed, 0);
        SpectralField::random_transverse(&g, &mut rng, |i| (1.0 + g.k2(i)).powf(-1.0))
    }

    #[test]
    fn zero_field_has_zero_nonlinearity() {
        let g = make_grid(8).unwrap();
        let z = SpectralField::zeros(&g);
        assert_eq!(nonlinear_term(&z).unwrap().energy(), 0.0);
        let v = random(1);
        assert_eq!(trilinear(&z, &v, &v).unwrap(), 0.0);
    }

    #[test]
    fn shear_mode_is_steady() {
        // u = (sin x2, 0, 0): u_{(0,1,0)} = (-i/2, 0, 0).
        let g = make_grid(8).unwrap();
        let mut u = SpectralField::zeros(&g);
        u.set_mode([0, 1, 0], [Complex64::new(0.0, -0.5), 0.0.into(), 0.0.into()])
            .unwrap();
        let phys = u.to_physical();
        let n = g.n_per_axis();
        for i1 in 0..n {
            let x2 = 2.0 * std::f64::consts::PI * i1 as f64 / n as f64;
            assert!((phys[0][i1 * n] - x2.sin()).abs() < 1e-14);
        }
        let conv = convective(&u, &u).unwrap();
        assert!(conv.energy() < 1e-28);
    }

    #[test]
    fn physical_convective_matches_direct_evaluation() {
        // u = (sin x2, sin x1, 0) -> (u.grad)u = (sin x1 cos x2, sin x2 cos x1, 0).
        let g = make_grid(8).unwrap();
        let n = g.n_per_axis();
        let h = 2.0 * std::f64::consts::PI / n as f64;
        let mut phys: [Vec<f64>; 3] = [vec![0.0; g.len()], vec![0.0; g.len()], vec![0.0; g.len()]];
        let mut expect = phys.clone();
        for i0 in 0..n {
            for i1 in 0..n {
                for i2 in 0..n {
                    let idx = (i0 * n + i1) * n + i2;
                    let (x1, x2) = (i0 as f64 * h, i1 as f64 * h);
                    phys[0][idx] = x2.sin();
                    phys[1][idx] = x1.sin();
                    expect[0][idx] = x1.sin() * x2.cos();
                    expect[1][idx] = x2.sin() * x1.cos();
                }
            }
        }
        let mut u = SpectralField::from_physical(&g, &phys);
        u.apply_mask();
        let conv = convective(&u, &u).unwrap().to_physical();
        for d in 0..3 {
            for idx in 0..g.len() {
                assert!((conv[d][idx] - expect[d][idx]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn cancellation_and_antisymmetry() {
        let (u, v, w) = (random(3), random(4), random(5));
        let scale = u.norm_h() * v.energy();
        assert!(trilinear(&u, &v, &v).unwrap().abs() <= 1e-12 * scale);
        let a = trilinear(&u, &v, &w).unwrap();
        let b = trilinear(&u, &w, &v).unwrap();
        assert!((a + b).abs() <= 1e-12 * u.norm_h() * v.norm_h() * w.norm_h());
        let buv = bilinear(&u, &v).unwrap();
        assert!((buv.inner_product(&w).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn output_is_in_h_and_band_limited() {
        let u = random(6);
        let b = nonlinear_term(&u).unwrap();
        assert_eq!(b.hermitian_defect(), 0.0);
        assert_eq!(b.out_of_mask_energy(), 0.0);
        assert_eq!(b.mean_mode(), [Complex64::new(0.0, 0.0); 3]);
        assert!(b.max_divergence() <= 1e-12 * b.sobolev_norm_sq(1.0).sqrt());
    }

    #[test]
    fn rejects_unmasked_input() {
        let g = make_grid(8).unwrap();
        let mut u = SpectralField::zeros(&g);
        u.set_mode([3, 0, 0], [0.0.into(), Complex64::new(1.0, 0.0), 0.0.into()])
            .unwrap();
        assert!(matches!(nonlinear_term(&u), Err(Error::NotBandLimited(_))));
    }

    #[test]
    fn adjoint_identity() {
        let (u, d, m) = (random(7), random(8), random(9));
        let lin = bilinear(&u, &d).unwrap().add(&bilinear(&d, &u).unwrap());
        let lhs = lin.inner_product(&m).unwrap();
        let rhs = d.inner_product(&linearized_adjoint(&u, &m).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }
}
