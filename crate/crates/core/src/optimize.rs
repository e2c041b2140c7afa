//! Limited-memory BFGS with Armijo backtracking on sequences of fields.

use std::collections::VecDeque;

use crate::error::Result;
use crate::spectral::SpectralField;

pub type Point = Vec<SpectralField>;

pub fn dot(a: &[SpectralField], b: &[SpectralField]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.inner_unchecked(y)).sum()
}

pub fn norm(a: &[SpectralField]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [SpectralField], a: f64, x: &[SpectralField]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        yi.axpy(a, xi);
    }
}

fn scaled(x: &[SpectralField], a: f64) -> Point {
    x.iter().map(|f| f.scaled(a)).collect()
}

#[derive(Clone, Copy, Debug)]
pub struct LbfgsOptions {
    pub memory: usize,
    /// Stop when `||grad|| <= rel_tol * ||grad_0||`.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 12,
            rel_tol: 1e-8,
            max_iter: 5000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsOutcome {
    pub x: Point,
    pub value: f64,
    pub grad_norm: f64,
    pub initial_grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Line search could not decrease the objective further.
    pub stalled: bool,
}

/// Minimizes `f` given `eval(x) -> (f(x), grad f(x))`.
pub fn lbfgs<F>(x0: Point, opts: LbfgsOptions, mut eval: F) -> Result<LbfgsOutcome>
where
    F: FnMut(&[SpectralField]) -> Result<(f64, Point)>,
{
    let mut x = x0;
    let (mut fx, mut g) = eval(&x)?;
    let g0 = norm(&g);
    let mut gnorm = g0;
    let mut hist: VecDeque<(Point, Point, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut stalled = false;
    let done = |gn: f64| gn == 0.0 || gn <= opts.rel_tol * g0;

    while !done(gnorm) && iterations < opts.max_iter {
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            axpy(&mut q, -a, y);
            alphas.push(a);
        }
        let gamma = hist
            .back()
            .map(|(s, y, _)| dot(s, y) / dot(y, y))
            .unwrap_or(1.0 / gnorm.max(1e-300));
        let mut d = scaled(&q, gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            axpy(&mut d, a - b, s);
        }
        for f in d.iter_mut() {
            f.scale(-1.0);
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = scaled(&g, -1.0 / gnorm);
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = x.clone();
            axpy(&mut trial, step, &d);
            let (ft, gt) = eval(&trial)?;
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some((xn, fnew, gn)) = accepted else {
            stalled = true;
            break;
        };
        let s: Point = xn.iter().zip(&x).map(|(a, b)| a.sub(b)).collect();
        let y: Point = gn.iter().zip(&g).map(|(a, b)| a.sub(b)).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * norm(&s) * norm(&y) && sy > 0.0 {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let improved = fnew < fx;
        x = xn;
        fx = fnew;
        g = gn;
        gnorm = norm(&g);
        if !improved {
            stalled = true;
            break;
        }
    }
    Ok(LbfgsOutcome {
        x,
        value: fx,
        grad_norm: gnorm,
        initial_grad_norm: g0,
        iterations,
        converged: done(gnorm),
        stalled,
    })
}
