//! Box-constrained limited-memory quasi-Newton minimizer.
//!
//! Projected-gradient variant of L-BFGS: search directions come from the
//! standard two-loop recursion, trial points are clipped onto the box, and a
//! backtracking Armijo line search runs along the projected path. Gradients
//! are central finite differences of the supplied objective, so callers only
//! provide a scalar function.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LbfgsbOptions {
    pub max_iters: usize,
    /// Number of curvature pairs retained for the two-loop recursion.
    pub memory: usize,
    /// Finite-difference step for gradient estimation.
    pub grad_step: f64,
    /// Convergence threshold on the projected-gradient infinity norm.
    pub grad_tol: f64,
    /// Convergence threshold on the per-step objective decrease.
    pub f_tol: f64,
}

impl Default for LbfgsbOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            memory: 10,
            grad_step: 1e-6,
            grad_tol: 1e-8,
            f_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn clip(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((xi, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        *xi = xi.clamp(lo, hi);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn finite_diff_gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        g[i] = if fp.is_finite() && fm.is_finite() {
            (fp - fm) / (2.0 * h)
        } else if fp.is_finite() || fm.is_finite() {
            // one-sided fallback needs the center value; recompute lazily
            let fc = f(x);
            if fp.is_finite() && fc.is_finite() {
                (fp - fc) / h
            } else if fm.is_finite() && fc.is_finite() {
                (fc - fm) / h
            } else {
                0.0
            }
        } else {
            0.0
        };
    }
    g
}

/// Minimizes `f` over the box `[lower, upper]`, starting from `x0` (clipped
/// into the box). Returns the best point found; `converged` reports whether a
/// tolerance was met rather than the iteration or line-search budget.
pub fn minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &LbfgsbOptions,
) -> Result<Solution> {
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(Error::InvalidInput("bounds length mismatch".into()));
    }
    if lower.iter().zip(upper).any(|(lo, hi)| lo > hi) {
        return Err(Error::InvalidInput("lower bound above upper bound".into()));
    }

    let mut x = x0.to_vec();
    clip(&mut x, lower, upper);
    let mut fx = f(&x);
    if !fx.is_finite() {
        return Err(Error::NumericalFailure(
            "objective non-finite at the start point".into(),
        ));
    }
    let mut g = finite_diff_gradient(&mut f, &x, opts.grad_step);

    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();

    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..opts.max_iters {
        iterations = iter + 1;

        // projected gradient: zero where the bound blocks descent
        let pg_norm = x
            .iter()
            .zip(&g)
            .zip(lower.iter().zip(upper))
            .map(|((&xi, &gi), (&lo, &hi))| (xi - (xi - gi).clamp(lo, hi)).abs())
            .fold(0.0f64, f64::max);
        if pg_norm < opts.grad_tol {
            converged = true;
            break;
        }

        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|&gi| -gi).collect();
        let mut alphas = vec![0.0; s_hist.len()];
        for k in (0..s_hist.len()).rev() {
            let a = rho_hist[k] * dot(&s_hist[k], &d);
            alphas[k] = a;
            for (di, yi) in d.iter_mut().zip(&y_hist[k]) {
                *di -= a * yi;
            }
        }
        if let Some(k) = s_hist.len().checked_sub(1) {
            let gamma = dot(&s_hist[k], &y_hist[k]) / dot(&y_hist[k], &y_hist[k]);
            if gamma.is_finite() && gamma > 0.0 {
                for di in d.iter_mut() {
                    *di *= gamma;
                }
            }
        }
        for k in 0..s_hist.len() {
            let b = rho_hist[k] * dot(&y_hist[k], &d);
            for (di, si) in d.iter_mut().zip(&s_hist[k]) {
                *di += (alphas[k] - b) * si;
            }
        }
        if dot(&d, &g) >= 0.0 || d.iter().any(|v| !v.is_finite()) {
            d = g.iter().map(|&gi| -gi).collect();
        }

        // weak-Wolfe bisection along the projected path: shrink on Armijo
        // failure, grow on a curvature failure. Guaranteed-positive s.y pairs
        // keep the quasi-Newton history from going stale.
        let mut lo = 0.0f64;
        let mut hi = f64::INFINITY;
        let mut alpha = 1.0f64;
        let mut chosen: Option<(Vec<f64>, f64, Vec<f64>)> = None;
        let mut armijo_fallback: Option<(Vec<f64>, f64, Vec<f64>)> = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(&xi, &di)| xi + alpha * di).collect();
            clip(&mut trial, lower, upper);
            let displacement: Vec<f64> = trial.iter().zip(&x).map(|(t, xi)| t - xi).collect();
            if displacement.iter().all(|&v| v == 0.0) {
                break;
            }
            let slope = dot(&g, &displacement);
            let ft = f(&trial);
            if !(ft.is_finite() && slope < 0.0 && ft <= fx + 1e-4 * slope) {
                hi = alpha;
                alpha = 0.5 * (lo + hi);
                continue;
            }
            let gt = finite_diff_gradient(&mut f, &trial, opts.grad_step);
            if dot(&gt, &displacement) < 0.9 * slope {
                armijo_fallback = Some((trial, ft, gt));
                lo = alpha;
                alpha = if hi.is_finite() {
                    0.5 * (lo + hi)
                } else {
                    2.0 * alpha
                };
                if alpha > 1e8 {
                    break;
                }
                continue;
            }
            chosen = Some((trial, ft, gt));
            break;
        }
        let Some((x_new, f_new, g_new)) = chosen.or(armijo_fallback) else {
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            rho_hist.push(1.0 / sy);
            s_hist.push(s);
            y_hist.push(y);
        }

        let decrease = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        if decrease.abs() < opts.f_tol {
            converged = true;
            break;
        }
    }

    Ok(Solution {
        x,
        f: fx,
        iterations,
        converged,
    })
}
