//! Gaussian-process surrogate with an ARD Matérn 5/2 kernel.
//!
//! Targets are standardized before fitting, kernel hyperparameters are
//! estimated by multi-start maximization of the log marginal likelihood in
//! log space, and the regularized Gram matrix is factorized with an adaptive
//! jitter ladder. Predictions come back on the raw target scale.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lbfgsb::{self, LbfgsbOptions};
use crate::par::map_slice;
use crate::space::{Configuration, Space};

pub const LENGTHSCALE_BOUNDS: (f64, f64) = (1e-2, 1e2);
pub const SIGNAL_VARIANCE_BOUNDS: (f64, f64) = (1e-3, 1e3);
pub const NOISE_VARIANCE_BOUNDS: (f64, f64) = (1e-8, 1e-1);

const JITTER_START: f64 = 1e-10;
const JITTER_CAP: f64 = 1e-4;

/// Matérn 5/2 kernel hyperparameters: one lengthscale per dimension plus
/// signal and noise variances. All values live inside fixed bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(lengthscales: Vec<f64>, signal_variance: f64, noise_variance: f64) -> Result<Self> {
        let p = Self {
            lengthscales,
            signal_variance,
            noise_variance,
        };
        p.validate()?;
        Ok(p)
    }

    /// Default starting point for hyperparameter estimation.
    pub fn defaults(dim: usize) -> Self {
        Self {
            lengthscales: vec![0.5; dim],
            signal_variance: 1.0,
            noise_variance: 1e-6,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() {
            return Err(Error::InvalidInput("no lengthscales".into()));
        }
        for &l in &self.lengthscales {
            if !(LENGTHSCALE_BOUNDS.0..=LENGTHSCALE_BOUNDS.1).contains(&l) {
                return Err(Error::InvalidInput(format!(
                    "lengthscale {l} outside [{}, {}]",
                    LENGTHSCALE_BOUNDS.0, LENGTHSCALE_BOUNDS.1
                )));
            }
        }
        if !(SIGNAL_VARIANCE_BOUNDS.0..=SIGNAL_VARIANCE_BOUNDS.1).contains(&self.signal_variance) {
            return Err(Error::InvalidInput(format!(
                "signal variance {} outside [{}, {}]",
                self.signal_variance, SIGNAL_VARIANCE_BOUNDS.0, SIGNAL_VARIANCE_BOUNDS.1
            )));
        }
        if !(NOISE_VARIANCE_BOUNDS.0..=NOISE_VARIANCE_BOUNDS.1).contains(&self.noise_variance) {
            return Err(Error::InvalidInput(format!(
                "noise variance {} outside [{}, {}]",
                self.noise_variance, NOISE_VARIANCE_BOUNDS.0, NOISE_VARIANCE_BOUNDS.1
            )));
        }
        Ok(())
    }
}

/// Matérn 5/2 covariance between two points, with per-dimension lengthscales:
/// `sv * (1 + sqrt5*r + 5/3*r^2) * exp(-sqrt5*r)` where
/// `r = sqrt(sum_i ((a_i - b_i) / l_i)^2)`.
pub fn matern52(a: &[f64], b: &[f64], params: &KernelParams) -> Result<f64> {
    if a.len() != b.len() || a.len() != params.lengthscales.len() {
        return Err(Error::InvalidInput(format!(
            "kernel dimension mismatch: {} vs {} vs {} lengthscales",
            a.len(),
            b.len(),
            params.lengthscales.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite kernel input".into()));
    }
    Ok(matern52_unchecked(a, b, params))
}

#[inline]
fn matern52_unchecked(a: &[f64], b: &[f64], params: &KernelParams) -> f64 {
    let mut r2 = 0.0;
    for ((&x, &y), &l) in a.iter().zip(b).zip(&params.lengthscales) {
        let d = (x - y) / l;
        r2 += d * d;
    }
    let r = r2.sqrt();
    let sqrt5_r = 5.0f64.sqrt() * r;
    params.signal_variance * (1.0 + sqrt5_r + 5.0 / 3.0 * r2) * (-sqrt5_r).exp()
}

/// How `fit` obtains kernel hyperparameters.
#[derive(Debug, Clone)]
pub enum FitMode {
    /// Multi-start maximum likelihood: one start from defaults plus
    /// `random_starts` log-uniform draws within bounds.
    Mle { random_starts: usize },
    /// Skip estimation and use the given parameters as-is.
    Fixed(KernelParams),
}

impl Default for FitMode {
    fn default() -> Self {
        FitMode::Mle { random_starts: 4 }
    }
}

/// A fitted surrogate. Immutable; `predict` is read-only and can be called
/// concurrently from many threads.
#[derive(Debug, Clone)]
pub struct GpModel {
    rows: Vec<Vec<f64>>,
    x: DMatrix<f64>,
    z: DVector<f64>,
    y_mean: f64,
    y_std: f64,
    params: KernelParams,
    chol_l: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

fn matrix_rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows())
        .map(|i| x.row(i).iter().copied().collect())
        .collect()
}

fn gram(params: &KernelParams, rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = matern52_unchecked(&rows[i], &rows[j], params);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky of `K + (noise + jitter) I`, raising jitter tenfold from 1e-10
/// until the factorization succeeds, capped at 1e-4.
fn factorize(
    params: &KernelParams,
    rows: &[Vec<f64>],
) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    let k = gram(params, rows);
    let n = rows.len();
    let mut jitter = JITTER_START;
    loop {
        let mut reg = k.clone();
        for i in 0..n {
            reg[(i, i)] += params.noise_variance + jitter;
        }
        if let Some(chol) = nalgebra::Cholesky::new(reg) {
            return Ok((chol, jitter));
        }
        if jitter >= JITTER_CAP {
            return Err(Error::NumericalFailure(format!(
                "Cholesky failed at maximum jitter {JITTER_CAP}"
            )));
        }
        jitter *= 10.0;
    }
}

/// Log marginal likelihood of standardized targets `z` under `params`:
/// `-1/2 z' (K + nv I)^-1 z - 1/2 log det(K + nv I) - n/2 log 2pi`,
/// computed through the Cholesky factor (with the same jitter ladder).
pub fn log_marginal_likelihood(
    params: &KernelParams,
    x: &DMatrix<f64>,
    z: &DVector<f64>,
) -> Result<f64> {
    params.validate()?;
    if x.nrows() != z.len() || x.nrows() == 0 {
        return Err(Error::InvalidInput(format!(
            "{} rows vs {} targets",
            x.nrows(),
            z.len()
        )));
    }
    lml_rows(params, &matrix_rows(x), z)
}

fn lml_rows(params: &KernelParams, rows: &[Vec<f64>], z: &DVector<f64>) -> Result<f64> {
    let (chol, _) = factorize(params, rows)?;
    let alpha = chol.solve(z);
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    let n = z.len() as f64;
    Ok(-0.5 * z.dot(&alpha) - log_det_half - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

/// Fits a surrogate to configurations of `space` with raw targets `y`
/// (internal minimization scale), using multi-start MLE.
pub fn fit(space: &Space, configs: &[Configuration], y: &[f64], seed: u64) -> Result<GpModel> {
    fit_with(space, configs, y, seed, &FitMode::default())
}

pub fn fit_with(
    space: &Space,
    configs: &[Configuration],
    y: &[f64],
    seed: u64,
    mode: &FitMode,
) -> Result<GpModel> {
    let rows: Vec<Vec<f64>> = configs
        .iter()
        .map(|c| space.to_unit(c))
        .collect::<Result<_>>()?;
    fit_unit(&rows, y, seed, mode)
}

/// Fits on points already expressed in the unit cube.
pub fn fit_unit(rows: &[Vec<f64>], y: &[f64], seed: u64, mode: &FitMode) -> Result<GpModel> {
    if rows.is_empty() || rows.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "{} inputs vs {} targets",
            rows.len(),
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite target".into()));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidInput("ragged or empty input rows".into()));
    }
    if rows
        .iter()
        .any(|r| r.iter().any(|v| !(0.0..=1.0).contains(v)))
    {
        return Err(Error::InvalidInput(
            "training inputs must lie in the unit cube".into(),
        ));
    }
    let n = rows.len();
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);

    let y_mean = y.iter().sum::<f64>() / n as f64;
    let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
    let y_std = if var.sqrt() < 1e-12 { 1.0 } else { var.sqrt() };
    let z = DVector::from_iterator(n, y.iter().map(|v| (v - y_mean) / y_std));

    let params = match mode {
        FitMode::Fixed(p) => {
            p.validate()?;
            if p.lengthscales.len() != d {
                return Err(Error::InvalidInput(format!(
                    "{} lengthscales for {d}-dimensional inputs",
                    p.lengthscales.len()
                )));
            }
            p.clone()
        }
        FitMode::Mle { random_starts } => estimate_params(rows, &z, seed, *random_starts)?,
    };

    let (chol, jitter) = factorize(&params, rows)?;
    let alpha = chol.solve(&z);
    let chol_l = chol.l();
    Ok(GpModel {
        rows: rows.to_vec(),
        x,
        z,
        y_mean,
        y_std,
        params,
        chol_l,
        alpha,
        jitter,
    })
}

/// Log-space parameter vector layout: `[ln l_1 .. ln l_d, ln sv, ln nv]`.
fn theta_to_params(theta: &[f64]) -> KernelParams {
    let d = theta.len() - 2;
    KernelParams {
        lengthscales: theta[..d].iter().map(|t| t.exp()).collect(),
        signal_variance: theta[d].exp(),
        noise_variance: theta[d + 1].exp(),
    }
}

fn estimate_params(
    rows: &[Vec<f64>],
    z: &DVector<f64>,
    seed: u64,
    random_starts: usize,
) -> Result<KernelParams> {
    let d = rows[0].len();
    let mut lower = vec![LENGTHSCALE_BOUNDS.0.ln(); d];
    lower.push(SIGNAL_VARIANCE_BOUNDS.0.ln());
    lower.push(NOISE_VARIANCE_BOUNDS.0.ln());
    let mut upper = vec![LENGTHSCALE_BOUNDS.1.ln(); d];
    upper.push(SIGNAL_VARIANCE_BOUNDS.1.ln());
    upper.push(NOISE_VARIANCE_BOUNDS.1.ln());

    let defaults = KernelParams::defaults(d);
    let mut starts = vec![{
        let mut t: Vec<f64> = defaults.lengthscales.iter().map(|l| l.ln()).collect();
        t.push(defaults.signal_variance.ln());
        t.push(defaults.noise_variance.ln());
        t
    }];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random_starts {
        starts.push(
            lower
                .iter()
                .zip(&upper)
                .map(|(&lo, &hi)| rng.random_range(lo..hi))
                .collect(),
        );
    }

    // negated LML; failed factorizations score as +inf so the line search
    // backs away from them
    let objective = |theta: &[f64]| -> f64 {
        let params = theta_to_params(theta);
        match lml_rows(&params, rows, z) {
            Ok(lml) if lml.is_finite() => -lml,
            _ => f64::INFINITY,
        }
    };
    let opts = LbfgsbOptions {
        max_iters: 60,
        grad_step: 1e-5,
        grad_tol: 1e-6,
        f_tol: 1e-9,
        ..Default::default()
    };

    let solutions = map_slice(&starts, |start| {
        lbfgsb::minimize(objective, start, &lower, &upper, &opts)
    });

    let mut best: Option<(f64, Vec<f64>)> = None;
    for sol in solutions.into_iter().flatten() {
        if sol.f.is_finite() {
            match &best {
                Some((bf, _)) if *bf <= sol.f => {}
                _ => best = Some((sol.f, sol.x)),
            }
        }
    }
    match best {
        Some((_, theta)) => Ok(theta_to_params(&theta)),
        // every start failed to even evaluate; fall back to defaults so the
        // final factorization reports the real failure
        None => Ok(defaults),
    }
}

impl GpModel {
    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn training_inputs(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn standardized_targets(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn standardization(&self) -> (f64, f64) {
        (self.y_mean, self.y_std)
    }

    /// Lower-triangular factor of the regularized Gram matrix.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol_l
    }

    /// Posterior mean and variance at a configuration, on the raw target scale.
    pub fn predict(&self, space: &Space, c: &Configuration) -> Result<(f64, f64)> {
        let u = space.to_unit(c)?;
        self.predict_unit(&u)
    }

    /// Posterior mean and variance at a unit-cube point, on the raw target
    /// scale. Variance is clamped at zero from below.
    pub fn predict_unit(&self, u: &[f64]) -> Result<(f64, f64)> {
        if u.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "expected {} coordinates, got {}",
                self.dim(),
                u.len()
            )));
        }
        let n = self.len();
        let k_star = DVector::from_fn(n, |i, _| matern52_unchecked(&self.rows[i], u, &self.params));
        let mu_z = k_star.dot(&self.alpha);
        let v = self
            .chol_l
            .solve_lower_triangular(&k_star)
            .ok_or_else(|| Error::NumericalFailure("triangular solve failed".into()))?;
        let k_star_star = self.params.signal_variance;
        let var_z = (k_star_star - v.dot(&v)).max(0.0);
        Ok((
            mu_z * self.y_std + self.y_mean,
            var_z * self.y_std * self.y_std,
        ))
    }
}
