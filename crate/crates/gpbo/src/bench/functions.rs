//! Standard synthetic test functions on their canonical domains.

use std::f64::consts::PI;

/// Branin-Hoo on `[-5, 10] x [0, 15]`; global minimum 0.397887 at three points.
pub(crate) fn branin(x: &[f64]) -> f64 {
    let (x1, x2) = (x[0], x[1]);
    let a = 1.0;
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let r = 6.0;
    let s = 10.0;
    let t = 1.0 / (8.0 * PI);
    a * (x2 - b * x1 * x1 + c * x1 - r).powi(2) + s * (1.0 - t) * x1.cos() + s
}

/// Rosenbrock valley on `[-2.048, 2.048]^d`; global minimum 0 at (1, ..., 1).
pub(crate) fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum()
}

/// Ackley on `[-32.768, 32.768]^d`; global minimum 0 at the origin.
pub(crate) fn ackley(x: &[f64]) -> f64 {
    let d = x.len() as f64;
    let sum_sq = x.iter().map(|v| v * v).sum::<f64>() / d;
    let sum_cos = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / d;
    -20.0 * (-0.2 * sum_sq.sqrt()).exp() - sum_cos.exp() + 20.0 + std::f64::consts::E
}
