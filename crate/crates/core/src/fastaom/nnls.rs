//! Lawson-Hanson non-negative least squares.

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

/// `argmin ‖M·w − b‖₂` subject to `w ≥ 0`.
pub fn nnls(m: &Mat, b: &Vector) -> Result<Vector> {
    let (k, n) = m.shape();
    if b.len() != k {
        return Err(Error::dimension("nnls: rows of b", k, b.len()));
    }
    if m.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Data("nnls: non-finite input".into()));
    }
    let scale = m.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-300);
    let tol = 10.0 * f64::EPSILON * scale * scale * k.max(n) as f64 * b.amax().max(1.0);
    let max_iter = 3 * n + 30;
    let mut x = Vector::zeros(n);
    let mut passive = vec![false; n];
    let mut iterations = 0;
    loop {
        let grad = m.tr_mul(&(b - m * &x));
        let candidate = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&a, &c| grad[a].total_cmp(&grad[c]));
        let Some(j) = candidate.filter(|&j| grad[j] > tol) else {
            return Ok(x);
        };
        passive[j] = true;
        let mut entering = true;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::NoConvergence {
                    context: "nnls".into(),
                    iterations,
                    component: None,
                });
            }
            let z = passive_solve(m, b, &passive);
            if entering && z[j] <= 0.0 {
                // Rounding made the entering column useless; x is optimal.
                passive[j] = false;
                return Ok(x);
            }
            entering = false;
            if (0..n).all(|i| !passive[i] || z[i] > 0.0) {
                x = z;
                break;
            }
            // Step back towards x until the first passive entry hits zero.
            let mut step = 1.0_f64;
            for i in 0..n {
                if passive[i] && z[i] <= 0.0 {
                    step = step.min(x[i] / (x[i] - z[i]));
                }
            }
            for i in 0..n {
                x[i] += step * (z[i] - x[i]);
            }
            let floor = 1e-14 * x.amax();
            for i in 0..n {
                if passive[i] && x[i] <= floor {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
        }
    }
}

/// Unconstrained least squares over the passive columns, zero elsewhere.
fn passive_solve(m: &Mat, b: &Vector, passive: &[bool]) -> Vector {
    let cols: Vec<usize> = (0..passive.len()).filter(|&i| passive[i]).collect();
    let sub = Mat::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])]);
    let (pinv, _) = crate::linalg::pinv(&sub);
    let sol = pinv * b;
    let mut z = Vector::zeros(passive.len());
    for (j, &c) in cols.iter().enumerate() {
        z[c] = sol[j];
    }
    z
}

/// Largest violation of the optimality conditions at `w`, relative to
/// `‖M‖²·‖b‖`.
pub fn kkt_residual(m: &Mat, b: &Vector, w: &Vector) -> f64 {
    let grad = m.tr_mul(&(b - m * w));
    let mut worst = 0.0_f64;
    for i in 0..w.len() {
        worst = worst.max((-w[i]).max(0.0));
        if w[i] > 0.0 {
            worst = worst.max(grad[i].abs());
        } else {
            worst = worst.max(grad[i].max(0.0));
        }
    }
    let scale = m.norm().powi(2) * b.norm();
    if scale > 0.0 {
        worst / scale
    } else {
        worst
    }
}
