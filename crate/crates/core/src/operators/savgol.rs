//! Savitzky-Golay least-squares convolution rows.
//!
//! Every output channel uses a full window of `window` input channels. In
//! the interior the window is centred; near the edges it is shifted inside
//! the grid, so the fitted polynomial is evaluated off-centre. Each row is
//! therefore an exact least-squares polynomial fit and polynomials of degree
//! `<= order` are reproduced on every channel.

use nalgebra::{DMatrix, DVector};

use super::linop::{BandRow, Banded};

/// Weights `c` such that `c · y[start..start+window]` is the `deriv`-th
/// derivative, at window position `target`, of the degree-`order`
/// least-squares polynomial through the window. Unit channel spacing.
pub(crate) fn fit_row(window: usize, order: usize, deriv: usize, target: usize) -> Vec<f64> {
    debug_assert!(order < window && deriv <= order);
    let half = ((window - 1) / 2).max(1) as f64;
    // Scaled abscissae keep the normal equations well conditioned.
    let u: Vec<f64> = (0..window)
        .map(|k| (k as f64 - target as f64) / half)
        .collect();
    let cols = order + 1;
    let vander = DMatrix::from_fn(window, cols, |k, j| u[k].powi(j as i32));
    let gram = vander.transpose() * &vander;
    let mut unit = DVector::zeros(cols);
    unit[deriv] = 1.0;
    let g = gram
        .cholesky()
        .expect("Vandermonde Gram matrix is positive definite for distinct abscissae")
        .solve(&unit);
    let factorial: f64 = (1..=deriv).map(|k| k as f64).product();
    let scale = factorial / half.powi(deriv as i32);
    (&vander * g).iter().map(|c| c * scale).collect()
}

pub(crate) fn banded(p: usize, window: usize, order: usize, deriv: usize) -> Banded {
    let half = (window - 1) / 2;
    let centre = fit_row(window, order, deriv, half);
    let rows = (0..p)
        .map(|i| {
            let start = i.saturating_sub(half).min(p - window);
            let target = i - start;
            let coeffs = if target == half {
                centre.clone()
            } else {
                fit_row(window, order, deriv, target)
            };
            BandRow { offset: start, coeffs }
        })
        .collect();
    Banded::new(p, rows)
}
