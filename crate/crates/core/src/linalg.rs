//! Small dense helpers shared by the engines.

use nalgebra::{DMatrix, DVector};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Singular values below `PINV_CUTOFF × σ_max` are treated as zero.
pub const PINV_CUTOFF: f64 = 1e-10;

/// Moore-Penrose pseudoinverse with relative cutoff, plus the condition
/// number of the retained part.
pub fn pinv(m: &Mat) -> (Mat, f64) {
    if m.is_empty() {
        return (Mat::zeros(m.ncols(), m.nrows()), 1.0);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax <= 0.0 {
        return (Mat::zeros(m.ncols(), m.nrows()), f64::INFINITY);
    }
    let cut = PINV_CUTOFF * smax;
    let mut smin = smax;
    let inv = svd.singular_values.map(|s| {
        if s > cut {
            smin = smin.min(s);
            1.0 / s
        } else {
            0.0
        }
    });
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let pinv = vt.transpose() * Mat::from_diagonal(&inv) * u.transpose();
    (pinv, smax / smin)
}

/// Leading left singular vector and value of a thin `p×q` matrix, from the
/// symmetric `q×q` eigenproblem of `SᵀS`. `None` when `S` is zero.
pub fn leading_left_singular(s: &Mat) -> Option<(Vector, f64)> {
    let norm = s.norm();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    if s.ncols() == 1 {
        return Some((s.column(0) / norm, norm));
    }
    let gram = s.transpose() * s;
    let eig = gram.symmetric_eigen();
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let r = s * eig.eigenvectors.column(idx);
    let sigma = r.norm();
    if sigma == 0.0 {
        return None;
    }
    Some((r / sigma, sigma))
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// `max|a − b| / max(max|b|, floor)`.
pub fn rel_max_diff(a: &Mat, b: &Mat, floor: f64) -> f64 {
    max_abs(&(a - b)) / max_abs(b).max(floor)
}

/// Rows of `m` selected by `idx`, in that order.
pub fn select_rows(m: &Mat, idx: &[usize]) -> Mat {
    Mat::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

/// Column means.
pub fn column_means(m: &Mat) -> Vector {
    let n = m.nrows().max(1) as f64;
    Vector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

/// `m` with `mean` subtracted from every row.
pub fn subtract_row(m: &Mat, mean: &Vector) -> Mat {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    out
}

/// `m` with `mean` added to every row.
pub fn add_row(m: &Mat, mean: &Vector) -> Mat {
    subtract_row(m, &(-mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_rank_deficient() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (p, _) = pinv(&m);
        let expected = Mat::from_element(2, 2, 0.25);
        assert!(max_abs(&(p - expected)) < 1e-14);
    }

    #[test]
    fn leading_vector_of_diagonal() {
        let s = Mat::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 3.0, 0.0, 0.0]);
        let (r, sigma) = leading_left_singular(&s).unwrap();
        assert!((sigma - 3.0).abs() < 1e-12);
        assert!((r[1].abs() - 1.0).abs() < 1e-12);
        assert!(leading_left_singular(&Mat::zeros(3, 2)).is_none());
    }
}
