//! PLS on a folded operator: centering, cross-covariance, covariance-space
//! SIMPLS, the NIPALS-adjoint validation engine, original-grid coefficient
//! recovery and prediction.
//!
//! Both engines work with the operator `A` only through `A·M` and `Aᵀ·M`.
//! The transformed spectra `X·Aᵀ` are never formed, and the returned
//! coefficients act on raw spectra.

use crate::selection::SelectionTable;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::operators::{LinOp, OperatorSpec};

/// Scores with a smaller norm than this (relative to the first) end extraction.
const RANK_TOL: f64 = 1e-10;
const NIPALS_TOL: f64 = 1e-12;
const NIPALS_MAX_ITER: usize = 500;

/// Column-centred spectra and responses with the removed means.
#[derive(Debug, Clone)]
pub struct CenteredData {
    pub xc: Mat,
    pub yc: Mat,
    pub x_mean: Vector,
    pub y_mean: Vector,
}

impl CenteredData {
    pub fn n(&self) -> usize {
        self.xc.nrows()
    }

    pub fn p(&self) -> usize {
        self.xc.ncols()
    }

    pub fn q(&self) -> usize {
        self.yc.ncols()
    }
}

pub fn check_finite(m: &Mat) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// Remove column means from `x` (`n×p`) and `y` (`n×q`).
pub fn center(x: &Mat, y: &Mat) -> Result<CenteredData> {
    if x.nrows() != y.nrows() {
        return Err(Error::dimension("center: rows of Y", x.nrows(), y.nrows()));
    }
    if x.nrows() < 2 {
        return Err(Error::Data(format!("need at least 2 samples, got {}", x.nrows())));
    }
    check_finite(x)?;
    check_finite(y)?;
    let x_mean = linalg::column_means(x);
    let y_mean = linalg::column_means(y);
    Ok(CenteredData {
        xc: linalg::subtract_row(x, &x_mean),
        yc: linalg::subtract_row(y, &y_mean),
        x_mean,
        y_mean,
    })
}

/// `S = Xcᵀ·Yc`, the `p×q` cross-covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCov {
    pub s: Mat,
}

pub fn cross_covariance(d: &CenteredData) -> CrossCov {
    CrossCov {
        s: d.xc.tr_mul(&d.yc),
    }
}

/// A fitted PLS calibration on the original wavelength grid.
///
/// `weights` are the original-grid directions `z_a = Aᵀ r_a`, and
/// `score_norms[a] = ‖Xc·z_a‖`. Loadings are `P = Xcᵀ T diag(‖t‖⁻²)` and
/// `Q = Ycᵀ T diag(‖t‖⁻²)` with `T = Xc·Z`.
#[derive(Debug, Clone)]
pub struct PlsFit {
    pub weights: Mat,
    pub x_loadings: Mat,
    pub y_loadings: Mat,
    pub score_norms: Vec<f64>,
    pub coefficients: Mat,
    pub x_mean: Vector,
    pub y_mean: Vector,
    pub operator_id: usize,
    pub operator: OperatorSpec,
    pub n_components: usize,
    pub requested_components: usize,
    /// Set when the cross-covariance was zero and `B = 0` was returned.
    pub degenerate: bool,
    /// Condition number of `PᵀZ` at coefficient recovery.
    pub condition: f64,
    pub selection: Option<SelectionTable>,
}

impl PlsFit {
    /// Coefficients using only the first `k` components.
    pub fn prefix_coefficients(&self, k: usize) -> Mat {
        let k = k.min(self.n_components);
        if k == 0 {
            return Mat::zeros(self.weights.nrows(), self.y_loadings.nrows());
        }
        recover_coefficients(
            &self.weights.columns(0, k).into_owned(),
            &self.x_loadings.columns(0, k).into_owned(),
            &self.y_loadings.columns(0, k).into_owned(),
        )
        .0
    }

    pub fn predict(&self, xnew: &Mat) -> Result<Mat> {
        predict_linear(&self.coefficients, &self.x_mean, &self.y_mean, xnew)
    }
}

/// `B = Z·(PᵀZ)⁺·Qᵀ`; also returns the condition number of `PᵀZ`.
pub fn recover_coefficients(z: &Mat, p: &Mat, q: &Mat) -> (Mat, f64) {
    let (inv, cond) = linalg::pinv(&p.tr_mul(z));
    (z * inv * q.transpose(), cond)
}

/// `ŷ = (x − x_mean)·B + y_mean` on raw spectra.
pub fn predict_linear(b: &Mat, x_mean: &Vector, y_mean: &Vector, xnew: &Mat) -> Result<Mat> {
    if xnew.ncols() != b.nrows() {
        return Err(Error::dimension("predict: columns", b.nrows(), xnew.ncols()));
    }
    check_finite(xnew)?;
    let centred = linalg::subtract_row(xnew, x_mean);
    Ok(linalg::add_row(&(centred * b), y_mean))
}

fn check_components(d: &CenteredData, op: &LinOp, k: usize) -> Result<()> {
    if op.p() != d.p() {
        return Err(Error::dimension("operator channel count", d.p(), op.p()));
    }
    let cap = (d.n() - 1).min(d.p());
    if k == 0 || k > cap {
        return Err(Error::config(
            "n_components",
            format!("must be in 1..={cap}, got {k}"),
        ));
    }
    Ok(())
}

struct Blocks {
    z: Vec<Vector>,
    p: Vec<Vector>,
    q: Vec<Vector>,
    norms: Vec<f64>,
}

impl Blocks {
    fn new() -> Self {
        Blocks {
            z: Vec::new(),
            p: Vec::new(),
            q: Vec::new(),
            norms: Vec::new(),
        }
    }

    fn into_fit(self, d: &CenteredData, op: &LinOp, operator_id: usize, k: usize, degenerate: bool) -> PlsFit {
        let stack = |cols: &[Vector], rows: usize| {
            if cols.is_empty() {
                Mat::zeros(rows, 0)
            } else {
                Mat::from_columns(cols)
            }
        };
        let z = stack(&self.z, d.p());
        let p = stack(&self.p, d.p());
        let q = stack(&self.q, d.q());
        let (b, cond) = if self.z.is_empty() {
            (Mat::zeros(d.p(), d.q()), 1.0)
        } else {
            recover_coefficients(&z, &p, &q)
        };
        PlsFit {
            n_components: self.z.len(),
            weights: z,
            x_loadings: p,
            y_loadings: q,
            score_norms: self.norms,
            coefficients: b,
            x_mean: d.x_mean.clone(),
            y_mean: d.y_mean.clone(),
            operator_id,
            operator: op.spec().clone(),
            requested_components: k,
            degenerate,
            condition: cond,
            selection: None,
        }
    }
}

/// Covariance-space SIMPLS under operator `op`.
///
/// Works on `S_b = A·S`. Each component takes the leading left singular
/// vector `r` of the deflated `S_b`, maps it to the original grid with
/// `z = Aᵀr`, and deflates `S_b` against the transformed-space loading
/// `A·Xcᵀt`, which is exactly the loading SIMPLS would see on `X·Aᵀ`.
/// Extraction stops early when the remaining covariance or the new score
/// is numerically zero; `n_components` records what was achieved.
pub fn simpls_extract(s0: &CrossCov, d: &CenteredData, op: &LinOp, k: usize) -> Result<PlsFit> {
    simpls_extract_with_id(s0, d, op, 0, k)
}

pub(crate) fn simpls_extract_with_id(
    s0: &CrossCov,
    d: &CenteredData,
    op: &LinOp,
    operator_id: usize,
    k: usize,
) -> Result<PlsFit> {
    check_components(d, op, k)?;
    if s0.s.nrows() != d.p() || s0.s.ncols() != d.q() {
        return Err(Error::dimension("cross-covariance rows", d.p(), s0.s.nrows()));
    }
    let mut sb = op.apply_forward(&s0.s)?;
    let mut blocks = Blocks::new();
    let initial = sb.norm();
    if initial == 0.0 {
        return Ok(blocks.into_fit(d, op, operator_id, k, true));
    }
    let mut basis: Vec<Vector> = Vec::with_capacity(k);
    let mut first_norm = None;
    for _ in 0..k {
        let Some((r, sigma)) = linalg::leading_left_singular(&sb) else {
            break;
        };
        if sigma <= RANK_TOL * initial {
            break;
        }
        let z = Vector::from_vec(op.adjoint_vec(r.as_slice())?);
        let t = &d.xc * &z;
        let tn = t.norm();
        let reference = *first_norm.get_or_insert(tn);
        if tn <= RANK_TOL * reference || tn == 0.0 {
            break;
        }
        let xt = d.xc.tr_mul(&t);
        let inv2 = 1.0 / (tn * tn);
        let p_load = &xt * inv2;
        let q_load = d.yc.tr_mul(&t) * inv2;

        let mut v = Vector::from_vec(op.forward_vec(xt.as_slice())?);
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let vn = v.norm();
        blocks.z.push(z);
        blocks.p.push(p_load);
        blocks.q.push(q_load);
        blocks.norms.push(tn);
        if vn == 0.0 {
            break;
        }
        v /= vn;
        let proj = v.transpose() * &sb;
        sb -= &v * proj;
        basis.push(v);
    }
    Ok(blocks.into_fit(d, op, operator_id, k, false))
}

enum Inner {
    Converged(Vector, Vector, Vector),
    Exhausted,
    NotConverged,
}

/// NIPALS with every operator product expressed as `A·v` or `Aᵀ·v` on
/// residual vectors; the transformed spectra are never formed. Deflation
/// is carried out on the original-grid residual `E`, which commutes with
/// the operator because `(E − t·pᵀ)·Aᵀ = E·Aᵀ − t·(A·p)ᵀ`.
///
/// For a single response it coincides with [`simpls_extract`]; for several
/// responses it is the usual PLS2 NIPALS, which differs from SIMPLS.
pub fn nipals_adjoint_extract(d: &CenteredData, op: &LinOp, k: usize) -> Result<PlsFit> {
    check_components(d, op, k)?;
    let mut e = d.xc.clone();
    let mut f = d.yc.clone();
    let mut blocks = Blocks::new();
    let mut first_norm = None;
    if d.xc.tr_mul(&d.yc).norm() == 0.0 {
        return Ok(blocks.into_fit(d, op, 0, k, true));
    }
    for comp in 0..k {
        let (idx, _) = f
            .column_iter()
            .enumerate()
            .map(|(j, c)| (j, c.norm_squared()))
            .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
        let mut u = f.column(idx).into_owned();
        if u.norm() == 0.0 {
            break;
        }
        let mut t_prev: Option<Vector> = None;
        let mut outcome = Inner::NotConverged;
        for _ in 0..NIPALS_MAX_ITER {
            let mut wb = Vector::from_vec(op.forward_vec(e.tr_mul(&u).as_slice())?);
            let wn = wb.norm();
            if wn == 0.0 {
                outcome = Inner::Exhausted;
                break;
            }
            wb /= wn;
            let z = Vector::from_vec(op.adjoint_vec(wb.as_slice())?);
            let t = &e * &z;
            let tt = t.norm_squared();
            if tt == 0.0 {
                outcome = Inner::Exhausted;
                break;
            }
            let c = f.tr_mul(&t) / tt;
            let done = f.ncols() == 1
                || t_prev
                    .as_ref()
                    .is_some_and(|tp| (&t - tp).norm() <= NIPALS_TOL * t.norm());
            if done {
                outcome = Inner::Converged(z, t, c);
                break;
            }
            u = &f * &c / c.norm_squared();
            t_prev = Some(t);
        }
        let (z, t, c) = match outcome {
            Inner::Converged(z, t, c) => (z, t, c),
            Inner::Exhausted => break,
            Inner::NotConverged => {
                return Err(Error::NoConvergence {
                    context: "nipals_adjoint_extract".into(),
                    iterations: NIPALS_MAX_ITER,
                    component: Some(comp),
                })
            }
        };
        let tn = t.norm();
        let reference = *first_norm.get_or_insert(tn);
        if tn <= RANK_TOL * reference {
            break;
        }
        let p_load = e.tr_mul(&t) / (tn * tn);
        e -= &t * p_load.transpose();
        f -= &t * c.transpose();
        blocks.z.push(z);
        blocks.p.push(p_load);
        blocks.q.push(c);
        blocks.norms.push(tn);
    }
    Ok(blocks.into_fit(d, op, 0, k, false))
}
