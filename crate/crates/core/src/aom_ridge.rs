//! Dual ridge regression with operator-induced kernels.
//!
//! An operator `A` enters ridge only through `K = Xc·AᵀA·Xcᵀ`. Coefficients
//! come back to the original grid as `β = AᵀA·Xcᵀ·C` with
//! `C = (K + αI)⁻¹·Yc`.

use nalgebra::linalg::SymmetricEigen;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::operators::{LinOp, OperatorBank, OperatorSpec};
use crate::par;
use crate::pls::{center, predict_linear, CenteredData};
use crate::selection::{Aggregation, SelectionTable};
use crate::stats::{self, Fold, FoldPlan};

pub const DEFAULT_ALPHA_COUNT: usize = 50;
pub const DEFAULT_ALPHA_MIN: f64 = 1e-6;
pub const DEFAULT_ALPHA_MAX: f64 = 1e3;

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

pub fn default_alpha_grid() -> Vec<f64> {
    log_grid(DEFAULT_ALPHA_MIN, DEFAULT_ALPHA_MAX, DEFAULT_ALPHA_COUNT)
}

/// `K_b = (Xc·Aᵀ)(Xc·Aᵀ)ᵀ`.
pub fn operator_kernel(d: &CenteredData, op: &LinOp) -> Result<Mat> {
    let w = op.apply_rows(&d.xc)?;
    Ok(&w * w.transpose())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::config("alpha", format!("must be positive and finite, got {alpha}")));
    }
    Ok(())
}

/// Solve `(K + αI)·C = Yc` by Cholesky.
pub fn dual_solve(k: &Mat, alpha: f64, yc: &Mat) -> Result<Mat> {
    check_alpha(alpha)?;
    if k.nrows() != k.ncols() || k.nrows() != yc.nrows() {
        return Err(Error::dimension("dual_solve: kernel rows", yc.nrows(), k.nrows()));
    }
    let mut reg = k.clone();
    for i in 0..reg.nrows() {
        reg[(i, i)] += alpha;
    }
    let chol = reg.cholesky().ok_or_else(|| {
        let diag_min = (0..k.nrows()).map(|i| k[(i, i)]).fold(f64::INFINITY, f64::min);
        Error::Numeric(format!(
            "Cholesky of K + {alpha:e}·I failed (n = {}, min diag(K) = {diag_min:e}, max|K| = {:e})",
            k.nrows(),
            linalg::max_abs(k)
        ))
    })?;
    Ok(chol.solve(yc))
}

/// Eigendecomposition of a training kernel, reused across an α grid.
#[derive(Debug, Clone)]
pub struct KernelEigen {
    pub values: Vector,
    pub vectors: Mat,
}

impl KernelEigen {
    pub fn new(k: &Mat) -> Self {
        let SymmetricEigen {
            eigenvalues,
            eigenvectors,
        } = k.clone().symmetric_eigen();
        KernelEigen {
            values: eigenvalues,
            vectors: eigenvectors,
        }
    }

    /// `Uᵀ·Y`, computed once per right-hand side.
    pub fn project(&self, y: &Mat) -> Mat {
        self.vectors.tr_mul(y)
    }

    /// `C = U·diag(1/(λ+α))·(UᵀY)` from a projected right-hand side.
    pub fn solve_projected(&self, uty: &Mat, alpha: f64) -> Mat {
        let mut scaled = uty.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row /= self.values[i] + alpha;
        }
        &self.vectors * scaled
    }

    pub fn solve(&self, y: &Mat, alpha: f64) -> Result<Mat> {
        check_alpha(alpha)?;
        Ok(self.solve_projected(&self.project(y), alpha))
    }
}

/// `β = Aᵀ·(A·(Xcᵀ·C))`.
pub fn ridge_coefficients(op: &LinOp, d: &CenteredData, c: &Mat) -> Result<Mat> {
    if c.nrows() != d.n() {
        return Err(Error::dimension("ridge_coefficients: dual rows", d.n(), c.nrows()));
    }
    let xtc = d.xc.tr_mul(c);
    op.apply_adjoint(&op.apply_forward(&xtc)?)
}

/// `K = Σ s_b²·K_b` over a list of operators.
#[derive(Debug, Clone)]
pub struct MixtureKernel {
    pub ops: Vec<LinOp>,
    pub scales: Vec<f64>,
    pub kernel: Mat,
}

impl MixtureKernel {
    /// With `scales = None` each block is scaled by `1/rms(Xc·A_bᵀ)`, so all
    /// blocks carry the same Frobenius norm.
    pub fn new(d: &CenteredData, ops: &[LinOp], scales: Option<&[f64]>) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::config("scales", "empty operator list"));
        }
        if let Some(s) = scales {
            if s.len() != ops.len() {
                return Err(Error::dimension("mixture scales", ops.len(), s.len()));
            }
            if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::config("scales", "must be finite and >= 0"));
            }
            if s.iter().all(|v| *v == 0.0) {
                return Err(Error::config("scales", "all scales are zero"));
            }
        }
        let blocks = par::map_slice(ops, |op| op.apply_rows(&d.xc));
        let n = d.n();
        let mut kernel = Mat::zeros(n, n);
        let mut used = Vec::with_capacity(ops.len());
        for (b, w) in blocks.into_iter().enumerate() {
            let w = w?;
            let s = match scales {
                Some(s) => s[b],
                None => {
                    let rms = w.norm() / ((w.len().max(1)) as f64).sqrt();
                    if rms > 0.0 {
                        1.0 / rms
                    } else {
                        0.0
                    }
                }
            };
            if s != 0.0 {
                kernel.gemm(s * s, &w, &w.transpose(), 1.0);
            }
            used.push(s);
        }
        if used.iter().all(|v| *v == 0.0) {
            return Err(Error::config("scales", "every block is zero"));
        }
        Ok(MixtureKernel {
            ops: ops.to_vec(),
            scales: used,
            kernel,
        })
    }

    /// `β = Σ_b s_b²·A_bᵀA_b·Xcᵀ·C`.
    pub fn coefficients(&self, d: &CenteredData, c: &Mat) -> Result<Mat> {
        let xtc = d.xc.tr_mul(c);
        let mut beta = Mat::zeros(d.p(), c.ncols());
        for (op, s) in self.ops.iter().zip(&self.scales) {
            if *s != 0.0 {
                beta += op.apply_adjoint(&op.apply_forward(&xtc)?)? * (s * s);
            }
        }
        Ok(beta)
    }
}

/// A ridge calibration on the original grid.
#[derive(Debug, Clone)]
pub struct RidgeFit {
    pub coefficients: Mat,
    pub alpha: f64,
    /// Bank index of the selected operator; `None` for mixtures.
    pub operator_id: Option<usize>,
    pub operators: Vec<OperatorSpec>,
    /// Block scales `s_b`; a single `1.0` for a plain operator fit.
    pub scales: Vec<f64>,
    /// Dual variables `C`.
    pub dual: Mat,
    pub x_mean: Vector,
    pub y_mean: Vector,
    pub selection: Option<SelectionTable>,
}

impl RidgeFit {
    pub fn predict(&self, xnew: &Mat) -> Result<Mat> {
        predict_linear(&self.coefficients, &self.x_mean, &self.y_mean, xnew)
    }

    /// Recompute `β` from the stored dual variables.
    pub fn coefficients_from_dual(&self, d: &CenteredData) -> Result<Mat> {
        let ops = self
            .operators
            .iter()
            .map(|s| crate::operators::build_operator(s, d.p()))
            .collect::<Result<Vec<_>>>()?;
        let xtc = d.xc.tr_mul(&self.dual);
        let mut beta = Mat::zeros(d.p(), self.dual.ncols());
        for (op, s) in ops.iter().zip(&self.scales) {
            beta += op.apply_adjoint(&op.apply_forward(&xtc)?)? * (s * s);
        }
        Ok(beta)
    }
}

/// Dual ridge with one operator at a fixed α.
pub fn fit_ridge_operator(d: &CenteredData, op: &LinOp, alpha: f64) -> Result<RidgeFit> {
    let k = operator_kernel(d, op)?;
    let c = dual_solve(&k, alpha, &d.yc)?;
    Ok(RidgeFit {
        coefficients: ridge_coefficients(op, d, &c)?,
        alpha,
        operator_id: None,
        operators: vec![op.spec().clone()],
        scales: vec![1.0],
        dual: c,
        x_mean: d.x_mean.clone(),
        y_mean: d.y_mean.clone(),
        selection: None,
    })
}

/// Dual ridge on a weighted operator mixture at a fixed α.
pub fn fit_ridge_mixture(
    d: &CenteredData,
    ops: &[LinOp],
    scales: Option<&[f64]>,
    alpha: f64,
) -> Result<RidgeFit> {
    let mix = MixtureKernel::new(d, ops, scales)?;
    let c = dual_solve(&mix.kernel, alpha, &d.yc)?;
    Ok(RidgeFit {
        coefficients: mix.coefficients(d, &c)?,
        alpha,
        operator_id: None,
        operators: ops.iter().map(|o| o.spec().clone()).collect(),
        scales: mix.scales,
        dual: c,
        x_mean: d.x_mean.clone(),
        y_mean: d.y_mean.clone(),
        selection: None,
    })
}

#[derive(Debug, Clone)]
pub struct AomRidgeConfig {
    pub bank: OperatorBank,
    pub alphas: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub aggregation: Aggregation,
}

impl AomRidgeConfig {
    /// Defaults: 50 log-spaced α over `[1e-6, 1e3]`, 5 folds, seed 0.
    pub fn new(bank: OperatorBank) -> Self {
        AomRidgeConfig {
            bank,
            alphas: default_alpha_grid(),
            folds: 5,
            seed: 0,
            aggregation: Aggregation::Mean,
        }
    }

    fn validate(&self, n: usize, p: usize) -> Result<()> {
        if self.bank.is_empty() || !self.bank.ops()[0].is_identity() {
            return Err(Error::config("bank", "must be nonempty with the identity at index 0"));
        }
        if self.bank.p() != p {
            return Err(Error::dimension("bank channel count", p, self.bank.p()));
        }
        if self.alphas.is_empty() {
            return Err(Error::config("alphas", "empty grid"));
        }
        for &a in &self.alphas {
            check_alpha(a)?;
        }
        if self.folds < 2 || n < self.folds {
            return Err(Error::config(
                "folds",
                format!("need 2 <= folds <= n, got {} folds for {n} samples", self.folds),
            ));
        }
        Ok(())
    }
}

/// Held-out RMSE over the α grid for one (fold, operator).
fn fold_sweep(d: &CenteredData, fold: &Fold, op: &LinOp, alphas: &[f64]) -> Result<Vec<Option<f64>>> {
    let train = center(
        &linalg::select_rows(&d.xc, &fold.train),
        &linalg::select_rows(&d.yc, &fold.train),
    )?;
    let x_val = linalg::subtract_row(&linalg::select_rows(&d.xc, &fold.validation), &train.x_mean);
    let y_val = linalg::select_rows(&d.yc, &fold.validation);
    let w_tr = op.apply_rows(&train.xc)?;
    let w_val = op.apply_rows(&x_val)?;
    let k_tr = &w_tr * w_tr.transpose();
    let k_cross = &w_val * w_tr.transpose();
    let eig = KernelEigen::new(&k_tr);
    let uty = eig.project(&train.yc);
    let cross_u = &k_cross * &eig.vectors;
    Ok(alphas
        .iter()
        .map(|&alpha| {
            let mut scaled = uty.clone();
            for (i, mut row) in scaled.row_iter_mut().enumerate() {
                row /= eig.values[i] + alpha;
            }
            let mut pred = &cross_u * scaled;
            for (j, mut col) in pred.column_iter_mut().enumerate() {
                col.add_scalar_mut(train.y_mean[j]);
            }
            let rmse = ((pred - &y_val).norm_squared() / y_val.len() as f64).sqrt();
            rmse.is_finite().then_some(rmse)
        })
        .collect())
}

/// CV grid over (operator, α) on an explicit fold plan.
pub fn select_ridge_with_plan(
    d: &CenteredData,
    bank: &OperatorBank,
    alphas: &[f64],
    plan: &FoldPlan,
    aggregation: Aggregation,
) -> Result<SelectionTable> {
    let n_ops = bank.len();
    let jobs: Vec<(usize, usize)> = (0..plan.len())
        .flat_map(|f| (0..n_ops).map(move |b| (f, b)))
        .collect();
    let results = par::map_slice(&jobs, |&(f, b)| fold_sweep(d, &plan.folds[f], &bank.ops()[b], alphas));
    let mut per_fold = vec![Vec::with_capacity(n_ops); plan.len()];
    for ((f, _), r) in jobs.iter().zip(results) {
        per_fold[*f].push(r?);
    }
    Ok(SelectionTable::assemble(
        bank.names().to_vec(),
        "alpha",
        alphas.to_vec(),
        "cv_rmse",
        false,
        per_fold,
        aggregation,
    ))
}

fn refit(d: &CenteredData, bank: &OperatorBank, table: SelectionTable) -> Result<RidgeFit> {
    let (b, ai) = table.chosen;
    let mut fit = fit_ridge_operator(d, &bank.ops()[b], table.params[ai])?;
    fit.operator_id = Some(b);
    fit.selection = Some(table);
    Ok(fit)
}

/// Select `(operator, α)` by cross-validated RMSE and refit on all rows.
pub fn fit_aom_ridge(x: &Mat, y: &Mat, cfg: &AomRidgeConfig) -> Result<RidgeFit> {
    let d = center(x, y)?;
    cfg.validate(d.n(), d.p())?;
    let plan = stats::kfold_plan(d.n(), cfg.folds, cfg.seed, None)?;
    let table = select_ridge_with_plan(&d, &cfg.bank, &cfg.alphas, &plan, cfg.aggregation)?;
    refit(&d, &cfg.bank, table)
}

pub fn fit_aom_ridge_with_plan(x: &Mat, y: &Mat, cfg: &AomRidgeConfig, plan: &FoldPlan) -> Result<RidgeFit> {
    let d = center(x, y)?;
    cfg.validate(d.n(), d.p())?;
    let table = select_ridge_with_plan(&d, &cfg.bank, &cfg.alphas, plan, cfg.aggregation)?;
    refit(&d, &cfg.bank, table)
}
