//! Materialised reference implementations and the equivalence suite.
//!
//! Everything here works on explicitly transformed spectra `X·Aᵀ` with
//! textbook algorithms, so it shares no code path with the folded engines
//! beyond dense matrix arithmetic.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aom_ridge::fit_ridge_operator;
use crate::error::{Error, Result};
use crate::fastaom::enumerate_chains;
use crate::fastaom::chain_operator;
use crate::linalg::{self, Mat, Vector};
use crate::operators::{build_operator, compact_bank, OperatorBank, OperatorSpec};
use crate::par;
use crate::pls::{self, center, cross_covariance};
use crate::stats::{self, FoldPlan};
use crate::synthetic::{smooth_spectra, SpectraConfig};

/// Dense SIMPLS fit in the space of the matrix it was given.
#[derive(Debug, Clone)]
pub struct ReferencePls {
    /// Weights with `T = Xc·R` orthonormal.
    pub r: Mat,
    pub q: Mat,
    pub x_mean: Vector,
    pub y_mean: Vector,
}

impl ReferencePls {
    pub fn n_components(&self) -> usize {
        self.r.ncols()
    }

    pub fn coefficients(&self, k: usize) -> Mat {
        let k = k.min(self.r.ncols());
        self.r.columns(0, k) * self.q.columns(0, k).transpose()
    }

    pub fn predict(&self, x: &Mat, k: usize) -> Result<Mat> {
        pls::predict_linear(&self.coefficients(k), &self.x_mean, &self.y_mean, x)
    }
}

/// de Jong's SIMPLS on a materialised matrix.
pub fn reference_pls(xt: &Mat, y: &Mat, k: usize) -> Result<ReferencePls> {
    let d = center(xt, y)?;
    let cap = (d.n() - 1).min(d.p());
    if k == 0 || k > cap {
        return Err(Error::config("n_components", format!("must be in 1..={cap}, got {k}")));
    }
    let mut s = d.xc.tr_mul(&d.yc);
    let mut r_cols: Vec<Vector> = Vec::new();
    let mut q_cols: Vec<Vector> = Vec::new();
    let mut v_cols: Vec<Vector> = Vec::new();
    let mut first_sigma = None;
    let mut first_t = None;
    for _ in 0..k {
        let svd = s.clone().svd(true, false);
        let (idx, sigma) = svd
            .singular_values
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |a, (i, v)| if v > a.1 { (i, v) } else { a });
        let s0 = *first_sigma.get_or_insert(sigma);
        if !(sigma > 1e-10 * s0) {
            break;
        }
        let mut r: Vector = svd.u.expect("u requested").column(idx).into_owned();
        let mut t = &d.xc * &r;
        let tn = t.norm();
        let t0 = *first_t.get_or_insert(tn);
        if !(tn > 1e-10 * t0) {
            break;
        }
        t /= tn;
        r /= tn;
        let p = d.xc.tr_mul(&t);
        let q = d.yc.tr_mul(&t);
        let mut v = p.clone();
        for _ in 0..2 {
            for prev in &v_cols {
                let c = prev.dot(&v);
                v.axpy(-c, prev, 1.0);
            }
        }
        let vn = v.norm();
        r_cols.push(r);
        q_cols.push(q);
        if vn == 0.0 {
            break;
        }
        v /= vn;
        let proj = v.transpose() * &s;
        s -= &v * proj;
        v_cols.push(v);
    }
    let stack = |cols: &[Vector], rows: usize| {
        if cols.is_empty() {
            Mat::zeros(rows, 0)
        } else {
            Mat::from_columns(cols)
        }
    };
    Ok(ReferencePls {
        r: stack(&r_cols, d.p()),
        q: stack(&q_cols, d.q()),
        x_mean: d.x_mean,
        y_mean: d.y_mean,
    })
}

/// Textbook single-response NIPALS on a materialised matrix; returns
/// coefficients in that matrix's space.
pub fn reference_nipals(xt: &Mat, y: &Mat, k: usize) -> Result<Mat> {
    if y.ncols() != 1 {
        return Err(Error::config("y", "reference NIPALS takes one response"));
    }
    let d = center(xt, y)?;
    let mut e = d.xc.clone();
    let mut f = d.yc.column(0).into_owned();
    let (mut w_cols, mut p_cols, mut c) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..k {
        let mut w = e.tr_mul(&f);
        let wn = w.norm();
        if wn == 0.0 {
            break;
        }
        w /= wn;
        let t = &e * &w;
        let tt = t.norm_squared();
        if tt == 0.0 {
            break;
        }
        let p = e.tr_mul(&t) / tt;
        let ci = f.dot(&t) / tt;
        e -= &t * p.transpose();
        f.axpy(-ci, &t, 1.0);
        w_cols.push(w);
        p_cols.push(p);
        c.push(ci);
    }
    if w_cols.is_empty() {
        return Ok(Mat::zeros(d.p(), 1));
    }
    let w = Mat::from_columns(&w_cols);
    let p = Mat::from_columns(&p_cols);
    let (inv, _) = linalg::pinv(&p.tr_mul(&w));
    let k = c.len();
    Ok(w * inv * Mat::from_vec(k, 1, c))
}

/// Primal ridge `(XtᵀXt + αI)⁻¹·Xtᵀ·Yc` on a materialised matrix, with the
/// centering means.
pub fn reference_ridge(xt: &Mat, y: &Mat, alpha: f64) -> Result<(Mat, Vector, Vector)> {
    if !(alpha > 0.0) {
        return Err(Error::config("alpha", "must be positive"));
    }
    let d = center(xt, y)?;
    let mut g = d.xc.tr_mul(&d.xc);
    for i in 0..g.nrows() {
        g[(i, i)] += alpha;
    }
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::Numeric("primal ridge system is not positive definite".into()))?;
    Ok((chol.solve(&d.xc.tr_mul(&d.yc)), d.x_mean, d.y_mean))
}

/// Plain cross-validated PLS with no operator: chooses `K` by mean
/// held-out RMSE (ties to the smaller `K`) and refits.
#[derive(Debug, Clone)]
pub struct PlainCv {
    pub coefficients: Mat,
    pub param: f64,
    pub curve: Vec<Option<f64>>,
}

pub fn cv_pls(x: &Mat, y: &Mat, k_max: usize, plan: &FoldPlan) -> Result<PlainCv> {
    let identity = build_operator(&OperatorSpec::Identity, x.ncols())?;
    let mut sums = vec![Some(0.0); k_max];
    for fold in &plan.folds {
        let xtr = linalg::select_rows(x, &fold.train);
        let ytr = linalg::select_rows(y, &fold.train);
        let xva = linalg::select_rows(x, &fold.validation);
        let yva = linalg::select_rows(y, &fold.validation);
        let d = center(&xtr, &ytr)?;
        let s = cross_covariance(&d);
        let cap = k_max.min(d.n() - 1).min(d.p());
        let fit = pls::simpls_extract(&s, &d, &identity, cap)?;
        for (k, slot) in sums.iter_mut().enumerate() {
            if k + 1 > fit.n_components {
                *slot = None;
                continue;
            }
            let b = fit.prefix_coefficients(k + 1);
            let pred = pls::predict_linear(&b, &d.x_mean, &d.y_mean, &xva)?;
            let rmse = ((pred - &yva).norm_squared() / yva.len() as f64).sqrt();
            *slot = slot.map(|a| a + rmse);
        }
    }
    let curve: Vec<Option<f64>> = sums.iter().map(|s| s.map(|v| v / plan.len() as f64)).collect();
    let k = argmin(&curve).map(|i| i + 1).unwrap_or(1);
    let d = center(x, y)?;
    let k = k.min(d.n() - 1).min(d.p());
    let fit = pls::simpls_extract(&cross_covariance(&d), &d, &identity, k)?;
    Ok(PlainCv {
        coefficients: fit.coefficients,
        param: k as f64,
        curve,
    })
}

fn argmin(curve: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in curve.iter().enumerate() {
        if let Some(v) = v {
            if best.is_none_or(|(_, b)| *v < b) {
                best = Some((i, *v));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn dual_cholesky(k: &Mat, alpha: f64, y: &Mat) -> Result<Mat> {
    let mut reg = k.clone();
    for i in 0..reg.nrows() {
        reg[(i, i)] += alpha;
    }
    Ok(reg
        .cholesky()
        .ok_or_else(|| Error::Numeric("dual ridge system is not positive definite".into()))?
        .solve(y))
}

/// Plain cross-validated kernel ridge with the linear kernel, one Cholesky
/// solve per (fold, α).
pub fn cv_ridge(x: &Mat, y: &Mat, alphas: &[f64], plan: &FoldPlan) -> Result<PlainCv> {
    let mut sums = vec![0.0; alphas.len()];
    for fold in &plan.folds {
        let d = center(&linalg::select_rows(x, &fold.train), &linalg::select_rows(y, &fold.train))?;
        let xva = linalg::subtract_row(&linalg::select_rows(x, &fold.validation), &d.x_mean);
        let yva = linalg::select_rows(y, &fold.validation);
        let k = &d.xc * d.xc.transpose();
        let cross = &xva * d.xc.transpose();
        for (a, &alpha) in alphas.iter().enumerate() {
            let c = dual_cholesky(&k, alpha, &d.yc)?;
            let pred = linalg::add_row(&(&cross * c), &d.y_mean);
            sums[a] += ((pred - &yva).norm_squared() / yva.len() as f64).sqrt();
        }
    }
    let curve: Vec<Option<f64>> = sums.iter().map(|s| Some(s / plan.len() as f64)).collect();
    let ai = argmin(&curve).unwrap_or(0);
    let d = center(x, y)?;
    let k = &d.xc * d.xc.transpose();
    let c = dual_cholesky(&k, alphas[ai], &d.yc)?;
    Ok(PlainCv {
        coefficients: d.xc.tr_mul(&c),
        param: alphas[ai],
        curve,
    })
}

/// Result of an explicit preprocessing-grid search.
#[derive(Debug, Clone)]
pub struct ExplicitGrid {
    pub recipes: Vec<String>,
    /// Number of PLS model extractions performed.
    pub extractions: usize,
    pub best_recipe: usize,
    pub best_k: usize,
    pub best_value: f64,
}

/// Emulates a conventional pipeline search: every recipe (operator chain
/// up to depth 3, in enumeration order) is applied to produce a transformed
/// copy of the spectra, and plain PLS is cross-validated on each copy.
pub fn explicit_grid(
    x: &Mat,
    y: &Mat,
    bank: &OperatorBank,
    recipe_count: usize,
    k_max: usize,
    plan: &FoldPlan,
) -> Result<ExplicitGrid> {
    let chains: Vec<Vec<usize>> = enumerate_chains(bank, 3)?.into_iter().take(recipe_count).collect();
    let counter = AtomicUsize::new(0);
    let results = par::map_slice(&chains, |chain| -> Result<(String, Vec<f64>)> {
        let op = chain_operator(bank, chain)?;
        let xt = op.apply_rows(x)?;
        let mut sums = vec![0.0; k_max];
        for fold in &plan.folds {
            let xtr = linalg::select_rows(&xt, &fold.train);
            let ytr = linalg::select_rows(y, &fold.train);
            let cap = k_max.min(fold.train.len() - 1).min(x.ncols());
            let fit = reference_pls(&xtr, &ytr, cap)?;
            counter.fetch_add(1, Ordering::Relaxed);
            let xva = linalg::select_rows(&xt, &fold.validation);
            let yva = linalg::select_rows(y, &fold.validation);
            for (k, slot) in sums.iter_mut().enumerate() {
                if k + 1 > fit.n_components() {
                    *slot = f64::INFINITY;
                    continue;
                }
                let pred = fit.predict(&xva, k + 1)?;
                *slot += ((pred - &yva).norm_squared() / yva.len() as f64).sqrt();
            }
        }
        Ok((op.spec().to_string(), sums))
    });
    let mut recipes = Vec::with_capacity(results.len());
    let (mut best_recipe, mut best_k, mut best_value) = (0, 1, f64::INFINITY);
    for (i, r) in results.into_iter().enumerate() {
        let (name, sums) = r?;
        for (k, v) in sums.iter().enumerate() {
            let v = v / plan.len() as f64;
            if v < best_value {
                (best_recipe, best_k, best_value) = (i, k + 1, v);
            }
        }
        recipes.push(name);
    }
    Ok(ExplicitGrid {
        recipes,
        extractions: counter.into_inner(),
        best_recipe,
        best_k,
        best_value,
    })
}

/// One line of the equivalence report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRow {
    pub config: String,
    pub check: String,
    pub discrepancy: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub rows: Vec<EquivalenceRow>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("config,check,discrepancy,threshold,pass\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:e},{:e},{}\n",
                r.config, r.check, r.discrepancy, r.threshold, r.pass
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let cw = self.rows.iter().map(|r| r.config.len()).max().unwrap_or(6).max(6);
        let kw = self.rows.iter().map(|r| r.check.len()).max().unwrap_or(5).max(5);
        let mut out = format!(
            "{:<cw$}  {:<kw$}  {:>12}  {:>10}  result\n",
            "config", "check", "discrepancy", "threshold"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<cw$}  {:<kw$}  {:>12.3e}  {:>10.0e}  {}\n",
                r.config,
                r.check,
                r.discrepancy,
                r.threshold,
                if r.pass { "PASS" } else { "FAIL" }
            ));
        }
        out
    }
}

pub const TOL_CROSS_COVARIANCE: f64 = 1e-10;
pub const TOL_ENGINE_RMSEP: f64 = 1e-9;
pub const TOL_FOLDED_VS_MATERIALISED: f64 = 1e-6;
pub const TOL_RIDGE_DUAL_PRIMAL: f64 = 1e-8;

/// Problem size of one suite cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteSize {
    pub n: usize,
    pub p: usize,
    pub q: usize,
}

/// `count` random sizes with `n ∈ [20, 200]`, `p ∈ [30, 400]`, `q ∈ [1, 3]`.
pub fn random_sizes(count: usize, seed: u64) -> Vec<SuiteSize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| SuiteSize {
            n: rng.random_range(20..=200),
            p: rng.random_range(30..=400),
            q: rng.random_range(1..=3),
        })
        .collect()
}

fn suite_data(size: SuiteSize, seed: u64) -> (Mat, Mat) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = SpectraConfig::new(size.n, size.p);
    cfg.noise = 0.01;
    let x = smooth_spectra(&cfg, &mut rng);
    let beta = Mat::from_fn(size.p, size.q, |_, _| rng.random_range(-1.0..1.0));
    let mut y = &x * beta;
    let scale = linalg::max_abs(&y).max(1e-12);
    y /= scale;
    for v in y.iter_mut() {
        *v += 0.05 * rng.random_range(-1.0..1.0);
    }
    (x, y)
}

fn rmsep_matrix(a: &Mat, b: &Mat) -> f64 {
    ((a - b).norm_squared() / a.len() as f64).sqrt()
}

fn check_cell(size: SuiteSize, seed: u64) -> Result<Vec<EquivalenceRow>> {
    let (x, y) = suite_data(size, seed);
    let d = center(&x, &y)?;
    let s = cross_covariance(&d);
    let bank = compact_bank(size.p);
    let k = 5.min(size.n - 1).min(size.p);
    let (mut cross, mut engine, mut folded, mut ridge) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for op in bank.ops() {
        let a = op.materialise()?;
        let xt = &d.xc * a.transpose();

        let sb = op.apply_forward(&s.s)?;
        cross = cross.max(linalg::rel_max_diff(&sb, &xt.tr_mul(&d.yc), 1e-300));

        for j in 0..size.q {
            let yj = d.yc.column(j).into_owned();
            let yj = Mat::from_column_slice(size.n, 1, yj.as_slice());
            let dj = center(&x, &yj)?;
            let sj = cross_covariance(&dj);
            let simpls = pls::simpls_extract(&sj, &dj, op, k)?;
            let nipals = pls::nipals_adjoint_extract(&dj, op, k)?;
            let ra = rmsep_matrix(&simpls.predict(&x)?, &yj);
            let rb = rmsep_matrix(&nipals.predict(&x)?, &yj);
            engine = engine.max((ra - rb).abs());
        }

        let fit = pls::simpls_extract(&s, &d, op, k)?;
        let reference = reference_pls(&xt, &d.yc, k)?;
        let mapped = a.transpose() * reference.coefficients(fit.n_components);
        let scale = linalg::max_abs(&mapped).max(1e-300);
        let coef_diff = linalg::max_abs(&(&fit.coefficients - &mapped)) / scale;
        let pa = fit.predict(&x)?;
        let pb = linalg::add_row(&(&d.xc * &mapped), &d.y_mean);
        let pred_diff = linalg::max_abs(&(pa - &pb)) / linalg::max_abs(&pb).max(1e-300);
        folded = folded.max(coef_diff).max(pred_diff);

        let kern_scale = xt.norm_squared() / size.n as f64;
        for alpha in [1e-3 * kern_scale, 1e-1 * kern_scale] {
            if !(alpha > 0.0) {
                continue;
            }
            let dual = fit_ridge_operator(&d, op, alpha)?;
            let (primal, _, _) = reference_ridge(&xt, &d.yc, alpha)?;
            let mapped = a.transpose() * primal;
            ridge = ridge.max(linalg::rel_max_diff(&dual.coefficients, &mapped, 1e-300));
        }
    }
    let config = format!("n={} p={} q={}", size.n, size.p, size.q);
    let row = |check: &str, discrepancy: f64, threshold: f64| EquivalenceRow {
        config: config.clone(),
        check: check.to_string(),
        discrepancy,
        threshold,
        pass: discrepancy <= threshold,
    };
    Ok(vec![
        row("cross_covariance_identity", cross, TOL_CROSS_COVARIANCE),
        row("simpls_vs_nipals_rmsep", engine, TOL_ENGINE_RMSEP),
        row("folded_vs_materialised", folded, TOL_FOLDED_VS_MATERIALISED),
        row("ridge_dual_vs_primal", ridge, TOL_RIDGE_DUAL_PRIMAL),
    ])
}

/// Runs the four check families over every size, maximising each
/// discrepancy over the compact bank. Errors inside a cell are recorded
/// as failed rows.
pub fn equivalence_suite(seed: u64, sizes: &[SuiteSize]) -> EquivalenceReport {
    let cells = par::map_range(sizes.len(), |i| {
        let size = sizes[i];
        check_cell(size, seed.wrapping_add(i as u64)).unwrap_or_else(|e| {
            vec![EquivalenceRow {
                config: format!("n={} p={} q={}", size.n, size.p, size.q),
                check: format!("error: {e}"),
                discrepancy: f64::INFINITY,
                threshold: 0.0,
                pass: false,
            }]
        })
    });
    EquivalenceReport {
        rows: cells.into_iter().flatten().collect(),
    }
}

/// Default suite: 20 random sizes.
pub fn default_suite(seed: u64) -> EquivalenceReport {
    equivalence_suite(seed, &random_sizes(20, seed))
}

/// Plain CV plan helper used by the identity-reduction checks.
pub fn plan(n: usize, folds: usize, seed: u64) -> Result<FoldPlan> {
    stats::kfold_plan(n, folds, seed, None)
}
