//! Cheap screening of operator chains and the FastAOM calibration.
//!
//! A chain `A_s` is scored by
//! `‖A_s·Xᵀy‖² / (‖X·A_sᵀ‖_F²·‖y‖²)`, which lies in `[0, 1]` by
//! Cauchy-Schwarz. The numerator only needs `Xᵀy`; the denominator is
//! approximated as `Σ σ_i²·‖A_s·v_i‖²` from a truncated SVD of `X`, so
//! scoring never touches the `n` rows again.

mod nnls;
mod tsvd;

pub use nnls::{kkt_residual, nnls};
pub use tsvd::{truncated_svd, TruncatedSvd};

use serde::{Deserialize, Serialize};

use crate::aom_pls::{cv_curve, Criterion};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::operators::{LinOp, OperatorBank, OperatorSpec};
use crate::par;
use crate::pls::{self, center, cross_covariance, predict_linear, CenteredData, CrossCov, PlsFit};
use crate::selection::Aggregation;
use crate::stats::{self, FoldPlan};

/// Scores this far above 1 before clamping indicate a bug rather than
/// truncation error.
pub const SCORE_OVERSHOOT_TOL: f64 = 1e-9;

/// Chains as bank indices in composition order: `[a, b]` is `A_a·A_b`, so
/// `b` acts first. The identity appears only as the chain `[0]`.
pub fn enumerate_chains(bank: &OperatorBank, depth: usize) -> Result<Vec<Vec<usize>>> {
    if depth == 0 {
        return Err(Error::config("depth", "must be >= 1"));
    }
    let members: Vec<usize> = (0..bank.len()).filter(|&i| !bank.ops()[i].is_identity()).collect();
    let mut chains = vec![vec![0]];
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(frontier.len() * members.len());
        for prefix in &frontier {
            for &m in &members {
                let mut c = prefix.clone();
                c.push(m);
                next.push(c);
            }
        }
        chains.extend(next.iter().cloned());
        frontier = next;
    }
    Ok(chains)
}

pub fn chain_operator(bank: &OperatorBank, chain: &[usize]) -> Result<LinOp> {
    let ops = chain
        .iter()
        .map(|&i| {
            bank.get(i)
                .cloned()
                .ok_or_else(|| Error::config("chain", format!("bank index {i} out of range")))
        })
        .collect::<Result<Vec<_>>>()?;
    if ops.len() == 1 {
        return Ok(ops.into_iter().next().expect("one member"));
    }
    LinOp::product(&ops)
}

/// A scored chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainCandidate {
    pub chain: Vec<usize>,
    pub spec: String,
    pub score: f64,
    /// Raw score before clamping to `[0, 1]`.
    pub raw_score: f64,
    /// Set when the response was zero and the score is undefined.
    pub undefined: bool,
}

impl ChainCandidate {
    pub fn clamped(&self) -> bool {
        self.raw_score != self.score
    }
}

/// Score of one chain operator.
pub fn chain_score(op: &LinOp, base: &TruncatedSvd, xty: &[f64], y_norm: f64) -> Result<(f64, f64, bool)> {
    if y_norm == 0.0 {
        return Ok((0.0, 0.0, true));
    }
    let num: f64 = op.forward_vec(xty)?.iter().map(|v| v * v).sum();
    let mut vs = base.v.clone();
    for (j, mut col) in vs.column_iter_mut().enumerate() {
        col *= base.sigma[j];
    }
    let den = op.apply_forward(&vs)?.norm_squared() * y_norm * y_norm;
    let raw = if den > 0.0 { num / den } else { 0.0 };
    Ok((raw.clamp(0.0, 1.0), raw, false))
}

/// Score every chain against a fixed base SVD and `Xᵀy`.
pub fn score_chains(
    bank: &OperatorBank,
    chains: &[Vec<usize>],
    base: &TruncatedSvd,
    xty: &[f64],
    y_norm: f64,
) -> Result<Vec<ChainCandidate>> {
    par::map_slice(chains, |chain| {
        let op = chain_operator(bank, chain)?;
        let (score, raw_score, undefined) = chain_score(&op, base, xty, y_norm)?;
        Ok(ChainCandidate {
            chain: chain.clone(),
            spec: op.spec().to_string(),
            score,
            raw_score,
            undefined,
        })
    })
    .into_iter()
    .collect()
}

/// Descending score, ties to enumeration order.
pub fn rank_candidates(mut c: Vec<ChainCandidate>) -> Vec<ChainCandidate> {
    c.sort_by(|a, b| b.score.total_cmp(&a.score));
    c
}

#[derive(Debug, Clone)]
pub struct FastAomConfig {
    pub bank: OperatorBank,
    pub depth: usize,
    /// Defaults to `min(n, p, 100)`.
    pub svd_rank: Option<usize>,
    pub top_m: usize,
    pub folds: usize,
    pub k_max: usize,
    pub seed: u64,
}

impl FastAomConfig {
    pub fn new(bank: OperatorBank) -> Self {
        FastAomConfig {
            bank,
            depth: 2,
            svd_rank: None,
            top_m: 8,
            folds: 5,
            k_max: 15,
            seed: 0,
        }
    }
}

/// A FastAOM calibration.
#[derive(Debug, Clone)]
pub struct FastAomFit {
    /// Top-ranked chains, in score order.
    pub survivors: Vec<ChainCandidate>,
    /// Raw non-negative weights over `survivors`.
    pub weights: Vec<f64>,
    /// The combined operator `Σ w̃_s·A_s` with weights summing to one.
    pub operator: OperatorSpec,
    pub pls_stage: PlsFit,
    pub ridge_alpha: f64,
    /// Ridge coefficients on the PLS scores.
    pub score_coefficients: Vector,
    pub coefficients: Mat,
    pub x_mean: Vector,
    pub y_mean: Vector,
    /// Number of chains scored.
    pub chains_scored: usize,
    /// Chains whose raw score left `[0, 1]`.
    pub clamp_events: usize,
}

impl FastAomFit {
    pub fn predict(&self, xnew: &Mat) -> Result<Mat> {
        predict_linear(&self.coefficients, &self.x_mean, &self.y_mean, xnew)
    }

    /// Prediction through the stages: scores, then ridge on scores.
    pub fn staged_predict(&self, xnew: &Mat) -> Result<Mat> {
        if xnew.ncols() != self.x_mean.len() {
            return Err(Error::dimension("predict: columns of X", self.x_mean.len(), xnew.ncols()));
        }
        let t = linalg::subtract_row(xnew, &self.x_mean) * &self.pls_stage.weights;
        let mut out = Mat::from_column_slice(t.nrows(), 1, (t * &self.score_coefficients).as_slice());
        out.add_scalar_mut(self.y_mean[0]);
        Ok(out)
    }

    /// `chain,score,weight` rows for the survivors.
    pub fn survivors_csv(&self) -> String {
        let mut out = String::from("chain,score,weight\n");
        for (c, w) in self.survivors.iter().zip(&self.weights) {
            out.push_str(&format!("\"{}\",{:?},{:?}\n", c.spec.replace('"', "\"\""), c.score, w));
        }
        out
    }
}

/// Out-of-fold one-component PLS predictions (centred on the full-data
/// response mean) for each operator.
fn oof_predictions(d: &CenteredData, ops: &[LinOp], plan: &FoldPlan) -> Result<Mat> {
    let cols = par::map_slice(ops, |op| -> Result<Vec<f64>> {
        let mut col = vec![0.0; d.n()];
        for fold in &plan.folds {
            let train = center(
                &linalg::select_rows(&d.xc, &fold.train),
                &linalg::select_rows(&d.yc, &fold.train),
            )?;
            let fit = pls::simpls_extract(&cross_covariance(&train), &train, op, 1)?;
            let x_val = linalg::select_rows(&d.xc, &fold.validation);
            let pred = fit.predict(&x_val)?;
            for (r, &i) in fold.validation.iter().enumerate() {
                col[i] = pred[(r, 0)];
            }
        }
        Ok(col)
    });
    let cols = cols.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Mat::from_fn(d.n(), ops.len(), |i, j| cols[j][i]))
}

fn rank_all(d: &CenteredData, s: &CrossCov, cfg: &FastAomConfig) -> Result<Vec<ChainCandidate>> {
    let rank = cfg.svd_rank.unwrap_or(d.n().min(d.p()).min(100));
    let base = truncated_svd(&d.xc, rank, cfg.seed)?;
    let chains = enumerate_chains(&cfg.bank, cfg.depth)?;
    let scored = score_chains(&cfg.bank, &chains, &base, s.s.as_slice(), d.yc.norm())?;
    Ok(rank_candidates(scored))
}

/// Every chain up to `cfg.depth`, scored and ranked as in [`fit_fastaom`].
pub fn screen_chains(x: &Mat, y: &Mat, cfg: &FastAomConfig) -> Result<Vec<ChainCandidate>> {
    if y.ncols() != 1 {
        return Err(Error::config("y", format!("FastAOM needs a single response, got {}", y.ncols())));
    }
    let d = center(x, y)?;
    if cfg.bank.p() != d.p() {
        return Err(Error::dimension("bank channel count", d.p(), cfg.bank.p()));
    }
    rank_all(&d, &cross_covariance(&d), cfg)
}

/// Screen chains, weight the survivors by NNLS on their out-of-fold
/// predictions, fit PLS on the combined operator with a cross-validated
/// component count, then a small ridge on the PLS scores.
pub fn fit_fastaom(x: &Mat, y: &Mat, cfg: &FastAomConfig) -> Result<FastAomFit> {
    if y.ncols() != 1 {
        return Err(Error::config("y", format!("FastAOM needs a single response, got {}", y.ncols())));
    }
    if cfg.top_m == 0 {
        return Err(Error::config("top_m", "must be >= 1"));
    }
    if cfg.k_max == 0 {
        return Err(Error::config("k_max", "must be >= 1"));
    }
    let d = center(x, y)?;
    if cfg.bank.p() != d.p() {
        return Err(Error::dimension("bank channel count", d.p(), cfg.bank.p()));
    }
    let plan = stats::kfold_plan(d.n(), cfg.folds, cfg.seed, None)?;

    let s = cross_covariance(&d);
    let ranked = rank_all(&d, &s, cfg)?;
    let clamp_events = ranked.iter().filter(|c| c.clamped()).count();
    let chains_scored = ranked.len();
    let mut survivors = ranked;
    survivors.truncate(cfg.top_m);

    let ops = survivors
        .iter()
        .map(|c| chain_operator(&cfg.bank, &c.chain))
        .collect::<Result<Vec<_>>>()?;
    let preds = oof_predictions(&d, &ops, &plan)?;
    let target = Vector::from_column_slice(d.yc.as_slice());
    let mut weights: Vec<f64> = nnls(&preds, &target)?.iter().copied().collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        weights = vec![0.0; ops.len()];
        weights[0] = 1.0;
    }
    let total: f64 = weights.iter().sum();
    let terms: Vec<(f64, LinOp)> = weights
        .iter()
        .zip(&ops)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, op)| (w / total, op.clone()))
        .collect();
    let mix = if terms.len() == 1 {
        terms[0].1.clone()
    } else {
        LinOp::weighted_sum(&terms)?
    };

    let k_cap = cfg.k_max.min(d.n() - 1).min(d.p());
    let curve = cv_curve(&d, &mix, k_cap, &plan, Criterion::CvRmse, Aggregation::Mean)?;
    let best_k = curve
        .iter()
        .enumerate()
        .filter_map(|(k, v)| v.map(|v| (k + 1, v)))
        .fold(None, |acc: Option<(usize, f64)>, (k, v)| match acc {
            Some((_, bv)) if bv <= v => acc,
            _ => Some((k, v)),
        })
        .map(|(k, _)| k)
        .unwrap_or(1);
    let pls_stage = pls::simpls_extract(&s, &d, &mix, best_k)?;

    let t = &d.xc * &pls_stage.weights;
    let k = t.ncols();
    let (ridge_alpha, gamma) = if k == 0 {
        (0.0, Vector::zeros(0))
    } else {
        let alpha = 1e-6 * t.norm_squared() / d.n() as f64;
        let mut g = t.tr_mul(&t);
        for i in 0..k {
            g[(i, i)] += alpha;
        }
        let rhs = t.tr_mul(&target);
        let gamma = g
            .cholesky()
            .ok_or_else(|| Error::Numeric("score ridge system is not positive definite".into()))?
            .solve(&rhs);
        (alpha, gamma)
    };
    let beta = if k == 0 {
        Vector::zeros(d.p())
    } else {
        &pls_stage.weights * &gamma
    };
    Ok(FastAomFit {
        survivors,
        weights,
        operator: mix.spec().clone(),
        pls_stage,
        ridge_alpha,
        score_coefficients: gamma,
        coefficients: Mat::from_column_slice(d.p(), 1, beta.as_slice()),
        x_mean: d.x_mean.clone(),
        y_mean: d.y_mean.clone(),
        chains_scored,
        clamp_events,
    })
}
