//! Operator-adaptive PLS: screen a bank of strict-linear operators through
//! the cross-covariance, choose one (operator, component count) pair by
//! inner cross-validation and refit once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::operators::{LinOp, OperatorBank};
use crate::par;
use crate::pls::{self, center, cross_covariance, CenteredData, CrossCov, PlsFit};
use crate::selection::{Aggregation, SelectionTable};
use crate::stats::{self, FoldPlan};

pub const DEFAULT_K_MAX: usize = 15;
pub const DEFAULT_FOLDS: usize = 5;

/// Selection criterion over held-out folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Criterion {
    /// Held-out root-mean-square error (minimised).
    #[default]
    CvRmse,
    /// Held-out sum of squared errors (minimised).
    Press,
    /// Negative normalised covariance between held-out predictions and
    /// responses (minimised).
    Covariance,
    /// Held-out balanced accuracy of the argmax class (maximised). Used by
    /// the discriminant variant.
    BalancedAccuracy,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::CvRmse => "cv_rmse",
            Criterion::Press => "press",
            Criterion::Covariance => "covariance",
            Criterion::BalancedAccuracy => "balanced_accuracy",
        }
    }

    pub fn maximise(self) -> bool {
        matches!(self, Criterion::BalancedAccuracy)
    }

    fn score(self, pred: &Mat, truth: &Mat) -> f64 {
        match self {
            Criterion::CvRmse => ((pred - truth).norm_squared() / truth.len() as f64).sqrt(),
            Criterion::Press => (pred - truth).norm_squared(),
            Criterion::Covariance => {
                let pc = linalg::subtract_row(pred, &linalg::column_means(pred));
                let tc = linalg::subtract_row(truth, &linalg::column_means(truth));
                let denom = pc.norm() * tc.norm();
                if denom == 0.0 {
                    0.0
                } else {
                    -pc.dot(&tc) / denom
                }
            }
            Criterion::BalancedAccuracy => {
                let p = argmax_rows(pred);
                let t = argmax_rows(truth);
                stats::balanced_accuracy(&p, &t).unwrap_or(0.0)
            }
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cv_rmse" | "cv-rmse" => Ok(Criterion::CvRmse),
            "press" => Ok(Criterion::Press),
            "covariance" => Ok(Criterion::Covariance),
            "balanced_accuracy" => Ok(Criterion::BalancedAccuracy),
            other => Err(Error::config("criterion", format!("unknown criterion '{other}'"))),
        }
    }
}

pub(crate) fn argmax_rows(m: &Mat) -> Vec<usize> {
    m.row_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |a, (j, &v)| if v > a.1 { (j, v) } else { a })
                .0
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AomPlsConfig {
    pub bank: OperatorBank,
    pub k_max: usize,
    pub folds: usize,
    pub seed: u64,
    pub criterion: Criterion,
    pub aggregation: Aggregation,
}

impl AomPlsConfig {
    /// Defaults: 15 components, 5 folds, seed 0, mean CV-RMSE.
    pub fn new(bank: OperatorBank) -> Self {
        AomPlsConfig {
            bank,
            k_max: DEFAULT_K_MAX,
            folds: DEFAULT_FOLDS,
            seed: 0,
            criterion: Criterion::CvRmse,
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
        if self.k_max == 0 {
            return Err(Error::config("k_max", "must be >= 1"));
        }
        if self.folds < 2 {
            return Err(Error::config("folds", "must be >= 2"));
        }
        if n < self.folds {
            return Err(Error::config("folds", format!("{} folds exceed {n} samples", self.folds)));
        }
        Ok(())
    }
}

/// `S_b = A_b·S` for every bank member. Cost is independent of `n`.
pub fn screen_bank(s: &CrossCov, bank: &OperatorBank) -> Result<Vec<CrossCov>> {
    par::map_slice(bank.ops(), |op| op.apply_forward(&s.s).map(|s| CrossCov { s }))
        .into_iter()
        .collect()
}

/// Criterion values for `K = 1..=k_max` on one fold under one operator.
/// Training-side centering and `S` use the training rows only.
fn fold_cell(
    d: &CenteredData,
    fold: &stats::Fold,
    op: &LinOp,
    k_max: usize,
    criterion: Criterion,
) -> Result<Vec<Option<f64>>> {
    let train = center(
        &linalg::select_rows(&d.xc, &fold.train),
        &linalg::select_rows(&d.yc, &fold.train),
    )?;
    let x_val = linalg::select_rows(&d.xc, &fold.validation);
    let y_val = linalg::select_rows(&d.yc, &fold.validation);
    let cap = k_max.min(train.n() - 1).min(train.p());
    if cap == 0 {
        return Ok(vec![None; k_max]);
    }
    let s = cross_covariance(&train);
    let fit = pls::simpls_extract(&s, &train, op, cap)?;
    (1..=k_max)
        .map(|k| {
            if k > fit.n_components {
                return Ok(None);
            }
            let b = fit.prefix_coefficients(k);
            let pred = pls::predict_linear(&b, &train.x_mean, &train.y_mean, &x_val)?;
            Ok(Some(criterion.score(&pred, &y_val)))
        })
        .collect()
}

/// Selection over an explicit fold plan.
pub fn select_with_plan(
    d: &CenteredData,
    bank: &OperatorBank,
    k_max: usize,
    plan: &FoldPlan,
    criterion: Criterion,
    aggregation: Aggregation,
) -> Result<SelectionTable> {
    let n_ops = bank.len();
    let jobs: Vec<(usize, usize)> = (0..plan.len())
        .flat_map(|f| (0..n_ops).map(move |b| (f, b)))
        .collect();
    let results = par::map_slice(&jobs, |&(f, b)| {
        fold_cell(d, &plan.folds[f], &bank.ops()[b], k_max, criterion)
    });
    let mut per_fold = vec![Vec::with_capacity(n_ops); plan.len()];
    for ((f, _), r) in jobs.iter().zip(results) {
        per_fold[*f].push(r?);
    }
    Ok(SelectionTable::assemble(
        bank.names().to_vec(),
        "K",
        (1..=k_max).map(|k| k as f64).collect(),
        criterion.name(),
        criterion.maximise(),
        per_fold,
        aggregation,
    ))
}

/// Aggregated criterion for `K = 1..=k_max` under a single operator.
pub fn cv_curve(
    d: &CenteredData,
    op: &LinOp,
    k_max: usize,
    plan: &FoldPlan,
    criterion: Criterion,
    aggregation: Aggregation,
) -> Result<Vec<Option<f64>>> {
    let folds = par::map_slice(&plan.folds, |f| fold_cell(d, f, op, k_max, criterion));
    let folds = folds.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((0..k_max)
        .map(|k| {
            let v: Option<Vec<f64>> = folds.iter().map(|f| f[k]).collect();
            v.map(|v| aggregation.combine(&v))
        })
        .collect())
}

/// One operator for all components and a component count, chosen by
/// inner cross-validation.
pub fn select_global(d: &CenteredData, cfg: &AomPlsConfig) -> Result<SelectionTable> {
    cfg.validate(d.n(), d.p())?;
    let plan = stats::kfold_plan(d.n(), cfg.folds, cfg.seed, None)?;
    select_with_plan(d, &cfg.bank, cfg.k_max, &plan, cfg.criterion, cfg.aggregation)
}

fn refit(d: &CenteredData, bank: &OperatorBank, table: SelectionTable) -> Result<PlsFit> {
    let (b, ki) = table.chosen;
    let k = (ki + 1).min(d.n() - 1).min(d.p());
    let s = cross_covariance(d);
    let mut fit = pls::simpls_extract_with_id(&s, d, &bank.ops()[b], b, k)?;
    fit.selection = Some(table);
    Ok(fit)
}

/// Select on `(x, y)` and refit the chosen pair on all rows.
pub fn fit_aom_pls(x: &Mat, y: &Mat, cfg: &AomPlsConfig) -> Result<PlsFit> {
    let d = center(x, y)?;
    let table = select_global(&d, cfg)?;
    refit(&d, &cfg.bank, table)
}

/// Refit with a caller-supplied fold plan.
pub fn fit_aom_pls_with_plan(x: &Mat, y: &Mat, cfg: &AomPlsConfig, plan: &FoldPlan) -> Result<PlsFit> {
    let d = center(x, y)?;
    cfg.validate(d.n(), d.p())?;
    let table = select_with_plan(&d, &cfg.bank, cfg.k_max, plan, cfg.criterion, cfg.aggregation)?;
    refit(&d, &cfg.bank, table)
}

/// Discriminant PLS on one-hot class indicators.
#[derive(Debug, Clone)]
pub struct ClassifierFit {
    pub pls: PlsFit,
    /// Class id of each indicator column.
    pub classes: Vec<usize>,
}

impl ClassifierFit {
    pub fn predict(&self, xnew: &Mat) -> Result<Vec<usize>> {
        let scores = self.pls.predict(xnew)?;
        Ok(argmax_rows(&scores).into_iter().map(|j| self.classes[j]).collect())
    }
}

/// One-hot indicator matrix with columns in ascending class order.
pub fn one_hot(labels: &[usize]) -> (Mat, Vec<usize>) {
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let y = Mat::from_fn(labels.len(), classes.len(), |i, j| {
        if labels[i] == classes[j] {
            1.0
        } else {
            0.0
        }
    });
    (y, classes)
}

/// Discriminant variant: stratified folds, balanced-accuracy criterion,
/// argmax prediction.
pub fn fit_aom_plsda(x: &Mat, labels: &[usize], cfg: &AomPlsConfig) -> Result<ClassifierFit> {
    let (d, classes, table) = plsda_selection(x, labels, cfg)?;
    Ok(ClassifierFit {
        pls: refit(&d, &cfg.bank, table)?,
        classes,
    })
}

/// The selection table [`fit_aom_plsda`] would choose from, without the refit.
pub fn select_plsda(x: &Mat, labels: &[usize], cfg: &AomPlsConfig) -> Result<SelectionTable> {
    plsda_selection(x, labels, cfg).map(|(_, _, t)| t)
}

fn plsda_selection(
    x: &Mat,
    labels: &[usize],
    cfg: &AomPlsConfig,
) -> Result<(CenteredData, Vec<usize>, SelectionTable)> {
    if labels.len() != x.nrows() {
        return Err(Error::dimension("labels", x.nrows(), labels.len()));
    }
    let (y, classes) = one_hot(labels);
    if classes.len() < 2 {
        return Err(Error::config("labels", "need at least two classes"));
    }
    let d = center(x, &y)?;
    cfg.validate(d.n(), d.p())?;
    let plan = stats::kfold_plan(d.n(), cfg.folds, cfg.seed, Some(labels))?;
    let table = select_with_plan(
        &d,
        &cfg.bank,
        cfg.k_max,
        &plan,
        Criterion::BalancedAccuracy,
        cfg.aggregation,
    )?;
    Ok((d, classes, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{build_operator, compact_bank, OperatorSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_member_screens_to_s() {
        let d = center(&random(10, 30, 1), &random(10, 2, 2)).unwrap();
        let s = cross_covariance(&d);
        let screened = screen_bank(&s, &compact_bank(30)).unwrap();
        assert_eq!(screened.len(), 9);
        assert!(screened[0]
            .s
            .iter()
            .zip(s.s.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn detrend_screen_of_linear_column_is_zero() {
        let bank = compact_bank(25);
        let s = CrossCov {
            s: Mat::from_fn(25, 1, |j, _| 3.0 * j as f64 - 1.0),
        };
        let screened = screen_bank(&s, &bank).unwrap();
        assert!(linalg::max_abs(&screened[6].s) < 1e-10);
    }

    #[test]
    fn screened_covariances_match_materialised() {
        let d = center(&random(15, 40, 3), &random(15, 2, 4)).unwrap();
        let s = cross_covariance(&d);
        let bank = compact_bank(40);
        for (op, sb) in bank.ops().iter().zip(screen_bank(&s, &bank).unwrap()) {
            let direct = op.apply_rows(&d.xc).unwrap().tr_mul(&d.yc);
            assert!(linalg::rel_max_diff(&sb.s, &direct, 1e-300) < 1e-10);
        }
    }

    #[test]
    fn default_grid_is_nine_by_fifteen() {
        let x = random(40, 64, 5);
        let y = random(40, 1, 6);
        let d = center(&x, &y).unwrap();
        let table = select_global(&d, &AomPlsConfig::new(compact_bank(64))).unwrap();
        assert_eq!(table.grid_size(), 135);
        assert_eq!(table.extractions, 45);
    }

    #[test]
    fn identity_only_bank_chooses_identity() {
        let x = random(30, 20, 7);
        let y = random(30, 1, 8);
        let fit = fit_aom_pls(&x, &y, &AomPlsConfig::new(OperatorBank::identity_only(20))).unwrap();
        assert_eq!(fit.operator_id, 0);
        assert!(fit.n_components >= 1 && fit.n_components <= 15);
    }

    #[test]
    fn small_sample_rank_guard() {
        let x = random(32, 100, 9);
        let y = random(32, 1, 10);
        let fit = fit_aom_pls(&x, &y, &AomPlsConfig::new(compact_bank(100))).unwrap();
        assert!(fit.n_components <= 15 && fit.n_components <= 31);
    }

    #[test]
    fn selection_is_reproducible_across_worker_counts() {
        let x = random(40, 30, 11);
        let y = random(40, 1, 12);
        let cfg = AomPlsConfig::new(compact_bank(30));
        let d = center(&x, &y).unwrap();
        let a = par::with_threads(1, || select_global(&d, &cfg).unwrap());
        let b = par::with_threads(4, || select_global(&d, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn fold_training_side_ignores_validation_rows() {
        // Changing held-out rows leaves every training-side S unchanged.
        let x = random(20, 12, 13);
        let y = random(20, 1, 14);
        let plan = stats::kfold_plan(20, 4, 0, None).unwrap();
        let fold = &plan.folds[0];
        let mut x2 = x.clone();
        for &i in &fold.validation {
            x2.row_mut(i).fill(100.0);
        }
        let s_of = |x: &Mat| {
            let t = center(&linalg::select_rows(x, &fold.train), &linalg::select_rows(&y, &fold.train)).unwrap();
            cross_covariance(&t).s
        };
        assert_eq!(s_of(&x), s_of(&x2));
    }

    #[test]
    fn criteria_parse_and_behave() {
        let t = Mat::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert_eq!(Criterion::CvRmse.score(&t, &t), 0.0);
        assert_eq!(Criterion::Press.score(&t.add_scalar(1.0), &t), 3.0);
        assert!((Criterion::Covariance.score(&(&t * 2.0), &t) + 1.0).abs() < 1e-12);
        assert_eq!("press".parse::<Criterion>().unwrap(), Criterion::Press);
        assert!("nope".parse::<Criterion>().is_err());
    }

    #[test]
    fn every_criterion_runs_the_grid() {
        let x = random(25, 15, 15);
        let y = random(25, 1, 16);
        for criterion in [Criterion::CvRmse, Criterion::Press, Criterion::Covariance] {
            let mut cfg = AomPlsConfig::new(compact_bank(15));
            cfg.criterion = criterion;
            cfg.k_max = 4;
            let fit = fit_aom_pls(&x, &y, &cfg).unwrap();
            assert_eq!(fit.selection.as_ref().unwrap().criterion, criterion.name());
        }
    }

    #[test]
    fn config_is_validated() {
        let x = random(4, 15, 17);
        let y = random(4, 1, 18);
        assert!(fit_aom_pls(&x, &y, &AomPlsConfig::new(compact_bank(15))).is_err());
        let mut cfg = AomPlsConfig::new(compact_bank(15));
        cfg.k_max = 0;
        assert!(fit_aom_pls(&random(20, 15, 1), &random(20, 1, 2), &cfg).is_err());
        let bank = OperatorBank::identity_only(14);
        assert!(fit_aom_pls(&random(20, 15, 1), &random(20, 1, 2), &AomPlsConfig::new(bank)).is_err());
    }

    #[test]
    fn separable_classes_are_perfectly_classified() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let n = 40;
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Mat::from_fn(n, 12, |i, j| {
            let noise = rng.random_range(-0.05..0.05);
            if j == 3 {
                if labels[i] == 1 { 2.0 + noise } else { -2.0 + noise }
            } else {
                noise
            }
        });
        let mut cfg = AomPlsConfig::new(OperatorBank::identity_only(12));
        cfg.k_max = 3;
        let fit = fit_aom_plsda(&x, &labels, &cfg).unwrap();
        assert_eq!(fit.predict(&x).unwrap(), labels);
        let table = fit.pls.selection.as_ref().unwrap();
        assert!(table.maximise);
        assert_eq!(table.chosen_value(), Some(1.0));
    }

    #[test]
    fn single_class_is_rejected() {
        let x = random(10, 5, 20);
        let err = fit_aom_plsda(&x, &[3; 10], &AomPlsConfig::new(OperatorBank::identity_only(5))).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn one_hot_orders_classes() {
        let (y, classes) = one_hot(&[5, 2, 5]);
        assert_eq!(classes, vec![2, 5]);
        assert_eq!(y.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0]);
    }

    #[test]
    fn explicit_bank_from_specs() {
        let bank = OperatorBank::from_specs(&[OperatorSpec::FiniteDiffFirst], 10).unwrap();
        assert_eq!(bank.len(), 2);
        assert!(build_operator(&OperatorSpec::Identity, 10).unwrap().is_identity());
    }
}
