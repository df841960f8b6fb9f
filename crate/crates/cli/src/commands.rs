//! Subcommand implementations, independent of argument parsing.

use std::collections::BTreeSet;

use opcal::aom_pls::{select_global, select_plsda};
use opcal::aom_ridge::select_ridge_with_plan;
use opcal::fastaom::{screen_chains, ChainCandidate};
use opcal::linalg::{self, Mat};
use opcal::oracle::{self, EquivalenceReport};
use opcal::pls::predict_linear;
use opcal::stats::{self, Split};
use opcal::{
    compact_bank, fit_aom_pls, fit_aom_plsda, fit_aom_ridge, fit_fastaom, AomPlsConfig, AomRidgeConfig,
    FastAomConfig, OperatorBank, OperatorSpec, SelectionTable,
};

use crate::error::{CliError, Result};
use crate::io::{self, Labels, Table};
use crate::model::{self, LinearModel, Method, ModelFile, OperatorLog, Task};

/// Default bank when neither `--bank` nor `OPCAL_BANK` is given.
pub const DEFAULT_BANK: &str = "compact";

/// Build the bank named by `text`: `compact`, `identity`, or a
/// `;`-separated list of operator specs (the identity is always added).
pub fn resolve_bank(text: &str, p: usize) -> Result<OperatorBank> {
    match text.trim() {
        "compact" => Ok(compact_bank(p)),
        "identity" => Ok(OperatorBank::identity_only(p)),
        list => {
            let specs = list
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<OperatorSpec>()
                        .map_err(|e| CliError::Config(format!("bank entry {s:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if specs.is_empty() {
                return Err(CliError::Config("empty bank".into()));
            }
            Ok(OperatorBank::from_specs(&specs, p)?)
        }
    }
}

/// Fitting options shared by `fit`, `screen` and `benchmark`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub method: Method,
    pub task: Task,
    pub bank: String,
    pub folds: usize,
    pub seed: u64,
    /// Component cap for the PLS methods; engine default when `None`.
    pub k_max: Option<usize>,
}

impl FitOptions {
    pub fn new(method: Method) -> Self {
        FitOptions {
            method,
            task: Task::Regression,
            bank: DEFAULT_BANK.into(),
            folds: opcal::aom_pls::DEFAULT_FOLDS,
            seed: 0,
            k_max: None,
        }
    }

    fn pls_config(&self, p: usize) -> Result<AomPlsConfig> {
        let mut cfg = AomPlsConfig::new(resolve_bank(&self.bank, p)?);
        cfg.folds = self.folds;
        cfg.seed = self.seed;
        if let Some(k) = self.k_max {
            cfg.k_max = k;
        }
        Ok(cfg)
    }

    fn ridge_config(&self, p: usize) -> Result<AomRidgeConfig> {
        let mut cfg = AomRidgeConfig::new(resolve_bank(&self.bank, p)?);
        cfg.folds = self.folds;
        cfg.seed = self.seed;
        Ok(cfg)
    }

    fn fast_config(&self, p: usize) -> Result<FastAomConfig> {
        let mut cfg = FastAomConfig::new(resolve_bank(&self.bank, p)?);
        cfg.folds = self.folds;
        cfg.seed = self.seed;
        if let Some(k) = self.k_max {
            cfg.k_max = k;
        }
        Ok(cfg)
    }
}

/// Response block aligned with the spectra rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Values { names: Vec<String>, data: Mat },
    Labels { name: String, values: Vec<String> },
}

impl Response {
    /// Reorder rows of a loaded response file to match `x`.
    pub fn numeric(x: &Table, y: Table, source: &str) -> Result<Self> {
        let order = io::alignment(x.ids.as_deref(), y.ids.as_deref(), x.data.nrows(), y.data.nrows(), source)?;
        Ok(Response::Values {
            names: y.header,
            data: linalg::select_rows(&y.data, &order),
        })
    }

    pub fn labels(x: &Table, y: Labels, source: &str) -> Result<Self> {
        let order = io::alignment(x.ids.as_deref(), y.ids.as_deref(), x.data.nrows(), y.values.len(), source)?;
        Ok(Response::Labels {
            name: y.name,
            values: order.iter().map(|&i| y.values[i].clone()).collect(),
        })
    }
}

/// Class names in sorted order and each row's index into them.
pub fn encode_labels(values: &[String]) -> (Vec<String>, Vec<usize>) {
    let names: Vec<String> = values.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let ids = values
        .iter()
        .map(|v| names.binary_search(v).expect("label present"))
        .collect();
    (names, ids)
}

/// A fitted model plus the selection artefacts written next to it.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: ModelFile,
    pub linear: LinearModel,
    /// Selection table CSV for the AOM methods, chain survivors for FastAOM.
    pub selection_csv: String,
}

fn log_from_table(table: &SelectionTable) -> OperatorLog {
    OperatorLog {
        criterion: Some(table.criterion.clone()),
        cv_value: table.chosen_value(),
        selection_digest: Some(model::digest(&table.to_csv())),
        ..Default::default()
    }
}

pub fn fit(x: &Table, y: &Response, opts: &FitOptions) -> Result<Fitted> {
    let p = x.data.ncols();
    match (opts.task, y) {
        (Task::Classification, Response::Labels { name, values }) => {
            if opts.method != Method::AomPls {
                return Err(CliError::Config(format!(
                    "classification is only available with aom-pls, not {}",
                    opts.method.name()
                )));
            }
            let (names, ids) = encode_labels(values);
            let fit = fit_aom_plsda(&x.data, &ids, &opts.pls_config(p)?)?;
            let pls = &fit.pls;
            let table = pls.selection.as_ref().expect("selected fit has a table");
            let mut log = log_from_table(table);
            log.operators = vec![pls.operator.to_string()];
            log.n_components = Some(pls.n_components);
            let linear = LinearModel {
                coefficients: pls.coefficients.clone(),
                x_mean: pls.x_mean.clone(),
                y_mean: pls.y_mean.clone(),
            };
            let classes = fit.classes.iter().map(|&c| names[c].clone()).collect();
            let model = ModelFile::new(
                Task::Classification,
                Method::AomPls,
                log,
                x.header.clone(),
                vec![name.clone()],
                Some(classes),
                &linear,
            );
            Ok(Fitted {
                model,
                linear,
                selection_csv: table.to_csv(),
            })
        }
        (Task::Regression, Response::Values { names, data }) => {
            let (log, linear, selection_csv) = match opts.method {
                Method::AomPls => {
                    let fit = fit_aom_pls(&x.data, data, &opts.pls_config(p)?)?;
                    let table = fit.selection.as_ref().expect("selected fit has a table");
                    let mut log = log_from_table(table);
                    log.operators = vec![fit.operator.to_string()];
                    log.n_components = Some(fit.n_components);
                    let csv = table.to_csv();
                    (
                        log,
                        LinearModel {
                            coefficients: fit.coefficients,
                            x_mean: fit.x_mean,
                            y_mean: fit.y_mean,
                        },
                        csv,
                    )
                }
                Method::AomRidge => {
                    let fit = fit_aom_ridge(&x.data, data, &opts.ridge_config(p)?)?;
                    let table = fit.selection.as_ref().expect("selected fit has a table");
                    let mut log = log_from_table(table);
                    log.operators = fit.operators.iter().map(|o| o.to_string()).collect();
                    if fit.operators.len() > 1 {
                        log.weights = Some(fit.scales.clone());
                    }
                    log.alpha = Some(fit.alpha);
                    let csv = table.to_csv();
                    (
                        log,
                        LinearModel {
                            coefficients: fit.coefficients,
                            x_mean: fit.x_mean,
                            y_mean: fit.y_mean,
                        },
                        csv,
                    )
                }
                Method::Fastaom => {
                    let fit = fit_fastaom(&x.data, data, &opts.fast_config(p)?)?;
                    let csv = fit.survivors_csv();
                    let total: f64 = fit.weights.iter().sum();
                    let log = OperatorLog {
                        operators: fit.survivors.iter().map(|c| c.spec.clone()).collect(),
                        weights: Some(fit.weights.iter().map(|w| w / total).collect()),
                        n_components: Some(fit.pls_stage.n_components),
                        alpha: Some(fit.ridge_alpha),
                        criterion: Some("chain_score".into()),
                        cv_value: None,
                        selection_digest: Some(model::digest(&csv)),
                    };
                    (
                        log,
                        LinearModel {
                            coefficients: fit.coefficients,
                            x_mean: fit.x_mean,
                            y_mean: fit.y_mean,
                        },
                        csv,
                    )
                }
            };
            let model = ModelFile::new(
                Task::Regression,
                opts.method,
                log,
                x.header.clone(),
                names.clone(),
                None,
                &linear,
            );
            Ok(Fitted {
                model,
                linear,
                selection_csv,
            })
        }
        (Task::Regression, Response::Labels { .. }) | (Task::Classification, Response::Values { .. }) => {
            Err(CliError::Config("response kind does not match the task".into()))
        }
    }
}

fn chains_csv(chains: &[ChainCandidate]) -> Result<String> {
    io::csv_text(
        &["rank".into(), "chain".into(), "score".into(), "raw_score".into()],
        chains.iter().enumerate().map(|(i, c)| {
            vec![
                (i + 1).to_string(),
                c.spec.clone(),
                format!("{:?}", c.score),
                format!("{:?}", c.raw_score),
            ]
        }),
    )
}

/// Selection table CSV without a refit. Identical to the table `fit`
/// records for the same inputs.
pub fn screen(x: &Table, y: &Response, opts: &FitOptions) -> Result<String> {
    let p = x.data.ncols();
    match (opts.task, opts.method, y) {
        (Task::Classification, Method::AomPls, Response::Labels { values, .. }) => {
            let (_, ids) = encode_labels(values);
            Ok(select_plsda(&x.data, &ids, &opts.pls_config(p)?)?.to_csv())
        }
        (Task::Classification, m, _) if m != Method::AomPls => Err(CliError::Config(format!(
            "classification is only available with aom-pls, not {}",
            m.name()
        ))),
        (Task::Regression, method, Response::Values { data, .. }) => {
            let d = opcal::center(&x.data, data)?;
            match method {
                Method::AomPls => Ok(select_global(&d, &opts.pls_config(p)?)?.to_csv()),
                Method::AomRidge => {
                    let cfg = opts.ridge_config(p)?;
                    let plan = stats::kfold_plan(d.n(), cfg.folds, cfg.seed, None)?;
                    Ok(select_ridge_with_plan(&d, &cfg.bank, &cfg.alphas, &plan, cfg.aggregation)?.to_csv())
                }
                Method::Fastaom => chains_csv(&screen_chains(&x.data, data, &opts.fast_config(p)?)?),
            }
        }
        _ => Err(CliError::Config("response kind does not match the task".into())),
    }
}

/// Model output for new spectra.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Values { names: Vec<String>, data: Mat },
    Labels { name: String, values: Vec<String> },
}

pub fn predict(model: &ModelFile, x: &Table) -> Result<Prediction> {
    if x.header.len() != model.p {
        return Err(opcal::Error::dimension("predict: spectra columns", model.p, x.header.len()).into());
    }
    if let Some(j) = x.header.iter().zip(&model.wavelengths).position(|(a, b)| a != b) {
        return Err(CliError::input(
            "spectra",
            format!(
                "column {} is {:?} but the model was fitted on {:?}",
                j + 1,
                x.header[j],
                model.wavelengths[j]
            ),
        ));
    }
    let lin = model.linear()?;
    let out = predict_linear(&lin.coefficients, &lin.x_mean, &lin.y_mean, &x.data)?;
    match (&model.task, &model.classes) {
        (Task::Classification, Some(classes)) => Ok(Prediction::Labels {
            name: model.responses.first().cloned().unwrap_or_else(|| "class".into()),
            values: out
                .row_iter()
                .map(|r| {
                    let j = r
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |a, (j, &v)| if v > a.1 { (j, v) } else { a })
                        .0;
                    classes[j].clone()
                })
                .collect(),
        }),
        _ => Ok(Prediction::Values {
            names: model.responses.clone(),
            data: out,
        }),
    }
}

pub fn prediction_csv(pred: &Prediction, ids: Option<&[String]>) -> Result<String> {
    match pred {
        Prediction::Values { names, data } => io::table_csv(names, ids, data),
        Prediction::Labels { name, values } => {
            let mut head = Vec::new();
            if ids.is_some() {
                head.push("id".to_string());
            }
            head.push(name.clone());
            io::csv_text(
                &head,
                values.iter().enumerate().map(|(i, v)| {
                    let mut r = Vec::new();
                    if let Some(ids) = ids {
                        r.push(ids[i].clone());
                    }
                    r.push(v.clone());
                    r
                }),
            )
        }
    }
}

/// Equivalence suite on `configs` random sizes.
pub fn validate(seed: u64, configs: usize) -> Result<EquivalenceReport> {
    if configs == 0 {
        return Err(CliError::Config("--configs must be >= 1".into()));
    }
    let sizes = oracle::random_sizes(configs, seed);
    Ok(oracle::equivalence_suite(seed, &sizes))
}

/// SPXY partition; stratified when the response holds class labels.
pub fn split(x: &Table, y: &Response, test_fraction: f64) -> Result<Split> {
    Ok(match y {
        Response::Values { data, .. } => stats::spxy_split(&x.data, data, test_fraction)?,
        Response::Labels { values, .. } => {
            let (_, ids) = encode_labels(values);
            stats::spxy_split_stratified(&x.data, &ids, test_fraction)?
        }
    })
}

/// One index per line under an `index` header; ids are added when known.
pub fn index_csv(indices: &[usize], ids: Option<&[String]>) -> Result<String> {
    let mut head = vec!["index".to_string()];
    if ids.is_some() {
        head.push("id".into());
    }
    io::csv_text(
        &head,
        indices.iter().map(|&i| {
            let mut r = vec![i.to_string()];
            if let Some(ids) = ids {
                r.push(ids[i].clone());
            }
            r
        }),
    )
}
