//! Paired benchmarks over a manifest of datasets.

use std::path::{Path, PathBuf};

use opcal::linalg::{self, Mat};
use opcal::stats::{self, PairedSummary};
use opcal::synthetic::{planted_derivative, PlantConfig, SpectraConfig};
use serde::Deserialize;

use crate::commands::{self, FitOptions, Response};
use crate::error::{CliError, Result};
use crate::io::{self, Table};
use crate::model::Method;

fn default_folds() -> usize {
    opcal::aom_pls::DEFAULT_FOLDS
}

fn default_test_fraction() -> f64 {
    1.0 / 3.0
}

fn default_bootstrap() -> usize {
    10_000
}

fn default_bank() -> String {
    commands::DEFAULT_BANK.into()
}

fn default_snr() -> f64 {
    10.0
}

/// Benchmark manifest (JSON).
///
/// `methods` and `reference` name methods as on the command line
/// (`aom-pls`, `aom-ridge`, `fastaom`) plus `pls` and `ridge` for the
/// identity-only baselines.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub methods: Vec<String>,
    pub reference: String,
    #[serde(default = "default_bank")]
    pub bank: String,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    /// Held-out share for SPXY when a dataset has no test files.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    pub datasets: Vec<DatasetEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetEntry {
    /// CSV files; relative paths resolve against the manifest directory.
    Files {
        name: String,
        x: PathBuf,
        y: PathBuf,
        #[serde(default)]
        x_test: Option<PathBuf>,
        #[serde(default)]
        y_test: Option<PathBuf>,
    },
    /// One dataset per seed with the response planted on the first derivative.
    PlantedDerivative {
        name: String,
        n: usize,
        p: usize,
        seeds: Vec<u64>,
        #[serde(default = "default_snr")]
        snr: f64,
    },
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BenchMethod {
    label: String,
    options: FitOptions,
}

fn parse_method(label: &str, m: &Manifest) -> Result<BenchMethod> {
    let (method, bank) = match label {
        "aom-pls" => (Method::AomPls, m.bank.as_str()),
        "aom-ridge" => (Method::AomRidge, m.bank.as_str()),
        "fastaom" => (Method::Fastaom, m.bank.as_str()),
        "pls" => (Method::AomPls, "identity"),
        "ridge" => (Method::AomRidge, "identity"),
        other => return Err(CliError::Config(format!("unknown benchmark method {other:?}"))),
    };
    let mut options = FitOptions::new(method);
    options.bank = bank.into();
    options.folds = m.folds;
    options.seed = m.seed;
    Ok(BenchMethod {
        label: label.into(),
        options,
    })
}

/// Train/test data of one benchmark dataset.
struct Prepared {
    name: String,
    train_x: Table,
    train_y: Response,
    test_x: Mat,
    test_y: Mat,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_pair(x: &Path, y: &Path) -> Result<(Table, Mat)> {
    let xt = io::load_table(x)?;
    let yt = io::load_table(y)?;
    let src = y.display().to_string();
    match Response::numeric(&xt, yt, &src)? {
        Response::Values { data, .. } => Ok((xt, data)),
        Response::Labels { .. } => unreachable!("numeric response"),
    }
}

fn spxy_prepared(name: String, x: Mat, y: Mat, test_fraction: f64) -> Result<Prepared> {
    let split = stats::spxy_split(&x, &y, test_fraction)?;
    let p = x.ncols();
    Ok(Prepared {
        name,
        train_x: Table {
            header: (0..p).map(|j| j.to_string()).collect(),
            ids: None,
            data: linalg::select_rows(&x, &split.train),
        },
        train_y: Response::Values {
            names: (0..y.ncols()).map(|j| format!("y{j}")).collect(),
            data: linalg::select_rows(&y, &split.train),
        },
        test_x: linalg::select_rows(&x, &split.test),
        test_y: linalg::select_rows(&y, &split.test),
    })
}

fn prepare(entry: &DatasetEntry, base: &Path, m: &Manifest) -> Result<Vec<Prepared>> {
    match entry {
        DatasetEntry::Files {
            name,
            x,
            y,
            x_test,
            y_test,
        } => {
            let (xt, yd) = load_pair(&resolve(base, x), &resolve(base, y))?;
            match (x_test, y_test) {
                (Some(xt2), Some(yt2)) => {
                    let (test_x, test_y) = load_pair(&resolve(base, xt2), &resolve(base, yt2))?;
                    Ok(vec![Prepared {
                        name: name.clone(),
                        train_y: Response::Values {
                            names: (0..yd.ncols()).map(|j| format!("y{j}")).collect(),
                            data: yd,
                        },
                        train_x: xt,
                        test_x: test_x.data,
                        test_y,
                    }])
                }
                (None, None) => Ok(vec![spxy_prepared(name.clone(), xt.data, yd, m.test_fraction)?]),
                _ => Err(CliError::Config(format!(
                    "dataset {name:?}: give both x_test and y_test or neither"
                ))),
            }
        }
        DatasetEntry::PlantedDerivative {
            name,
            n,
            p,
            seeds,
            snr,
        } => seeds
            .iter()
            .map(|&s| {
                let (x, y) = planted_derivative(&SpectraConfig::new(*n, *p), &PlantConfig::new(*snr), s)?;
                spxy_prepared(format!("{name}#{s}"), x, y, m.test_fraction)
            })
            .collect(),
    }
}

/// Held-out RMSEP of every method on every dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchResults {
    pub datasets: Vec<String>,
    pub methods: Vec<String>,
    /// `rmsep[method][dataset]`.
    pub rmsep: Vec<Vec<f64>>,
}

impl BenchResults {
    pub fn to_csv(&self) -> Result<String> {
        io::csv_text(
            &["dataset".into(), "method".into(), "rmsep".into()],
            self.methods.iter().enumerate().flat_map(|(mi, m)| {
                self.datasets
                    .iter()
                    .enumerate()
                    .map(move |(di, d)| vec![d.clone(), m.clone(), format!("{:?}", self.rmsep[mi][di])])
            }),
        )
    }
}

/// Mean over response columns of the per-column RMSEP.
fn mean_rmsep(pred: &Mat, truth: &Mat) -> Result<f64> {
    let mut total = 0.0;
    for j in 0..truth.ncols() {
        let a: Vec<f64> = pred.column(j).iter().copied().collect();
        let b: Vec<f64> = truth.column(j).iter().copied().collect();
        total += stats::rmsep(&a, &b)?;
    }
    Ok(total / truth.ncols() as f64)
}

pub fn run(manifest: &Manifest, base: &Path) -> Result<BenchResults> {
    if manifest.datasets.is_empty() {
        return Err(CliError::Config("manifest lists no datasets".into()));
    }
    let mut labels = manifest.methods.clone();
    if !labels.contains(&manifest.reference) {
        labels.push(manifest.reference.clone());
    }
    let methods = labels
        .iter()
        .map(|l| parse_method(l, manifest))
        .collect::<Result<Vec<_>>>()?;
    let mut prepared = Vec::new();
    for entry in &manifest.datasets {
        prepared.extend(prepare(entry, base, manifest)?);
    }
    let mut rmsep = vec![Vec::with_capacity(prepared.len()); methods.len()];
    for d in &prepared {
        for (mi, m) in methods.iter().enumerate() {
            let fitted = commands::fit(&d.train_x, &d.train_y, &m.options)?;
            let l = &fitted.linear;
            let pred = opcal::pls::predict_linear(&l.coefficients, &l.x_mean, &l.y_mean, &d.test_x)?;
            rmsep[mi].push(mean_rmsep(&pred, &d.test_y)?);
        }
    }
    Ok(BenchResults {
        datasets: prepared.into_iter().map(|d| d.name).collect(),
        methods: labels,
        rmsep,
    })
}

/// Every method against the reference, Holm-adjusted as one family.
pub fn summarise(results: &BenchResults, reference: &str, bootstrap: usize, seed: u64) -> Result<Vec<(String, PairedSummary)>> {
    let ri = results
        .methods
        .iter()
        .position(|m| m == reference)
        .ok_or_else(|| CliError::Config(format!("reference {reference:?} was not run")))?;
    let mut names = Vec::new();
    let mut family = Vec::new();
    for (mi, m) in results.methods.iter().enumerate() {
        if mi == ri {
            continue;
        }
        family.push(stats::paired_summary(&results.rmsep[mi], &results.rmsep[ri], bootstrap, seed)?);
        names.push(format!("{m} vs {reference}"));
    }
    stats::holm_family(&mut family);
    Ok(names.into_iter().zip(family).collect())
}
