use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use opcal::par;
use opcal_cli::benchmark::{self, Manifest};
use opcal_cli::commands::{self, FitOptions, Response};
use opcal_cli::io;
use opcal_cli::model::{Method, ModelFile, Task};
use opcal_cli::{CliError, Result};

/// Operator-adaptive PLS and Ridge calibration for spectra.
///
/// Derivative operators work on the channel index grid: the spacing between
/// channels is taken as 1, and any physical scale ends up in the coefficients.
#[derive(Parser)]
#[command(name = "opcal", version)]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write it as JSON.
    Fit(FitArgs),
    /// Predict new spectra with a saved model.
    Predict(PredictArgs),
    /// Write the cross-validated selection table without refitting.
    Screen(ScreenArgs),
    /// Run the numerical equivalence suite.
    Validate(ValidateArgs),
    /// Run methods over a dataset manifest and write the paired summary.
    Benchmark(BenchmarkArgs),
    /// Deterministic SPXY train/test split.
    Split(SplitArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    AomPls,
    AomRidge,
    Fastaom,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::AomPls => Method::AomPls,
            MethodArg::AomRidge => Method::AomRidge,
            MethodArg::Fastaom => Method::Fastaom,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Regression,
    Classification,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Regression => Task::Regression,
            TaskArg::Classification => Task::Classification,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// Spectra CSV: header row of wavelengths, optional leading `id` column.
    #[arg(long)]
    x: PathBuf,
    /// Responses CSV (numeric columns), or one label column for classification.
    #[arg(long)]
    y: PathBuf,
    #[arg(long, value_enum, default_value = "regression")]
    task: TaskArg,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "aom-pls")]
    method: MethodArg,
    /// `compact`, `identity`, or `;`-separated operator specs such as
    /// `savgol_deriv(window=11,order=2,deriv=1)`.
    #[arg(long, env = "OPCAL_BANK", default_value = commands::DEFAULT_BANK)]
    bank: String,
    #[arg(long, default_value_t = opcal::aom_pls::DEFAULT_FOLDS)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest component count tried by the PLS methods.
    #[arg(long)]
    k_max: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also write the selection table (chain survivors for fastaom).
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScreenArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of random (n, p, q) configurations.
    #[arg(long, default_value_t = 20)]
    configs: usize,
    /// Also write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// JSON manifest of methods and datasets.
    #[arg(long)]
    manifest: PathBuf,
    /// Paired summary CSV.
    #[arg(long)]
    out: PathBuf,
    /// Per-dataset RMSEP CSV.
    #[arg(long)]
    results: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Use SPXY (the only method; accepted for explicitness).
    #[arg(long, default_value_t = true)]
    spxy: bool,
    #[arg(long, default_value_t = 0.3)]
    test_fraction: f64,
    /// Directory receiving `train_indices.csv` and `test_indices.csv`.
    #[arg(long)]
    out_dir: PathBuf,
}

fn options(m: &ModelArgs, task: TaskArg) -> FitOptions {
    FitOptions {
        method: m.method.into(),
        task: task.into(),
        bank: m.bank.clone(),
        folds: m.folds,
        seed: m.seed,
        k_max: m.k_max,
    }
}

fn load_data(d: &DataArgs) -> Result<(io::Table, Response)> {
    let x = io::load_table(&d.x)?;
    let src = d.y.display().to_string();
    let y = match d.task {
        TaskArg::Regression => Response::numeric(&x, io::load_table(&d.y)?, &src)?,
        TaskArg::Classification => Response::labels(&x, io::load_labels(&d.y)?, &src)?,
    };
    Ok((x, y))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => io::write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Fit(a) => {
            let (x, y) = load_data(&a.data)?;
            let fitted = commands::fit(&x, &y, &options(&a.model, a.data.task))?;
            fitted.model.save(&a.out)?;
            if let Some(t) = &a.table {
                io::write_atomic(t, fitted.selection_csv.as_bytes())?;
            }
            let log = &fitted.model.operator_log;
            eprintln!("selected: {}", log.operators.join(" + "));
        }
        Command::Predict(a) => {
            let model = ModelFile::load(&a.model)?;
            let x = io::load_table(&a.x)?;
            let pred = commands::predict(&model, &x)?;
            io::write_atomic(&a.out, commands::prediction_csv(&pred, x.ids.as_deref())?.as_bytes())?;
        }
        Command::Screen(a) => {
            let (x, y) = load_data(&a.data)?;
            let csv = commands::screen(&x, &y, &options(&a.model, a.data.task))?;
            write_or_print(a.out.as_deref(), &csv)?;
        }
        Command::Validate(a) => {
            let report = commands::validate(a.seed, a.configs)?;
            print!("{}", report.to_text());
            if let Some(p) = &a.csv {
                io::write_atomic(p, report.to_csv().as_bytes())?;
            }
            if !report.passed() {
                eprintln!("equivalence suite FAILED");
                return Ok(ExitCode::from(4));
            }
            println!("equivalence suite passed ({} rows)", report.rows.len());
        }
        Command::Benchmark(a) => {
            let manifest = Manifest::load(&a.manifest)?;
            let base = a.manifest.parent().unwrap_or(Path::new("."));
            let results = benchmark::run(&manifest, base)?;
            if let Some(p) = &a.results {
                io::write_atomic(p, results.to_csv()?.as_bytes())?;
            }
            let rows = benchmark::summarise(&results, &manifest.reference, manifest.bootstrap, manifest.seed)?;
            let csv = opcal::stats::summary_csv(&rows);
            io::write_atomic(&a.out, csv.as_bytes())?;
            print!("{csv}");
        }
        Command::Split(a) => {
            if !a.spxy {
                return Err(CliError::Config("only SPXY splitting is available".into()));
            }
            let (x, y) = load_data(&a.data)?;
            let split = commands::split(&x, &y, a.test_fraction)?;
            if split.degenerate {
                eprintln!("warning: all samples coincide; split follows row order");
            }
            std::fs::create_dir_all(&a.out_dir).map_err(|source| CliError::Io {
                path: a.out_dir.clone(),
                source,
            })?;
            let ids = x.ids.as_deref();
            io::write_atomic(
                &a.out_dir.join("train_indices.csv"),
                commands::index_csv(&split.train, ids)?.as_bytes(),
            )?;
            io::write_atomic(
                &a.out_dir.join("test_indices.csv"),
                commands::index_csv(&split.test, ids)?.as_bytes(),
            )?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads;
    let outcome = match threads {
        Some(t) => par::with_threads(t, || run(cli)),
        None => run(cli),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
