//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without a test harness so the lines print in order.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use opcal::aom_pls::{fit_aom_pls_with_plan, screen_bank};
use opcal::aom_ridge::{default_alpha_grid, fit_aom_ridge_with_plan};
use opcal::fastaom::{chain_operator, kkt_residual, nnls, screen_chains, SCORE_OVERSHOOT_TOL};
use opcal::linalg::{self, Mat, Vector};
use opcal::oracle::{self, cv_pls, cv_ridge, explicit_grid};
use opcal::stats::{self, bank_gram, vertex_check_gram, VERTEX_TOL};
use opcal::synthetic::{planted_derivative, planted_operator, PlantConfig, SpectraConfig};
use opcal::{
    center, compact_bank, cross_covariance, fit_aom_pls, AomPlsConfig, AomRidgeConfig, FastAomConfig,
    OperatorBank, OperatorSpec,
};
use opcal_cli::io::{load_table, table_csv};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let sizes = oracle::random_sizes(20, 0);
    let report = oracle::equivalence_suite(0, &sizes);
    let elapsed = start.elapsed();
    let mut worst: Vec<(String, f64, f64)> = Vec::new();
    for r in &report.rows {
        match worst.iter_mut().find(|w| w.0 == r.check) {
            Some(w) => w.1 = w.1.max(r.discrepancy),
            None => worst.push((r.check.clone(), r.discrepancy, r.threshold)),
        }
    }
    let failed = report.rows.iter().filter(|r| !r.pass).count();
    let summary: Vec<String> = worst.iter().map(|(c, d, t)| format!("{c} {d:.1e}/{t:.0e}")).collect();
    outcome(
        report.passed() && sizes.len() >= 20 && elapsed <= Duration::from_secs(60),
        format!(
            "{} configs, {} rows, {failed} failed, {:.1}s; {}",
            sizes.len(),
            report.rows.len(),
            elapsed.as_secs_f64(),
            summary.join(", ")
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_pls = 0.0_f64;
    let mut worst_ridge = 0.0_f64;
    let mut params_agree = true;
    for trial in 0..10 {
        let n = rng.random_range(30..=120);
        let p = rng.random_range(20..=150);
        let q = rng.random_range(1..=2);
        let x = random(n, p, &mut rng);
        let y = random(n, q, &mut rng);
        let plan = oracle::plan(n, 5, trial).expect("plan");
        let aom = fit_aom_pls_with_plan(&x, &y, &AomPlsConfig::new(OperatorBank::identity_only(p)), &plan).expect("aom pls");
        let plain = cv_pls(&x, &y, 15, &plan).expect("plain pls");
        params_agree &= aom.n_components as f64 == plain.param;
        worst_pls = worst_pls.max(linalg::max_abs(&(&aom.coefficients - &plain.coefficients)));

        let ridge =
            fit_aom_ridge_with_plan(&x, &y, &AomRidgeConfig::new(OperatorBank::identity_only(p)), &plan).expect("aom ridge");
        let plain = cv_ridge(&x, &y, &default_alpha_grid(), &plan).expect("plain ridge");
        params_agree &= ridge.alpha == plain.param;
        worst_ridge = worst_ridge.max(linalg::max_abs(&(&ridge.coefficients - &plain.coefficients)));
    }
    outcome(
        params_agree && worst_pls <= 1e-12 && worst_ridge <= 1e-12,
        format!("10 datasets; PLS max |dB| {worst_pls:.1e}, Ridge max |dB| {worst_ridge:.1e}, same K/alpha: {params_agree}"),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let (n, p) = (150, 256);
    let cfg = SpectraConfig::new(n, p);
    let plant = PlantConfig::new(10.0);
    let bank = compact_bank(p);
    let derivative: Vec<usize> = bank
        .specs()
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(s, OperatorSpec::SavgolDeriv { deriv: 1, .. } | OperatorSpec::FiniteDiffFirst))
        .map(|(i, _)| i)
        .collect();
    let (mut hits, mut wins) = (0, 0);
    let mut ratios = Vec::new();
    let seeds = 50;
    for seed in 0..seeds {
        let (x, y) = planted_derivative(&cfg, &plant, seed).expect("planted data");
        let split = stats::spxy_split(&x, &y, 1.0 / 3.0).expect("split");
        let xtr = linalg::select_rows(&x, &split.train);
        let ytr = linalg::select_rows(&y, &split.train);
        let xte = linalg::select_rows(&x, &split.test);
        let yte = linalg::select_rows(&y, &split.test);
        let mut aom_cfg = AomPlsConfig::new(bank.clone());
        aom_cfg.seed = seed;
        let mut id_cfg = AomPlsConfig::new(OperatorBank::identity_only(p));
        id_cfg.seed = seed;
        let aom = fit_aom_pls(&xtr, &ytr, &aom_cfg).expect("aom fit");
        let plain = fit_aom_pls(&xtr, &ytr, &id_cfg).expect("identity fit");
        let r_aom = stats::rmsep(aom.predict(&xte).expect("predict").as_slice(), yte.as_slice()).expect("rmsep");
        let r_id = stats::rmsep(plain.predict(&xte).expect("predict").as_slice(), yte.as_slice()).expect("rmsep");
        hits += usize::from(derivative.contains(&aom.operator_id));
        wins += usize::from(r_aom < r_id);
        ratios.push(r_aom / r_id);
    }
    let elapsed = start.elapsed();
    let need = (0.8 * seeds as f64).ceil() as usize;
    outcome(
        hits >= need && wins >= need && elapsed <= Duration::from_secs(300),
        format!(
            "derivative selected {hits}/{seeds}, beats identity {wins}/{seeds}, median ratio {:.3}, {:.1}s",
            stats::median(&ratios),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = f64::NEG_INFINITY;
    let mut held = 0;
    for seed in 0..100 {
        let m = random(5, 5, &mut rng);
        let g = m.tr_mul(&m);
        let r = vertex_check_gram(&g, 100_000, seed);
        worst = worst.max(r.best_interior - r.vertex_max);
        held += usize::from(r.holds);
    }
    let mut bank_held = 0;
    for seed in 0..100 {
        let n = rng.random_range(20..=60);
        let p = rng.random_range(30..=80);
        let q = rng.random_range(1..=2);
        let d = center(&random(n, p, &mut rng), &random(n, q, &mut rng)).expect("centre");
        let bank = compact_bank(p);
        let g = bank_gram(&bank, &cross_covariance(&d)).expect("gram");
        let r = vertex_check_gram(&g, 10_000, seed);
        worst = worst.max(r.best_interior - r.vertex_max);
        bank_held += usize::from(r.holds);
    }
    outcome(
        held == 100 && bank_held == 100 && worst <= VERTEX_TOL,
        format!("random PSD {held}/100, bank-built {bank_held}/100, max(interior - vertex) {worst:.2e}"),
    )
}

fn criterion_5() -> Outcome {
    let ratio = stats::winner_bias(1500, 1.0, 1).expect("bias") / stats::winner_bias(135, 1.0, 1).expect("bias");
    let analytic = (1500f64.ln() / 135f64.ln()).sqrt();
    outcome(
        (ratio - 1.22).abs() <= 0.005 && (ratio - analytic).abs() <= 1e-12,
        format!("ratio {ratio:.6} (analytic {analytic:.6})"),
    )
}

fn time_once(f: impl FnOnce()) -> f64 {
    let t = Instant::now();
    f();
    t.elapsed().as_secs_f64()
}

fn criterion_6() -> Outcome {
    let p = 500;
    let bank = compact_bank(p);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let covs: Vec<_> = [500, 5000]
        .into_iter()
        .map(|n| cross_covariance(&center(&random(n, p, &mut rng), &random(n, 1, &mut rng)).expect("centre")))
        .collect();
    // Interleaved rounds so drift in machine load hits both sizes alike.
    let mut timings = [f64::INFINITY; 2];
    for round in 0..200 {
        for i in [round % 2, 1 - round % 2] {
            timings[i] = timings[i].min(time_once(|| {
                for _ in 0..20 {
                    std::hint::black_box(screen_bank(&covs[i], &bank).expect("screen"));
                }
            }));
        }
    }
    let ratio = timings[1] / timings[0];

    let (n, p) = (80, 120);
    let x = random(n, p, &mut rng);
    let y = random(n, 1, &mut rng);
    let plan = oracle::plan(n, 5, 0).expect("plan");
    let aom = fit_aom_pls_with_plan(&x, &y, &AomPlsConfig::new(compact_bank(p)), &plan).expect("aom fit");
    let aom_extractions = aom.selection.as_ref().expect("table").extractions;
    let grid = explicit_grid(&x, &y, &compact_bank(p), 120, 15, &plan).expect("grid");
    outcome(
        ratio <= 1.2 && aom_extractions <= 45 && grid.extractions >= 600,
        format!(
            "screen time n=5000/n=500 {ratio:.3} ({:.1}us vs {:.1}us per bank); extractions {aom_extractions} vs explicit grid {}",
            timings[1] / 20.0 * 1e6,
            timings[0] / 20.0 * 1e6,
            grid.extractions
        ),
    )
}

fn criterion_7() -> Outcome {
    let (n, p) = (150, 256);
    let bank = compact_bank(p);
    let planted = vec![4, 2];
    let op = chain_operator(&bank, &planted).expect("chain");
    let mut cfg = SpectraConfig::new(n, p);
    cfg.baseline = 20.0;
    cfg.noise = 0.1;
    let plant = PlantConfig::new(10.0);
    let mut in_range = true;
    let mut worst_raw = 0.0_f64;
    let mut hits = 0;
    let seeds = 50;
    for seed in 0..seeds {
        let (x, y) = planted_operator(&cfg, &op, &plant, seed).expect("planted data");
        let mut fc = FastAomConfig::new(bank.clone());
        fc.seed = seed;
        let ranked = screen_chains(&x, &y, &fc).expect("screen");
        in_range &= ranked.iter().all(|c| (0.0..=1.0).contains(&c.score));
        worst_raw = worst_raw.max(ranked.iter().map(|c| c.raw_score).fold(0.0, f64::max));
        hits += usize::from(ranked.iter().take(fc.top_m).any(|c| c.chain == planted));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_kkt = 0.0_f64;
    for _ in 0..200 {
        let rows = rng.random_range(5..=60);
        let cols = rng.random_range(1..=12);
        let m = random(rows, cols, &mut rng);
        let b = Vector::from_fn(rows, |_, _| rng.random_range(-1.0..1.0));
        let w = nnls(&m, &b).expect("nnls");
        worst_kkt = worst_kkt.max(kkt_residual(&m, &b, &w));
    }
    let need = (0.8 * seeds as f64).ceil() as usize;
    outcome(
        in_range && worst_raw <= 1.0 + SCORE_OVERSHOOT_TOL && hits >= need && worst_kkt <= 1e-8,
        format!(
            "scores in [0,1]: {in_range} (max raw {worst_raw:.6}); planted chain in top-8 {hits}/{seeds}; NNLS max KKT {worst_kkt:.1e} over 200 instances"
        ),
    )
}

fn criterion_8() -> Outcome {
    let b: Vec<f64> = (1..=20).map(|i| 0.5 + 0.1 * i as f64).collect();
    let a: Vec<f64> = b.iter().map(|v| 0.9 * v).collect();
    let s = stats::paired_summary(&a, &b, 10_000, 0).expect("summary");
    let holm = stats::holm(&[0.01, 0.04]);
    let holm_ok = (holm[0] - 0.02).abs() <= 1e-15 && (holm[1] - 0.04).abs() <= 1e-15;
    outcome(
        (s.median_ratio - 0.9).abs() <= 1e-12 && s.wins == 20 && s.p_one_sided < 1e-4 && holm_ok,
        format!(
            "median {:.6}, wins {}, one-sided p {:.2e}; Holm {{0.01,0.04}} -> {{{},{}}}",
            s.median_ratio, s.wins, s.p_one_sided, holm[0], holm[1]
        ),
    )
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let (n, p) = (90, 64);
    let (x, y) = planted_derivative(&SpectraConfig::new(n, p), &PlantConfig::new(10.0), 9).expect("data");
    let header: Vec<String> = (0..p).map(|j| format!("{}", 1000 + 4 * j)).collect();
    let xp = dir.path().join("x.csv");
    let yp = dir.path().join("y.csv");
    std::fs::write(&xp, table_csv(&header, None, &x).expect("csv")).expect("write");
    std::fs::write(&yp, table_csv(&["y".into()], None, &y).expect("csv")).expect("write");
    let bin = env!("CARGO_BIN_EXE_opcal");
    let run = |args: &[&str]| Command::new(bin).args(args).env_remove("OPCAL_BANK").output().expect("binary runs");
    let path = |name: &str| dir.path().join(name).to_str().expect("utf-8 path").to_string();
    let xs = xp.to_str().expect("utf-8 path");
    let ys = yp.to_str().expect("utf-8 path");

    let mut stable = true;
    let mut detail = Vec::new();
    for method in ["aom-pls", "aom-ridge", "fastaom"] {
        let model = path(&format!("{method}.json"));
        let pred = path(&format!("{method}.csv"));
        let fit = run(&["fit", "--method", method, "--x", xs, "--y", ys, "--out", &model]);
        let predict = run(&["predict", "--model", &model, "--x", xs, "--out", &pred]);
        if !fit.status.success() || !predict.status.success() {
            stable = false;
            detail.push(format!("{method}: command failed"));
            continue;
        }
        // in-process fit on the same data, compared bit for bit
        let table = load_table(&xp).expect("reload");
        let yt = opcal_cli::commands::Response::numeric(&table, load_table(&yp).expect("reload"), "y").expect("align");
        let method_tag = match method {
            "aom-pls" => opcal_cli::model::Method::AomPls,
            "aom-ridge" => opcal_cli::model::Method::AomRidge,
            _ => opcal_cli::model::Method::Fastaom,
        };
        let fitted = opcal_cli::commands::fit(&table, &yt, &opcal_cli::commands::FitOptions::new(method_tag)).expect("fit");
        let l = &fitted.linear;
        let direct = opcal::pls::predict_linear(&l.coefficients, &l.x_mean, &l.y_mean, &table.data).expect("predict");
        let written = load_table(std::path::Path::new(&pred)).expect("predictions");
        let same = written.data.iter().zip(direct.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
        stable &= same;
        detail.push(format!("{method} bit-exact: {same}"));
    }
    let validate = run(&["validate"]);
    let code = validate.status.code();
    detail.push(format!("validate exit {code:?}"));
    outcome(stable && code == Some(0), detail.join("; "))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("equivalence suite", criterion_1),
        ("identity reduction", criterion_2),
        ("planted-operator recovery", criterion_3),
        ("vertex optimum", criterion_4),
        ("winner-bias ratio", criterion_5),
        ("budget scaling", criterion_6),
        ("FastAOM scores, recovery, NNLS", criterion_7),
        ("paired statistics", criterion_8),
        ("CLI round trip", criterion_9),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failures += usize::from(!o.pass);
        println!("{} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("SKIP [10] binding parity: secondary component, not part of this build");
    if failures == 0 {
        println!("acceptance: all {} criteria passed", criteria.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria failed");
        ExitCode::FAILURE
    }
}
