//! Fold plans, SPXY splitting, metrics, paired-benchmark statistics and the
//! two selection diagnostics (winner's-curse bias and vertex optimum).

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::operators::OperatorBank;
use crate::par;
use crate::pls::CrossCov;

/// One train/validation partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Deterministic cross-validation structure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
    pub seed: u64,
    pub stratified: bool,
}

impl FoldPlan {
    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }
}

fn folds_from_assignment(n: usize, k: usize, assign: &[usize]) -> Vec<Fold> {
    (0..k)
        .map(|f| {
            let (validation, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| assign[i] == f);
            Fold { train, validation }
        })
        .collect()
}

/// Seeded shuffle followed by `k` contiguous blocks of near-equal size.
///
/// With `labels`, the shuffle is done per class and the classes are dealt
/// round-robin over the folds, so every fold holds each class's share to
/// within one sample.
pub fn kfold_plan(n: usize, k: usize, seed: u64, labels: Option<&[usize]>) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::config("folds", format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::config("folds", format!("{k} folds exceed {n} samples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = vec![0usize; n];
    match labels {
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let base = n / k;
            let extra = n % k;
            let mut pos = 0;
            for f in 0..k {
                let size = base + usize::from(f < extra);
                for &i in &idx[pos..pos + size] {
                    assign[i] = f;
                }
                pos += size;
            }
        }
        Some(labels) => {
            if labels.len() != n {
                return Err(Error::dimension("kfold labels", n, labels.len()));
            }
            let mut classes: Vec<usize> = labels.to_vec();
            classes.sort_unstable();
            classes.dedup();
            let mut dealt = 0usize;
            for c in classes {
                let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                if members.len() < k {
                    return Err(Error::Data(format!(
                        "class {c} has {} samples, fewer than {k} folds",
                        members.len()
                    )));
                }
                members.shuffle(&mut rng);
                for i in members {
                    assign[i] = dealt % k;
                    dealt += 1;
                }
            }
        }
    }
    Ok(FoldPlan {
        folds: folds_from_assignment(n, k, &assign),
        seed,
        stratified: labels.is_some(),
    })
}

/// Result of an SPXY partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// All pairwise distances were zero and index order was used.
    pub degenerate: bool,
}

fn pairwise_euclidean(m: &Mat) -> Vec<f64> {
    let n = m.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).iter().copied().collect()).collect();
    let lines = par::map_range(n, |i| {
        (0..n)
            .map(|j| {
                rows[i]
                    .iter()
                    .zip(&rows[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect::<Vec<f64>>()
    });
    lines.into_iter().flatten().collect()
}

fn test_count(n: usize, test_fraction: f64) -> Result<usize> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config("test_fraction", format!("must be in (0, 1), got {test_fraction}")));
    }
    if n < 3 {
        return Err(Error::Data(format!("SPXY needs at least 3 samples, got {n}")));
    }
    let t = (test_fraction * n as f64).round() as usize;
    Ok(t.clamp(1, n - 2))
}

/// Max-min selection on a precomputed distance matrix.
fn max_min_select(n: usize, dist: &[f64], quota: usize) -> (Vec<usize>, bool) {
    let mut best = (0usize, 1usize, -1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if dist[i * n + j] > best.2 {
                best = (i, j, dist[i * n + j]);
            }
        }
    }
    if best.2 <= 0.0 {
        return ((0..quota).collect(), true);
    }
    let mut chosen = vec![false; n];
    let mut selected = vec![best.0, best.1];
    chosen[best.0] = true;
    chosen[best.1] = true;
    let mut min_d: Vec<f64> = (0..n)
        .map(|c| dist[c * n + best.0].min(dist[c * n + best.1]))
        .collect();
    while selected.len() < quota {
        let mut pick = None;
        let mut pick_d = -1.0;
        for c in 0..n {
            if !chosen[c] && min_d[c] > pick_d {
                pick = Some(c);
                pick_d = min_d[c];
            }
        }
        let Some(c) = pick else { break };
        chosen[c] = true;
        selected.push(c);
        for o in 0..n {
            min_d[o] = min_d[o].min(dist[o * n + c]);
        }
    }
    selected.sort_unstable();
    (selected, false)
}

/// SPXY partition on joint distances `d_X/max d_X + d_y/max d_y`.
///
/// The two most distant samples seed the training set; the sample whose
/// minimum distance to the training set is largest is added until the
/// training quota is met. Fully deterministic.
pub fn spxy_split(x: &Mat, y: &Mat, test_fraction: f64) -> Result<Split> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::dimension("spxy rows of y", n, y.nrows()));
    }
    let n_test = test_count(n, test_fraction)?;
    let dx = pairwise_euclidean(x);
    let dy = pairwise_euclidean(y);
    let mx = dx.iter().cloned().fold(0.0, f64::max);
    let my = dy.iter().cloned().fold(0.0, f64::max);
    let dist: Vec<f64> = dx
        .iter()
        .zip(&dy)
        .map(|(a, b)| {
            let ax = if mx > 0.0 { a / mx } else { 0.0 };
            let by = if my > 0.0 { b / my } else { 0.0 };
            ax + by
        })
        .collect();
    let (train, degenerate) = max_min_select(n, &dist, n - n_test);
    let test = (0..n).filter(|i| train.binary_search(i).is_err()).collect();
    Ok(Split {
        train,
        test,
        degenerate,
    })
}

/// SPXY within each class (X distances only); classes with fewer than two
/// members go to training.
pub fn spxy_split_stratified(x: &Mat, labels: &[usize], test_fraction: f64) -> Result<Split> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(Error::dimension("spxy labels", n, labels.len()));
    }
    let _ = test_count(n.max(3), test_fraction)?;
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut degenerate = false;
    for c in classes {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        let m = members.len();
        let n_test = ((test_fraction * m as f64).round() as usize).min(m.saturating_sub(2));
        if n_test == 0 {
            train.extend(&members);
            continue;
        }
        let sub = crate::linalg::select_rows(x, &members);
        let dist = pairwise_euclidean(&sub);
        let mx = dist.iter().cloned().fold(0.0, f64::max);
        let dist: Vec<f64> = dist.iter().map(|d| if mx > 0.0 { d / mx } else { 0.0 }).collect();
        let (sel, deg) = max_min_select(m, &dist, m - n_test);
        degenerate |= deg;
        for (local, &global) in members.iter().enumerate() {
            if sel.binary_search(&local).is_ok() {
                train.push(global);
            } else {
                test.push(global);
            }
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train,
        test,
        degenerate,
    })
}

/// Root-mean-square error over all entries.
pub fn rmsep(yhat: &[f64], y: &[f64]) -> Result<f64> {
    if yhat.is_empty() {
        return Err(Error::Data("rmsep of empty input".into()));
    }
    if yhat.len() != y.len() {
        return Err(Error::dimension("rmsep lengths", y.len(), yhat.len()));
    }
    let ss: f64 = yhat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / y.len() as f64).sqrt())
}

/// Mean over the classes present in `truth` of per-class recall.
pub fn balanced_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Data("balanced accuracy of empty input".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::dimension("balanced accuracy lengths", truth.len(), pred.len()));
    }
    let mut classes = truth.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let recall_sum: f64 = classes
        .iter()
        .map(|&c| {
            let total = truth.iter().filter(|&&t| t == c).count();
            let hit = truth.iter().zip(pred).filter(|(&t, &p)| t == c && p == c).count();
            hit as f64 / total as f64
        })
        .sum();
    Ok(recall_sum / classes.len() as f64)
}

/// Paired comparison of a row method (`a`) against a reference (`b`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSummary {
    pub n: usize,
    pub median_ratio: f64,
    /// Number of pairs with ratio below one.
    pub wins: usize,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// One-sided Wilcoxon signed-rank p-value for "ratio below one".
    pub p_one_sided: f64,
    /// Holm-adjusted p-value, set by [`holm_family`].
    pub p_holm: Option<f64>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

const BOOTSTRAP_CHUNK: usize = 256;

/// Percentile bootstrap 95% interval of the median of `values`.
pub fn bootstrap_median_ci(values: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    let n = values.len();
    let chunks = resamples.div_ceil(BOOTSTRAP_CHUNK);
    let medians: Vec<f64> = par::map_range(chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let count = BOOTSTRAP_CHUNK.min(resamples - c * BOOTSTRAP_CHUNK);
        let mut buf = vec![0.0; n];
        (0..count)
            .map(|_| {
                for b in buf.iter_mut() {
                    *b = values[rng.random_range(0..n)];
                }
                median(&buf)
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    let mut sorted = medians;
    sorted.sort_by(|a, b| a.total_cmp(b));
    (quantile_sorted(&sorted, 0.025), quantile_sorted(&sorted, 0.975))
}

/// Largest sample size for which the exact null distribution is used.
pub const WILCOXON_EXACT_MAX: usize = 25;
/// Differences with `|d|` below this are zeros; absolute values closer than
/// this relative gap share an averaged rank.
const TIE_TOL: f64 = 1e-12;

/// One-sided Wilcoxon signed-rank test of "differences tend to be negative".
///
/// Zero differences are dropped; tied magnitudes receive averaged ranks.
/// The exact null distribution (over half-integer rank sums) is used for up
/// to [`WILCOXON_EXACT_MAX`] non-zero pairs, and the tie-corrected normal
/// approximation with continuity correction above that. Returns 1 when
/// every difference is zero.
pub fn wilcoxon_signed_rank_less(diffs: &[f64]) -> f64 {
    let mut nz: Vec<f64> = diffs.iter().copied().filter(|d| d.abs() > TIE_TOL).collect();
    let n = nz.len();
    if n == 0 {
        return 1.0;
    }
    nz.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let mut ranks = vec![0.0; n];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && (nz[j].abs() - nz[i].abs()) <= TIE_TOL * nz[j].abs().max(1.0) {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for r in ranks.iter_mut().take(j).skip(i) {
            *r = avg;
        }
        tie_sizes.push(j - i);
        i = j;
    }
    let w_plus: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();

    if n <= WILCOXON_EXACT_MAX {
        // Doubled ranks are integers.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut counts = vec![0.0f64; total + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let obs = (2.0 * w_plus).round() as usize;
        let below: f64 = counts[..=obs.min(total)].iter().sum();
        return (below / 2f64.powi(n as i32)).min(1.0);
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_adj: f64 = tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_adj;
    if var <= 0.0 {
        return 1.0;
    }
    let z = (w_plus - mean + 0.5) / var.sqrt();
    Normal::standard().cdf(z)
}

/// Holm step-down adjustment; output is in input order.
pub fn holm(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut out = vec![0.0; m];
    let mut running = 0.0_f64;
    for (rank, &i) in order.iter().enumerate() {
        let adj = ((m - rank) as f64 * p[i]).min(1.0);
        running = running.max(adj);
        out[i] = running;
    }
    out
}

/// Set `p_holm` across a declared family of comparisons.
pub fn holm_family(family: &mut [PairedSummary]) {
    let p: Vec<f64> = family.iter().map(|s| s.p_one_sided).collect();
    for (s, adj) in family.iter_mut().zip(holm(&p)) {
        s.p_holm = Some(adj);
    }
}

/// Paired ratios `a_i / b_i`: median, wins, bootstrap CI and one-sided
/// Wilcoxon on log-ratios.
pub fn paired_summary(a: &[f64], b: &[f64], bootstrap_n: usize, seed: u64) -> Result<PairedSummary> {
    if a.len() != b.len() {
        return Err(Error::dimension("paired_summary lengths", a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::Data("paired_summary of empty input".into()));
    }
    if let Some((i, _)) = a.iter().zip(b).enumerate().find(|(_, (x, y))| !(**x > 0.0 && **y > 0.0)) {
        return Err(Error::Data(format!("pair {i} has a non-positive metric")));
    }
    let ratios: Vec<f64> = a.iter().zip(b).map(|(x, y)| x / y).collect();
    let med = median(&ratios);
    let wins = ratios.iter().filter(|&&r| r < 1.0).count();
    let (lo, hi) = bootstrap_median_ci(&ratios, bootstrap_n.max(1), seed);
    let logs: Vec<f64> = ratios.iter().map(|r| r.ln()).collect();
    Ok(PairedSummary {
        n: ratios.len(),
        median_ratio: med,
        wins,
        ci_lo: lo.min(med),
        ci_hi: hi.max(med),
        p_one_sided: wilcoxon_signed_rank_less(&logs),
        p_holm: None,
    })
}

/// CSV table: comparison, N, median ratio, CI, wins, p-values.
pub fn summary_csv(rows: &[(String, PairedSummary)]) -> String {
    let mut out = String::from("comparison,n,median_ratio,ci_lo,ci_hi,wins,p_one_sided,p_holm\n");
    for (name, s) in rows {
        let holm = s.p_holm.map(|p| format!("{p:e}")).unwrap_or_default();
        out.push_str(&format!(
            "{name},{},{:.6},{:.6},{:.6},{},{:e},{holm}\n",
            s.n, s.median_ratio, s.ci_lo, s.ci_hi, s.wins, s.p_one_sided
        ));
    }
    out
}

/// Leading extreme-value optimism of the minimum of `b` noisy validation
/// scores with spread `sigma` over `n_holdout` samples:
/// `σ/√n · √(2 ln B)`.
pub fn winner_bias(b: usize, sigma: f64, n_holdout: usize) -> Result<f64> {
    if b < 2 || !(sigma > 0.0) || n_holdout == 0 {
        return Err(Error::config(
            "winner_bias",
            format!("need B >= 2, sigma > 0, n_holdout >= 1 (got {b}, {sigma}, {n_holdout})"),
        ));
    }
    Ok(sigma / (n_holdout as f64).sqrt() * (2.0 * (b as f64).ln()).sqrt())
}

/// Outcome of comparing the simplex vertices of `f(α) = αᵀGα` with random
/// interior points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexReport {
    pub vertex_max: f64,
    pub best_vertex: usize,
    pub best_interior: f64,
    pub holds: bool,
}

/// Tolerance for `max vertex >= max sampled`.
pub const VERTEX_TOL: f64 = 1e-9;
const VERTEX_CHUNK: usize = 1024;

/// Vertex check on an explicit Gram matrix.
pub fn vertex_check_gram(g: &DMatrix<f64>, sample_count: usize, seed: u64) -> VertexReport {
    let b = g.nrows();
    let (best_vertex, vertex_max) = (0..b)
        .map(|i| (i, g[(i, i)]))
        .fold((0, f64::NEG_INFINITY), |a, c| if c.1 > a.1 { c } else { a });
    let chunks = sample_count.div_ceil(VERTEX_CHUNK);
    let best_interior = par::map_range(chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let count = VERTEX_CHUNK.min(sample_count - c * VERTEX_CHUNK);
        let mut alpha = vec![0.0; b];
        let mut best = f64::NEG_INFINITY;
        for _ in 0..count {
            let mut total = 0.0;
            for a in alpha.iter_mut() {
                *a = rng.sample::<f64, _>(Exp1);
                total += *a;
            }
            alpha.iter_mut().for_each(|a| *a /= total);
            let mut f = 0.0;
            for i in 0..b {
                for j in 0..b {
                    f += alpha[i] * g[(i, j)] * alpha[j];
                }
            }
            best = best.max(f);
        }
        best
    })
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max);
    VertexReport {
        vertex_max,
        best_vertex,
        best_interior,
        holds: vertex_max >= best_interior - VERTEX_TOL,
    }
}

/// `G_bc = ⟨A_b·S, A_c·S⟩_F` for a bank.
pub fn bank_gram(bank: &OperatorBank, s: &CrossCov) -> Result<DMatrix<f64>> {
    let screened = bank
        .ops()
        .iter()
        .map(|op| op.apply_forward(&s.s))
        .collect::<Result<Vec<_>>>()?;
    let b = screened.len();
    Ok(DMatrix::from_fn(b, b, |i, j| screened[i].dot(&screened[j])))
}

/// Vertex check for the covariance objective of a bank.
pub fn vertex_check(bank: &OperatorBank, s: &CrossCov, sample_count: usize, seed: u64) -> Result<VertexReport> {
    if bank.is_empty() {
        return Err(Error::config("bank", "empty"));
    }
    Ok(vertex_check_gram(&bank_gram(bank, s)?, sample_count, seed))
}
