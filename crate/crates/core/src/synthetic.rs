//! Synthetic spectra with planted operator structure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::operators::LinOp;

/// Shape of the generated spectra.
#[derive(Debug, Clone)]
pub struct SpectraConfig {
    pub n: usize,
    pub p: usize,
    /// Upper bound on Gaussian bands per row (at least one is drawn).
    pub max_peaks: usize,
    /// Standard deviation of the channel noise.
    pub noise: f64,
    /// AR(1) coefficient of the channel noise along the wavelength axis.
    pub noise_corr: f64,
    /// Scale of the per-row offset and tilt.
    pub baseline: f64,
    /// Band widths are drawn uniformly from this range, as fractions of `p`.
    pub peak_width: (f64, f64),
}

impl SpectraConfig {
    pub fn new(n: usize, p: usize) -> Self {
        SpectraConfig {
            n,
            p,
            max_peaks: 5,
            noise: 0.002,
            noise_corr: 0.9,
            baseline: 1.0,
            peak_width: (1.0 / 80.0, 1.0 / 16.0),
        }
    }
}

/// Rows are sums of up to `max_peaks` Gaussian bands, a random offset and
/// tilt, and AR(1) correlated noise.
pub fn smooth_spectra(cfg: &SpectraConfig, rng: &mut ChaCha8Rng) -> Mat {
    let p = cfg.p as f64;
    let mut x = Mat::zeros(cfg.n, cfg.p);
    let innovation = (1.0 - cfg.noise_corr * cfg.noise_corr).max(0.0).sqrt();
    for i in 0..cfg.n {
        let peaks = rng.random_range(1..=cfg.max_peaks.max(1));
        for _ in 0..peaks {
            let height = rng.random_range(0.5..2.0);
            let centre = rng.random_range(0.0..p);
            let width = rng.random_range(cfg.peak_width.0 * p..cfg.peak_width.1 * p);
            for j in 0..cfg.p {
                let u = (j as f64 - centre) / width;
                x[(i, j)] += height * (-0.5 * u * u).exp();
            }
        }
        let offset: f64 = StandardNormal.sample(rng);
        let tilt: f64 = StandardNormal.sample(rng);
        let (offset, tilt) = (cfg.baseline * offset, cfg.baseline * tilt);
        let mut e: f64 = StandardNormal.sample(rng);
        for j in 0..cfg.p {
            let z: f64 = StandardNormal.sample(rng);
            e = cfg.noise_corr * e + innovation * z;
            x[(i, j)] += offset + tilt * (j as f64 / p) + cfg.noise * e;
        }
    }
    x
}

/// Central first difference along each row, one-sided at the ends.
pub fn first_derivative(x: &Mat) -> Mat {
    let p = x.ncols();
    Mat::from_fn(x.nrows(), p, |i, j| {
        if p < 2 {
            0.0
        } else if j == 0 {
            x[(i, 1)] - x[(i, 0)]
        } else if j == p - 1 {
            x[(i, p - 1)] - x[(i, p - 2)]
        } else {
            0.5 * (x[(i, j + 1)] - x[(i, j - 1)])
        }
    })
}

/// How a response is planted on the spectra.
#[derive(Debug, Clone)]
pub struct PlantConfig {
    /// `sd(signal) / sd(noise)`.
    pub snr: f64,
    /// Number of Gaussian bumps in the weight vector.
    pub bumps: usize,
    /// Bump width as a fraction of `p`.
    pub width: f64,
}

impl PlantConfig {
    pub fn new(snr: f64) -> Self {
        PlantConfig {
            snr,
            bumps: 5,
            width: 0.01,
        }
    }
}

/// Smooth weight vector: a few Gaussian bumps of random sign.
pub fn smooth_weights(p: usize, plant: &PlantConfig, rng: &mut ChaCha8Rng) -> Vector {
    let pf = p as f64;
    let mut w = Vector::zeros(p);
    for _ in 0..plant.bumps {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let centre = rng.random_range(0.1 * pf..0.9 * pf);
        let width = (plant.width * pf).max(1.0);
        for j in 0..p {
            let u = (j as f64 - centre) / width;
            w[j] += sign * (-0.5 * u * u).exp();
        }
    }
    w
}

/// `signal + noise` with noise scaled so `sd(signal)/sd(noise) = snr`.
fn add_noise(signal: &Vector, snr: f64, rng: &mut ChaCha8Rng) -> Result<Vector> {
    if !(snr > 0.0) {
        return Err(Error::config("snr", "must be positive"));
    }
    let n = signal.len() as f64;
    let mean = signal.sum() / n;
    let sd = (signal.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = sd / snr;
    Ok(Vector::from_fn(signal.len(), |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    }) + signal)
}

/// Spectra and a single response planted on their first derivative:
/// `y = ⟨D·x, w⟩ + noise` at the given SNR.
pub fn planted_derivative(cfg: &SpectraConfig, plant: &PlantConfig, seed: u64) -> Result<(Mat, Mat)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = smooth_spectra(cfg, &mut rng);
    let w = smooth_weights(cfg.p, plant, &mut rng);
    let signal = first_derivative(&x) * w;
    let y = add_noise(&signal, plant.snr, &mut rng)?;
    Ok((x, Mat::from_column_slice(cfg.n, 1, y.as_slice())))
}

/// Response planted on `chain` applied to the spectra: `y = ⟨A·x, w⟩ + noise`.
pub fn planted_operator(cfg: &SpectraConfig, op: &LinOp, plant: &PlantConfig, seed: u64) -> Result<(Mat, Mat)> {
    if op.p() != cfg.p {
        return Err(Error::dimension("planted operator channels", cfg.p, op.p()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = smooth_spectra(cfg, &mut rng);
    let w = smooth_weights(cfg.p, plant, &mut rng);
    let signal = op.apply_rows(&x)? * w;
    let y = add_noise(&signal, plant.snr, &mut rng)?;
    Ok((x, Mat::from_column_slice(cfg.n, 1, y.as_slice())))
}

/// Two classes split at the median of a planted-derivative score observed
/// with noise at the given SNR.
pub fn planted_derivative_classes(cfg: &SpectraConfig, plant: &PlantConfig, seed: u64) -> Result<(Mat, Vec<usize>)> {
    let (x, y) = planted_derivative(cfg, plant, seed)?;
    let mut sorted: Vec<f64> = y.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let cut = sorted[sorted.len() / 2];
    let labels = y.iter().map(|&v| usize::from(v >= cut)).collect();
    Ok((x, labels))
}
