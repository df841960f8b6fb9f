//! Seeded randomized truncated SVD.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

const OVERSAMPLE: usize = 10;
const ENERGY_TOL: f64 = 1e-14;
const MAX_ITER: usize = 1000;

/// Rank-`r` factors `M ≈ U·diag(σ)·Vᵀ`.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: Mat,
    pub sigma: Vector,
    pub v: Mat,
    /// Subspace iterations performed; 0 when an exact SVD was used.
    pub iterations: usize,
}

fn orthonormal_range(m: Mat) -> Mat {
    m.qr().q()
}

fn svd_sorted(m: &Mat) -> Result<(Mat, Vector, Mat)> {
    let svd = m.clone().svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u = svd.u.ok_or_else(|| Error::Numeric("SVD did not return U".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Numeric("SVD did not return V".into()))?;
    let u = Mat::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]);
    let v = Mat::from_fn(vt.ncols(), order.len(), |i, j| vt[(order[j], i)]);
    let s = Vector::from_iterator(order.len(), order.iter().map(|&k| svd.singular_values[k]));
    Ok((u, s, v))
}

fn truncate(u: Mat, s: Vector, v: Mat, rank: usize, iterations: usize) -> TruncatedSvd {
    TruncatedSvd {
        u: u.columns(0, rank).into_owned(),
        sigma: s.rows(0, rank).into_owned(),
        v: v.columns(0, rank).into_owned(),
        iterations,
    }
}

/// Leading `rank` singular triplets of `m`.
///
/// Uses subspace iteration on a Gaussian start of width `rank + 10` until
/// the captured energy `Σσ²` stops changing; falls back to an exact SVD
/// when that width already covers `min(n, p)`.
pub fn truncated_svd(m: &Mat, rank: usize, seed: u64) -> Result<TruncatedSvd> {
    let (n, p) = m.shape();
    let full = n.min(p);
    if rank == 0 || rank > full {
        return Err(Error::config("svd_rank", format!("must be in 1..={full}, got {rank}")));
    }
    let width = rank + OVERSAMPLE;
    if width >= full {
        let (u, s, v) = svd_sorted(m)?;
        return Ok(truncate(u, s, v, rank, 0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = Mat::from_fn(p, width, |_, _| StandardNormal.sample(&mut rng));
    let mut q = orthonormal_range(m * omega);
    let mut last_energy = f64::NAN;
    for it in 1..=MAX_ITER {
        let z = orthonormal_range(m.tr_mul(&q));
        q = orthonormal_range(m * z);
        let b = q.tr_mul(m);
        let (ub, s, v) = svd_sorted(&b)?;
        let energy: f64 = s.rows(0, rank).iter().map(|x| x * x).sum();
        if energy == 0.0 || (energy - last_energy).abs() <= ENERGY_TOL * energy {
            return Ok(truncate(&q * ub, s, v, rank, it));
        }
        last_energy = energy;
    }
    Err(Error::NoConvergence {
        context: format!("truncated_svd (rank {rank} of {n}x{p}, last energy {last_energy:e})"),
        iterations: MAX_ITER,
        component: None,
    })
}
