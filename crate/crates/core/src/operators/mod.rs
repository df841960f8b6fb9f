//! Strict-linear wavelength operators.
//!
//! An operator is a fixed `p×p` matrix `A` acting on row spectra as `X·Aᵀ`.
//! It is never materialised on the hot path: Savitzky-Golay filters and
//! differences are stored as banded rows, polynomial detrending as identity
//! minus a rank-`d+1` projection, and chains as lazy products.

mod linop;
mod savgol;
mod spec;

use nalgebra::DMatrix;

pub use linop::{BandRow, Banded, LinOp, LowRank, MATERIALISE_LIMIT};
pub use spec::OperatorSpec;

use crate::error::{Error, Result};

/// Polynomial order used by every Savitzky-Golay member of the compact bank.
pub const BANK_SG_ORDER: usize = 2;

/// Bind `spec` to `p` channels.
pub fn build_operator(spec: &OperatorSpec, p: usize) -> Result<LinOp> {
    if p == 0 {
        return Err(Error::config("p", "channel count must be positive"));
    }
    match spec {
        OperatorSpec::Identity => Ok(LinOp::identity(p)),
        OperatorSpec::SavgolSmooth { window, order } => {
            check_window(*window, *order, p)?;
            Ok(LinOp::structured(
                spec.clone(),
                savgol::banded(p, *window, *order, 0),
                None,
            ))
        }
        OperatorSpec::SavgolDeriv {
            window,
            order,
            deriv,
        } => {
            check_window(*window, *order, p)?;
            if !(1..=2).contains(deriv) {
                return Err(Error::config("deriv", format!("must be 1 or 2, got {deriv}")));
            }
            if deriv > order {
                return Err(Error::config(
                    "order",
                    format!("order {order} is below derivative order {deriv}"),
                ));
            }
            Ok(LinOp::structured(
                spec.clone(),
                savgol::banded(p, *window, *order, *deriv),
                None,
            ))
        }
        OperatorSpec::FiniteDiffFirst => {
            if p < 2 {
                return Err(Error::config("p", "finite_diff_first needs p >= 2"));
            }
            let rows = (0..p)
                .map(|i| {
                    if i == 0 {
                        BandRow {
                            offset: 0,
                            coeffs: vec![0.0],
                        }
                    } else {
                        BandRow {
                            offset: i - 1,
                            coeffs: vec![-1.0, 1.0],
                        }
                    }
                })
                .collect();
            Ok(LinOp::structured(spec.clone(), Banded::new(p, rows), None))
        }
        OperatorSpec::Detrend { degree } => {
            if !(1..=2).contains(degree) {
                return Err(Error::config("degree", format!("must be 1 or 2, got {degree}")));
            }
            if p < degree + 2 {
                return Err(Error::config(
                    "p",
                    format!("detrend of degree {degree} needs p >= {}", degree + 2),
                ));
            }
            let basis = orthonormal_poly_basis(p, *degree);
            let m = basis.transpose();
            Ok(LinOp::structured(
                spec.clone(),
                Banded::identity(p),
                Some(LowRank { v: basis, m }),
            ))
        }
        OperatorSpec::NwGapDeriv { gap, segment } => {
            if *gap == 0 {
                return Err(Error::config("gap", "must be >= 1"));
            }
            if *segment == 0 || segment % 2 == 0 {
                return Err(Error::config("segment", format!("must be odd and >= 1, got {segment}")));
            }
            if p < 2 || p < *segment {
                return Err(Error::config("segment", format!("segment {segment} exceeds p = {p}")));
            }
            let smooth = savgol::banded(p, *segment, 0, 0);
            let rows = (0..p)
                .map(|i| {
                    let lo = i.saturating_sub(*gap);
                    let hi = (i + gap).min(p - 1);
                    let span = (hi - lo) as f64;
                    let mut coeffs = vec![0.0; hi - lo + 1];
                    coeffs[0] = -1.0 / span;
                    coeffs[hi - lo] = 1.0 / span;
                    BandRow { offset: lo, coeffs }
                })
                .collect();
            let diff = Banded::new(p, rows);
            Ok(LinOp::structured(
                spec.clone(),
                Banded::product(&diff, &smooth),
                None,
            ))
        }
        OperatorSpec::Compose(members) => {
            let ops = members
                .iter()
                .map(|m| build_operator(m, p))
                .collect::<Result<Vec<_>>>()?;
            LinOp::product(&ops)
        }
        OperatorSpec::Mixture(members) => {
            let terms = members
                .iter()
                .map(|(w, m)| Ok((*w, build_operator(m, p)?)))
                .collect::<Result<Vec<_>>>()?;
            LinOp::weighted_sum(&terms)
        }
    }
}

fn check_window(window: usize, order: usize, p: usize) -> Result<()> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::config("window", format!("must be odd and >= 3, got {window}")));
    }
    if order >= window {
        return Err(Error::config(
            "order",
            format!("poly order {order} must be below window {window}"),
        ));
    }
    if window > p {
        return Err(Error::config("window", format!("window {window} exceeds p = {p}")));
    }
    Ok(())
}

/// Orthonormal basis of the polynomials of degree `<= degree` sampled on
/// channel indices `0..p`.
fn orthonormal_poly_basis(p: usize, degree: usize) -> DMatrix<f64> {
    let mid = (p as f64 - 1.0) / 2.0;
    let scale = mid.max(1.0);
    let mut basis = DMatrix::from_fn(p, degree + 1, |j, k| ((j as f64 - mid) / scale).powi(k as i32));
    // Two passes of modified Gram-Schmidt.
    for _ in 0..2 {
        for k in 0..=degree {
            for prev in 0..k {
                let dot = basis.column(prev).dot(&basis.column(k));
                let prev_col = basis.column(prev).clone_owned();
                basis.column_mut(k).axpy(-dot, &prev_col, 1.0);
            }
            let norm = basis.column(k).norm();
            basis.column_mut(k).unscale_mut(norm);
        }
    }
    basis
}

/// Sequential product of `ops`, applied right-to-left (`ops[0]` last).
pub fn compose(ops: &[LinOp]) -> Result<LinOp> {
    LinOp::product(ops)
}

/// Ordered operator bank. Index 0 is always the identity.
#[derive(Debug, Clone)]
pub struct OperatorBank {
    ops: Vec<LinOp>,
    names: Vec<String>,
}

impl OperatorBank {
    /// Build from specs; the identity is prepended when missing.
    pub fn from_specs(specs: &[OperatorSpec], p: usize) -> Result<Self> {
        let mut ops = vec![LinOp::identity(p)];
        let mut names = vec![OperatorSpec::Identity.to_string()];
        for s in specs {
            if s.is_identity() {
                continue;
            }
            ops.push(build_operator(s, p)?);
            names.push(s.to_string());
        }
        Ok(OperatorBank { ops, names })
    }

    /// The identity alone: plain PLS / Ridge.
    pub fn identity_only(p: usize) -> Self {
        OperatorBank {
            ops: vec![LinOp::identity(p)],
            names: vec![OperatorSpec::Identity.to_string()],
        }
    }

    /// Bank from already-built operators. The first must be the identity.
    pub fn from_ops(ops: Vec<LinOp>, names: Vec<String>) -> Result<Self> {
        if ops.is_empty() || !ops[0].is_identity() {
            return Err(Error::config("bank", "index 0 must be the identity"));
        }
        if ops.len() != names.len() {
            return Err(Error::dimension("bank names", ops.len(), names.len()));
        }
        let p = ops[0].p();
        if let Some(o) = ops.iter().find(|o| o.p() != p) {
            return Err(Error::dimension("bank channel count", p, o.p()));
        }
        Ok(OperatorBank { ops, names })
    }

    pub fn ops(&self) -> &[LinOp] {
        &self.ops
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn p(&self) -> usize {
        self.ops[0].p()
    }

    pub fn get(&self, index: usize) -> Option<&LinOp> {
        self.ops.get(index)
    }

    pub fn specs(&self) -> Vec<OperatorSpec> {
        self.ops.iter().map(|o| o.spec().clone()).collect()
    }
}

/// The nine-operator compact bank: identity; SG smoothing w11, w21; SG first
/// derivative w11, w21; SG second derivative w11; detrend degree 1, 2; first
/// finite difference. All SG members use polynomial order 2.
///
/// For `p < 21` the nominal windows shrink to the largest odd value `<= p`
/// and the display name records the substitution; for `p < 11` the
/// Savitzky-Golay members are dropped. Members that cannot be built at all
/// (detrend when `p` is tiny) are dropped as well.
pub fn compact_bank(p: usize) -> OperatorBank {
    let largest_odd = if p % 2 == 1 { p } else { p.saturating_sub(1) };
    let mut ops = vec![LinOp::identity(p)];
    let mut names = vec![OperatorSpec::Identity.to_string()];
    let windowed: [(usize, usize); 5] = [(11, 0), (21, 0), (11, 1), (21, 1), (11, 2)];
    let mut push = |spec: OperatorSpec, name: String| {
        if let Ok(op) = build_operator(&spec, p) {
            ops.push(op);
            names.push(name);
        }
    };
    for (nominal, deriv) in windowed {
        if p < 11 {
            continue;
        }
        let window = nominal.min(largest_odd);
        let spec = if deriv == 0 {
            OperatorSpec::SavgolSmooth {
                window,
                order: BANK_SG_ORDER,
            }
        } else {
            OperatorSpec::SavgolDeriv {
                window,
                order: BANK_SG_ORDER,
                deriv,
            }
        };
        let name = if window == nominal {
            spec.to_string()
        } else {
            format!("{spec} [window {nominal} -> {window}]")
        };
        push(spec, name);
    }
    for degree in [1, 2] {
        let spec = OperatorSpec::Detrend { degree };
        push(spec.clone(), spec.to_string());
    }
    push(OperatorSpec::FiniteDiffFirst, OperatorSpec::FiniteDiffFirst.to_string());
    OperatorBank { ops, names }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Dense SG matrix by direct polynomial regression per row with raw
    /// (unscaled) channel offsets and a pseudoinverse.
    fn dense_sg(p: usize, window: usize, order: usize, deriv: usize) -> DMatrix<f64> {
        let half = (window - 1) / 2;
        let mut a = DMatrix::zeros(p, p);
        for i in 0..p {
            let start = i.saturating_sub(half).min(p - window);
            let v = DMatrix::from_fn(window, order + 1, |k, j| {
                ((start + k) as f64 - i as f64).powi(j as i32)
            });
            let pinv = v.clone().pseudo_inverse(1e-14).unwrap();
            let fact: f64 = (1..=deriv).map(|k| k as f64).product();
            for k in 0..window {
                a[(i, start + k)] = fact * pinv[(deriv, k)];
            }
        }
        a
    }

    #[test]
    fn identity_materialises_to_eye() {
        let op = build_operator(&OperatorSpec::Identity, 5).unwrap();
        assert_eq!(op.materialise().unwrap(), DMatrix::identity(5, 5));
    }

    #[test]
    fn smoother_reproduces_constants_including_edges() {
        let op = build_operator(&OperatorSpec::SavgolSmooth { window: 5, order: 2 }, 21).unwrap();
        let out = op.forward_vec(&[3.0; 21]).unwrap();
        for v in out {
            assert!((v - 3.0).abs() < 1e-13);
        }
    }

    #[test]
    fn detrend_annihilates_ramp() {
        let op = build_operator(&OperatorSpec::Detrend { degree: 1 }, 16).unwrap();
        let ramp: Vec<f64> = (0..16).map(|j| 2.0 * j as f64 + 1.0).collect();
        let out = op.forward_vec(&ramp).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn first_derivative_of_ramp_is_one() {
        let spec = OperatorSpec::SavgolDeriv {
            window: 11,
            order: 2,
            deriv: 1,
        };
        let op = build_operator(&spec, 64).unwrap();
        let ramp: Vec<f64> = (0..64).map(|j| j as f64).collect();
        let out = op.forward_vec(&ramp).unwrap();
        for v in &out[5..59] {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let oracle = dense_sg(64, 11, 2, 1);
        let diff = &op.materialise().unwrap() - &oracle;
        assert!(max_abs(&diff) < 1e-12, "{}", max_abs(&diff));
    }

    #[test]
    fn sg_matches_dense_regression_oracle() {
        for (w, o, d) in [(11, 2, 0), (21, 2, 0), (21, 2, 1), (11, 2, 2), (7, 3, 2), (5, 4, 1)] {
            let spec = if d == 0 {
                OperatorSpec::SavgolSmooth { window: w, order: o }
            } else {
                OperatorSpec::SavgolDeriv {
                    window: w,
                    order: o,
                    deriv: d,
                }
            };
            let op = build_operator(&spec, 40).unwrap();
            let diff = &op.materialise().unwrap() - dense_sg(40, w, o, d);
            assert!(max_abs(&diff) < 1e-10, "{spec}: {}", max_abs(&diff));
        }
    }

    #[test]
    fn second_derivative_of_square_is_two_on_interior() {
        let op = build_operator(
            &OperatorSpec::SavgolDeriv {
                window: 11,
                order: 2,
                deriv: 2,
            },
            50,
        )
        .unwrap();
        let sq: Vec<f64> = (0..50).map(|j| (j as f64).powi(2)).collect();
        let out = op.forward_vec(&sq).unwrap();
        for v in &out[5..45] {
            assert!((v - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn finite_difference_forced_values() {
        let op = build_operator(&OperatorSpec::FiniteDiffFirst, 3).unwrap();
        let x = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 4.0]);
        assert_eq!(op.apply_rows(&x).unwrap().as_slice(), &[0.0, 1.0, 2.0]);
        let expected = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0, -1.0, 1.0]);
        assert_eq!(op.materialise().unwrap(), expected);
    }

    #[test]
    fn identity_apply_rows_is_bit_identical() {
        let x = random(4, 6, 1).map(|v| if v < 0.0 { -0.0 * v } else { v });
        let op = build_operator(&OperatorSpec::Identity, 6).unwrap();
        let out = op.apply_rows(&x).unwrap();
        assert!(out.iter().zip(x.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn detrend_is_symmetric_idempotent_projection() {
        for degree in [1, 2] {
            let a = build_operator(&OperatorSpec::Detrend { degree }, 30)
                .unwrap()
                .materialise()
                .unwrap();
            assert!(max_abs(&(&a - a.transpose())) < 1e-10);
            assert!(max_abs(&(&a * &a - &a)) < 1e-10);
            let vander = DMatrix::from_fn(30, degree + 1, |j, k| (j as f64).powi(k as i32));
            assert!(max_abs(&(&a * vander)) < 1e-9);
        }
    }

    #[test]
    fn detrend_adjoint_equals_forward() {
        let op = build_operator(&OperatorSpec::Detrend { degree: 2 }, 25).unwrap();
        let m = random(25, 3, 2);
        let d = op.apply_adjoint(&m).unwrap() - op.apply_forward(&m).unwrap();
        assert!(max_abs(&d) < 1e-12);
    }

    #[test]
    fn detrend_of_linear_column_is_zero() {
        let op = build_operator(&OperatorSpec::Detrend { degree: 1 }, 20).unwrap();
        let m = DMatrix::from_fn(20, 1, |j, _| 0.5 * j as f64 - 3.0);
        assert!(max_abs(&op.apply_forward(&m).unwrap()) < 1e-12);
    }

    #[test]
    fn every_bank_member_agrees_with_dense_form() {
        let bank = compact_bank(64);
        let x = random(7, 64, 3);
        let m = random(64, 2, 4);
        for op in bank.ops() {
            let a = op.materialise().unwrap();
            let rows = op.apply_rows(&x).unwrap() - &x * a.transpose();
            let fwd = op.apply_forward(&m).unwrap() - &a * &m;
            let adj = op.apply_adjoint(&m).unwrap() - a.transpose() * &m;
            assert!(max_abs(&rows) < 1e-12, "{}", op.spec());
            assert!(max_abs(&fwd) < 1e-12, "{}", op.spec());
            assert!(max_abs(&adj) < 1e-12, "{}", op.spec());
        }
    }

    #[test]
    fn compose_matches_dense_product() {
        let d = build_operator(
            &OperatorSpec::SavgolDeriv {
                window: 11,
                order: 2,
                deriv: 1,
            },
            40,
        )
        .unwrap();
        let s = build_operator(&OperatorSpec::SavgolSmooth { window: 11, order: 2 }, 40).unwrap();
        let c = compose(&[d.clone(), s.clone()]).unwrap();
        let dense = d.materialise().unwrap() * s.materialise().unwrap();
        let m = random(40, 2, 5);
        assert!(max_abs(&(c.apply_forward(&m).unwrap() - &dense * &m)) < 1e-12);
        assert!(max_abs(&(c.apply_adjoint(&m).unwrap() - dense.transpose() * &m)) < 1e-12);
        assert!(max_abs(&(c.materialise().unwrap() - dense)) < 1e-12);
    }

    #[test]
    fn compose_of_identities_and_projections() {
        let id = LinOp::identity(10);
        let c = compose(&[id.clone(), id]).unwrap();
        assert!(c.is_identity());
        let dt = build_operator(&OperatorSpec::Detrend { degree: 1 }, 10).unwrap();
        let cc = compose(&[dt.clone(), dt.clone()]).unwrap();
        let v = random(10, 1, 6);
        let diff = cc.apply_forward(&v).unwrap() - dt.apply_forward(&v).unwrap();
        assert!(max_abs(&diff) < 1e-12);
    }

    #[test]
    fn compose_rejects_mixed_channel_counts() {
        let a = LinOp::identity(5);
        let b = build_operator(&OperatorSpec::FiniteDiffFirst, 6).unwrap();
        assert!(compose(&[a, b]).is_err());
    }

    #[test]
    fn nw_gap_derivative_recovers_ramp_slope() {
        let op = build_operator(&OperatorSpec::NwGapDeriv { gap: 3, segment: 5 }, 30).unwrap();
        let ramp: Vec<f64> = (0..30).map(|j| 4.0 * j as f64).collect();
        // The segment average only reproduces ramps away from the edges.
        let out = op.forward_vec(&ramp).unwrap();
        for v in &out[5..25] {
            assert!((v - 4.0).abs() < 1e-10);
        }
        let m = random(30, 2, 9);
        let a = op.materialise().unwrap();
        assert!(max_abs(&(op.apply_adjoint(&m).unwrap() - a.transpose() * &m)) < 1e-12);
    }

    #[test]
    fn compact_bank_layout() {
        let bank = compact_bank(1023);
        assert_eq!(bank.len(), 9);
        assert!(bank.ops()[0].is_identity());
        assert_eq!(bank.names()[1], "savgol_smooth(window=11,order=2)");
        assert_eq!(bank.names()[5], "savgol_deriv(window=11,order=2,deriv=2)");
        assert_eq!(bank.names()[8], "finite_diff_first");
    }

    #[test]
    fn small_p_bank_downgrades_windows() {
        let bank = compact_bank(15);
        assert_eq!(bank.len(), 9);
        assert!(bank.names()[2].contains("window=15"));
        assert!(bank.names()[2].contains("[window 21 -> 15]"));
        let tiny = compact_bank(8);
        assert_eq!(tiny.len(), 4);
        assert!(tiny.ops()[0].is_identity());
    }

    #[test]
    fn invalid_configurations_name_the_field() {
        let err = build_operator(&OperatorSpec::SavgolSmooth { window: 4, order: 2 }, 20).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "window"));
        let err = build_operator(&OperatorSpec::SavgolSmooth { window: 5, order: 5 }, 20).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "order"));
        let err = build_operator(&OperatorSpec::SavgolSmooth { window: 21, order: 2 }, 20).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "window"));
        let err = build_operator(
            &OperatorSpec::SavgolDeriv {
                window: 5,
                order: 2,
                deriv: 3,
            },
            20,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "deriv"));
    }

    #[test]
    fn construction_is_deterministic() {
        for spec in compact_bank(50).specs() {
            let a = build_operator(&spec, 50).unwrap().materialise().unwrap();
            let b = build_operator(&spec, 50).unwrap().materialise().unwrap();
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn apply_rejects_shape_mismatch() {
        let op = LinOp::identity(4);
        assert!(matches!(
            op.apply_rows(&DMatrix::zeros(2, 5)),
            Err(Error::Dimension { .. })
        ));
        assert!(op.apply_forward(&DMatrix::zeros(3, 1)).is_err());
        assert!(op.apply_adjoint(&DMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn materialise_guard() {
        let op = LinOp::identity(MATERIALISE_LIMIT + 1);
        assert!(op.materialise().is_err());
    }
}
