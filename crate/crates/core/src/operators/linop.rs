use nalgebra::DMatrix;

use super::OperatorSpec;
use crate::error::{Error, Result};

type Mat = DMatrix<f64>;

/// Largest channel count for which [`LinOp::materialise`] allocates `p²` values.
pub const MATERIALISE_LIMIT: usize = 8192;

/// One output channel of a banded operator: `out[i] = Σ_k coeffs[k]·x[offset + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandRow {
    pub offset: usize,
    pub coeffs: Vec<f64>,
}

/// Row-banded `p×p` coefficient table.
#[derive(Debug, Clone, PartialEq)]
pub struct Banded {
    p: usize,
    rows: Vec<BandRow>,
}

impl Banded {
    pub(crate) fn new(p: usize, rows: Vec<BandRow>) -> Self {
        debug_assert_eq!(rows.len(), p);
        debug_assert!(rows.iter().all(|r| r.offset + r.coeffs.len() <= p));
        Banded { p, rows }
    }

    pub(crate) fn identity(p: usize) -> Self {
        let rows = (0..p)
            .map(|i| BandRow {
                offset: i,
                coeffs: vec![1.0],
            })
            .collect();
        Banded { p, rows }
    }

    pub fn rows(&self) -> &[BandRow] {
        &self.rows
    }

    pub fn bandwidth(&self) -> usize {
        self.rows.iter().map(|r| r.coeffs.len()).max().unwrap_or(0)
    }

    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row
                .coeffs
                .iter()
                .zip(&x[row.offset..row.offset + row.coeffs.len()])
                .map(|(c, v)| c * v)
                .sum();
        }
    }

    fn adjoint_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (xi, row) in x.iter().zip(&self.rows) {
            for (o, c) in out[row.offset..row.offset + row.coeffs.len()]
                .iter_mut()
                .zip(&row.coeffs)
            {
                *o += c * xi;
            }
        }
    }

    /// Banded product `a·b`.
    pub(crate) fn product(a: &Banded, b: &Banded) -> Banded {
        let rows = a
            .rows
            .iter()
            .map(|ra| {
                let lo = (0..ra.coeffs.len())
                    .map(|k| b.rows[ra.offset + k].offset)
                    .min()
                    .unwrap_or(0);
                let hi = (0..ra.coeffs.len())
                    .map(|k| {
                        let rb = &b.rows[ra.offset + k];
                        rb.offset + rb.coeffs.len()
                    })
                    .max()
                    .unwrap_or(lo);
                let mut coeffs = vec![0.0; hi - lo];
                for (k, ca) in ra.coeffs.iter().enumerate() {
                    let rb = &b.rows[ra.offset + k];
                    for (j, cb) in rb.coeffs.iter().enumerate() {
                        coeffs[rb.offset - lo + j] += ca * cb;
                    }
                }
                BandRow { offset: lo, coeffs }
            })
            .collect();
        Banded { p: a.p, rows }
    }

    fn dense(&self) -> Mat {
        let mut m = Mat::zeros(self.p, self.p);
        for (i, row) in self.rows.iter().enumerate() {
            for (k, c) in row.coeffs.iter().enumerate() {
                m[(i, row.offset + k)] = *c;
            }
        }
        m
    }
}

/// Additive correction `−V·M` with `V: p×r`, `M: r×p`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRank {
    pub v: Mat,
    pub m: Mat,
}

#[derive(Debug, Clone)]
enum Repr {
    Identity,
    Structured {
        band: Banded,
        lowrank: Option<LowRank>,
    },
    /// `members[0]·members[1]···members[last]`.
    Product(Vec<LinOp>),
    Sum(Vec<(f64, LinOp)>),
}

/// A strict-linear `p×p` operator acting on spectra, kept in structured
/// form: a banded core plus an optional low-rank correction, or a lazy
/// product/sum of such operators.
#[derive(Debug, Clone)]
pub struct LinOp {
    p: usize,
    spec: OperatorSpec,
    repr: Repr,
}

impl LinOp {
    pub(crate) fn identity(p: usize) -> Self {
        LinOp {
            p,
            spec: OperatorSpec::Identity,
            repr: Repr::Identity,
        }
    }

    pub(crate) fn structured(spec: OperatorSpec, band: Banded, lowrank: Option<LowRank>) -> Self {
        LinOp {
            p: band.p,
            spec,
            repr: Repr::Structured { band, lowrank },
        }
    }

    /// Product of `ops`, applied right-to-left.
    pub fn product(ops: &[LinOp]) -> Result<Self> {
        let first = ops
            .first()
            .ok_or_else(|| Error::config("compose", "empty operator list"))?;
        check_same_p(ops.iter(), first.p, "compose")?;
        let members: Vec<LinOp> = ops.iter().filter(|o| !o.is_identity()).cloned().collect();
        let spec = OperatorSpec::Compose(ops.iter().map(|o| o.spec.clone()).collect());
        let repr = match members.len() {
            0 => Repr::Identity,
            1 => members.into_iter().next().map(|m| m.repr).unwrap_or(Repr::Identity),
            _ => Repr::Product(members),
        };
        Ok(LinOp {
            p: first.p,
            spec,
            repr,
        })
    }

    /// `Σ w_k·A_k`.
    pub fn weighted_sum(terms: &[(f64, LinOp)]) -> Result<Self> {
        let (_, first) = terms
            .first()
            .ok_or_else(|| Error::config("mix", "empty operator list"))?;
        check_same_p(terms.iter().map(|(_, o)| o), first.p, "mix")?;
        if let Some((w, _)) = terms.iter().find(|(w, _)| !w.is_finite()) {
            return Err(Error::config("mix", format!("non-finite weight {w}")));
        }
        let spec =
            OperatorSpec::Mixture(terms.iter().map(|(w, o)| (*w, o.spec.clone())).collect());
        Ok(LinOp {
            p: first.p,
            spec,
            repr: Repr::Sum(terms.to_vec()),
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.repr, Repr::Identity)
    }

    /// Banded core and low-rank correction, when the operator is stored in
    /// that form.
    pub fn structure(&self) -> Option<(&Banded, Option<&LowRank>)> {
        match &self.repr {
            Repr::Structured { band, lowrank } => Some((band, lowrank.as_ref())),
            _ => None,
        }
    }

    /// Sum of the per-member bandwidths; a cost indicator, not a matrix property.
    pub fn bandwidth(&self) -> usize {
        match &self.repr {
            Repr::Identity => 1,
            Repr::Structured { band, lowrank } => {
                band.bandwidth() + lowrank.as_ref().map_or(0, |l| l.v.ncols())
            }
            Repr::Product(ms) => ms.iter().map(LinOp::bandwidth).sum(),
            Repr::Sum(ts) => ts.iter().map(|(_, o)| o.bandwidth()).sum(),
        }
    }

    /// `A·M` for `M: p×q`.
    pub fn apply_forward(&self, m: &Mat) -> Result<Mat> {
        if m.nrows() != self.p {
            return Err(Error::dimension("apply_forward rows", self.p, m.nrows()));
        }
        Ok(self.forward_unchecked(m))
    }

    /// `Aᵀ·M` for `M: p×q`.
    pub fn apply_adjoint(&self, m: &Mat) -> Result<Mat> {
        if m.nrows() != self.p {
            return Err(Error::dimension("apply_adjoint rows", self.p, m.nrows()));
        }
        Ok(self.adjoint_unchecked(m))
    }

    /// `X·Aᵀ` for sample-major `X: n×p`.
    pub fn apply_rows(&self, x: &Mat) -> Result<Mat> {
        if x.ncols() != self.p {
            return Err(Error::dimension("apply_rows columns", self.p, x.ncols()));
        }
        if self.is_identity() {
            return Ok(x.clone());
        }
        Ok(self.forward_unchecked(&x.transpose()).transpose())
    }

    /// `A·x` for a single vector.
    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Mat::from_column_slice(x.len(), 1, x);
        Ok(self.apply_forward(&m)?.as_slice().to_vec())
    }

    /// `Aᵀ·x` for a single vector.
    pub fn adjoint_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Mat::from_column_slice(x.len(), 1, x);
        Ok(self.apply_adjoint(&m)?.as_slice().to_vec())
    }

    fn forward_unchecked(&self, m: &Mat) -> Mat {
        match &self.repr {
            Repr::Identity => m.clone(),
            Repr::Structured { band, lowrank } => {
                let mut out = Mat::zeros(m.nrows(), m.ncols());
                for (src, dst) in m
                    .as_slice()
                    .chunks(self.p)
                    .zip(out.as_mut_slice().chunks_mut(self.p))
                {
                    band.forward_into(src, dst);
                }
                if let Some(lr) = lowrank {
                    out -= &lr.v * (&lr.m * m);
                }
                out
            }
            Repr::Product(members) => {
                let mut acc = m.clone();
                for op in members.iter().rev() {
                    acc = op.forward_unchecked(&acc);
                }
                acc
            }
            Repr::Sum(terms) => {
                let mut out = Mat::zeros(m.nrows(), m.ncols());
                for (w, op) in terms {
                    out += op.forward_unchecked(m) * *w;
                }
                out
            }
        }
    }

    fn adjoint_unchecked(&self, m: &Mat) -> Mat {
        match &self.repr {
            Repr::Identity => m.clone(),
            Repr::Structured { band, lowrank } => {
                let mut out = Mat::zeros(m.nrows(), m.ncols());
                for (src, dst) in m
                    .as_slice()
                    .chunks(self.p)
                    .zip(out.as_mut_slice().chunks_mut(self.p))
                {
                    band.adjoint_into(src, dst);
                }
                if let Some(lr) = lowrank {
                    out -= lr.m.transpose() * (lr.v.transpose() * m);
                }
                out
            }
            Repr::Product(members) => {
                let mut acc = m.clone();
                for op in members {
                    acc = op.adjoint_unchecked(&acc);
                }
                acc
            }
            Repr::Sum(terms) => {
                let mut out = Mat::zeros(m.nrows(), m.ncols());
                for (w, op) in terms {
                    out += op.adjoint_unchecked(m) * *w;
                }
                out
            }
        }
    }

    /// Dense `p×p` form. Test and oracle support only.
    pub fn materialise(&self) -> Result<Mat> {
        if self.p > MATERIALISE_LIMIT {
            return Err(Error::config(
                "materialise",
                format!("p = {} exceeds limit {MATERIALISE_LIMIT}", self.p),
            ));
        }
        Ok(match &self.repr {
            Repr::Identity => Mat::identity(self.p, self.p),
            Repr::Structured { band, lowrank } => {
                let mut d = band.dense();
                if let Some(lr) = lowrank {
                    d -= &lr.v * &lr.m;
                }
                d
            }
            Repr::Product(members) => {
                let mut acc = Mat::identity(self.p, self.p);
                for op in members {
                    acc *= op.materialise()?;
                }
                acc
            }
            Repr::Sum(terms) => {
                let mut acc = Mat::zeros(self.p, self.p);
                for (w, op) in terms {
                    acc += op.materialise()? * *w;
                }
                acc
            }
        })
    }
}

fn check_same_p<'a>(ops: impl Iterator<Item = &'a LinOp>, p: usize, context: &str) -> Result<()> {
    for op in ops {
        if op.p != p {
            return Err(Error::dimension(format!("{context} channel count"), p, op.p));
        }
    }
    Ok(())
}
