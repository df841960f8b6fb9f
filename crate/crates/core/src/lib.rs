//! Operator-adaptive calibration for spectroscopic data.
//!
//! Preprocessing is treated as a strict-linear operator acting on the
//! wavelength axis. Because such operators commute with the PLS and kernel
//! ridge algebra, a whole bank of them can be screened through the
//! cross-covariance or the Gram matrix without materialising transformed
//! copies of the spectra.

pub mod aom_pls;
pub mod aom_ridge;
pub mod error;
pub mod fastaom;
pub mod linalg;
pub mod operators;
pub mod oracle;
pub mod par;
pub mod pls;
pub mod selection;
pub mod stats;
pub mod synthetic;

pub use aom_pls::{fit_aom_pls, fit_aom_plsda, AomPlsConfig, ClassifierFit, Criterion};
pub use aom_ridge::{fit_aom_ridge, AomRidgeConfig, RidgeFit};
pub use error::{Error, ErrorClass, Result};
pub use fastaom::{fit_fastaom, FastAomConfig, FastAomFit};
pub use operators::{build_operator, compact_bank, LinOp, OperatorBank, OperatorSpec};
pub use pls::{center, cross_covariance, PlsFit};
pub use selection::{Aggregation, SelectionTable};
