//! Portable model files: versioned JSON with the numeric blocks embedded as
//! base64 little-endian `f64`.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use opcal::linalg::{Mat, Vector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::io;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    AomPls,
    AomRidge,
    Fastaom,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::AomPls => "aom_pls",
            Method::AomRidge => "aom_ridge",
            Method::Fastaom => "fastaom",
        }
    }
}

/// Plain-text record of what was selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct OperatorLog {
    /// Operator spec strings of the fitted model.
    pub operators: Vec<String>,
    /// Mixture or survivor weights, aligned with `operators`, when relevant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_components: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_value: Option<f64>,
    /// SHA-256 of the selection table CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub task: Task,
    pub method: Method,
    pub operator_log: OperatorLog,
    pub wavelengths: Vec<String>,
    pub responses: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
    pub p: usize,
    pub q: usize,
    pub x_mean: String,
    pub y_mean: String,
    /// Row-major `p × q`.
    pub coefficients: String,
}

/// The numbers needed to predict, decoded from a [`ModelFile`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub coefficients: Mat,
    pub x_mean: Vector,
    pub y_mean: Vector,
}

pub fn encode(values: impl IntoIterator<Item = f64>) -> String {
    let bytes: Vec<u8> = values.into_iter().flat_map(f64::to_le_bytes).collect();
    STANDARD.encode(bytes)
}

pub fn decode(text: &str, expected: usize, field: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| CliError::input("model", format!("{field}: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(CliError::input(
            "model",
            format!("{field}: expected {expected} values, found {} bytes", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn digest(text: &str) -> String {
    format!("{:x}", Sha256::digest(text.as_bytes()))
}

impl ModelFile {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        task: Task,
        method: Method,
        operator_log: OperatorLog,
        wavelengths: Vec<String>,
        responses: Vec<String>,
        classes: Option<Vec<String>>,
        lin: &LinearModel,
    ) -> Self {
        let (p, q) = lin.coefficients.shape();
        let b = &lin.coefficients;
        ModelFile {
            format_version: FORMAT_VERSION,
            task,
            method,
            operator_log,
            wavelengths,
            responses,
            classes,
            p,
            q,
            x_mean: encode(lin.x_mean.iter().copied()),
            y_mean: encode(lin.y_mean.iter().copied()),
            coefficients: encode((0..p).flat_map(|i| (0..q).map(move |j| b[(i, j)]))),
        }
    }

    pub fn linear(&self) -> Result<LinearModel> {
        let b = decode(&self.coefficients, self.p * self.q, "coefficients")?;
        Ok(LinearModel {
            coefficients: Mat::from_row_slice(self.p, self.q, &b),
            x_mean: Vector::from_vec(decode(&self.x_mean, self.p, "x_mean")?),
            y_mean: Vector::from_vec(decode(&self.y_mean, self.q, "y_mean")?),
        })
    }

    fn check(&self, source: &str) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(CliError::input(
                source,
                format!("unsupported format_version {}", self.format_version),
            ));
        }
        if self.wavelengths.len() != self.p {
            return Err(CliError::input(
                source,
                format!("{} wavelengths for p = {}", self.wavelengths.len(), self.p),
            ));
        }
        let width = match (&self.task, &self.classes) {
            (Task::Classification, Some(c)) => c.len(),
            (Task::Classification, None) => {
                return Err(CliError::input(source, "classification model without classes"))
            }
            (Task::Regression, _) => self.responses.len(),
        };
        if width != self.q {
            return Err(CliError::input(source, format!("{width} outputs for q = {}", self.q)));
        }
        self.linear().map(|_| ())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str, source: &str) -> Result<Self> {
        let m: ModelFile =
            serde_json::from_str(text).map_err(|e| CliError::input(source, e.to_string()))?;
        m.check(source)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json();
        text.push('\n');
        io::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> LinearModel {
        LinearModel {
            coefficients: Mat::from_row_slice(3, 2, &[1.0, -2.5, 1e-300, 0.1 + 0.2, f64::MIN_POSITIVE, 7.0]),
            x_mean: Vector::from_vec(vec![0.1, 0.2, 0.3]),
            y_mean: Vector::from_vec(vec![-1.0, 1.0 / 3.0]),
        }
    }

    fn file(lin: &LinearModel) -> ModelFile {
        ModelFile::new(
            Task::Regression,
            Method::AomPls,
            OperatorLog {
                operators: vec!["identity".into()],
                n_components: Some(2),
                ..Default::default()
            },
            vec!["a".into(), "b".into(), "c".into()],
            vec!["y1".into(), "y2".into()],
            None,
            lin,
        )
    }

    #[test]
    fn blocks_round_trip_bit_exact() {
        let lin = sample();
        let m = file(&lin);
        let back = ModelFile::from_json(&m.to_json(), "m").unwrap();
        assert_eq!(back, m);
        let l2 = back.linear().unwrap();
        for (a, b) in l2.coefficients.iter().zip(lin.coefficients.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(l2, lin);
    }

    #[test]
    fn coefficients_are_row_major() {
        let m = file(&sample());
        let raw = decode(&m.coefficients, 6, "b").unwrap();
        assert_eq!(&raw[..2], &[1.0, -2.5]);
    }

    #[test]
    fn bad_files_rejected() {
        let mut m = file(&sample());
        m.format_version = 99;
        assert!(ModelFile::from_json(&m.to_json(), "m").is_err());
        let mut m = file(&sample());
        m.coefficients = encode([1.0, 2.0]);
        assert!(ModelFile::from_json(&m.to_json(), "m").is_err());
        let mut m = file(&sample());
        m.wavelengths.pop();
        assert!(ModelFile::from_json(&m.to_json(), "m").is_err());
        assert!(ModelFile::from_json("{not json", "m").is_err());
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(digest("abc"), digest("abc"));
        assert_ne!(digest("abc"), digest("abd"));
        assert_eq!(digest("").len(), 64);
    }
}
