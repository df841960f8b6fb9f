//! Cross-validated selection tables shared by the PLS and Ridge selectors.

use serde::{Deserialize, Serialize};

/// How per-fold criterion values are combined into a cell value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Aggregation {
    #[default]
    Mean,
    Median,
}

impl Aggregation {
    pub fn combine(self, values: &[f64]) -> f64 {
        match self {
            Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregation::Median => crate::stats::median(values),
        }
    }
}

/// One (operator, parameter) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionCell {
    pub operator: usize,
    /// Index into [`SelectionTable::params`].
    pub param: usize,
    /// `None` where the fold could not support the cell.
    pub fold_values: Vec<Option<f64>>,
    /// Aggregated value; `None` if any fold was unavailable.
    pub value: Option<f64>,
}

/// Criterion values over an (operator × parameter) grid and the chosen cell.
///
/// Cells are stored operator-major. The chosen cell optimises the
/// aggregated criterion; ties go to the lower operator index, then to the
/// lower parameter index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTable {
    pub operator_names: Vec<String>,
    /// Column label of the parameter axis (`K` or `alpha`).
    pub param_label: String,
    pub params: Vec<f64>,
    pub criterion: String,
    pub maximise: bool,
    pub cells: Vec<SelectionCell>,
    /// `(operator index, parameter index)`.
    pub chosen: (usize, usize),
    /// Number of inner model extractions (one per fold and operator).
    pub extractions: usize,
}

impl SelectionTable {
    pub(crate) fn assemble(
        operator_names: Vec<String>,
        param_label: &str,
        params: Vec<f64>,
        criterion: &str,
        maximise: bool,
        per_fold: Vec<Vec<Vec<Option<f64>>>>,
        aggregation: Aggregation,
    ) -> Self {
        // per_fold[fold][operator][param]
        let n_ops = operator_names.len();
        let n_par = params.len();
        let mut cells = Vec::with_capacity(n_ops * n_par);
        for b in 0..n_ops {
            for k in 0..n_par {
                let fold_values: Vec<Option<f64>> = per_fold.iter().map(|f| f[b][k]).collect();
                let value = fold_values
                    .iter()
                    .copied()
                    .collect::<Option<Vec<f64>>>()
                    .filter(|v| !v.is_empty() && v.iter().all(|x| x.is_finite()))
                    .map(|v| aggregation.combine(&v));
                cells.push(SelectionCell {
                    operator: b,
                    param: k,
                    fold_values,
                    value,
                });
            }
        }
        let mut chosen = (0, 0);
        let mut best: Option<f64> = None;
        for c in &cells {
            if let Some(v) = c.value {
                let better = match best {
                    None => true,
                    Some(b) if maximise => v > b,
                    Some(b) => v < b,
                };
                if better {
                    best = Some(v);
                    chosen = (c.operator, c.param);
                }
            }
        }
        SelectionTable {
            operator_names,
            param_label: param_label.to_string(),
            params,
            criterion: criterion.to_string(),
            maximise,
            extractions: per_fold.len() * n_ops,
            cells,
            chosen,
        }
    }

    pub fn cell(&self, operator: usize, param: usize) -> &SelectionCell {
        &self.cells[operator * self.params.len() + param]
    }

    pub fn chosen_value(&self) -> Option<f64> {
        self.cell(self.chosen.0, self.chosen.1).value
    }

    pub fn chosen_param(&self) -> f64 {
        self.params[self.chosen.1]
    }

    pub fn grid_size(&self) -> usize {
        self.cells.len()
    }

    /// `operator,<param>,fold,criterion` rows, one per fold plus an
    /// aggregated `mean` row per cell. Unavailable cells are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = format!("operator,{},fold,criterion\n", self.param_label);
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for c in &self.cells {
            let name = &self.operator_names[c.operator];
            let param = self.params[c.param];
            for (f, v) in c.fold_values.iter().enumerate() {
                out.push_str(&format!("\"{name}\",{param},{f},{}\n", fmt(*v)));
            }
            out.push_str(&format!("\"{name}\",{param},mean,{}\n", fmt(c.value)));
        }
        out
    }
}
