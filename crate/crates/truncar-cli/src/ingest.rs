//! Raw-survey ingestion: named columns, optional log response, one optional
//! categorical covariate expanded to reference-coded dummies, intercept
//! prepended. Row order in the CSV is the region order of the adjacency
//! graph.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

use truncar::error::{Error, Result};
use truncar::sampler::Dataset;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoricalSpec {
    pub column: String,
    pub reference: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FormulaSpec {
    pub response: String,
    #[serde(default)]
    pub log_response: bool,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub categorical: Option<CategoricalSpec>,
    #[serde(default = "default_true")]
    pub intercept: bool,
}

fn default_true() -> bool {
    true
}

impl FormulaSpec {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn is_missing(v: &str) -> bool {
    v.is_empty() || v.eq_ignore_ascii_case("na") || v.eq_ignore_ascii_case("nan")
}

/// Build a `Dataset` from a headered CSV according to the formula. The
/// response may be blank (unobserved region); covariates must be present in
/// every row. `n_regions` is the size of the adjacency graph the data must
/// align with.
pub fn ingest_dataset(data_csv: &Path, formula: &FormulaSpec, n_regions: usize) -> Result<Dataset> {
    let display = data_csv.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(data_csv)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_string()).collect();
    let col_index = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::InvalidInput(format!(
                "column `{name}` not found; file has: {}",
                headers.join(", ")
            ))
        })
    };

    let y_col = col_index(&formula.response)?;
    let cov_cols: Vec<usize> = formula
        .covariates
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_>>()?;
    let cat_col = formula
        .categorical
        .as_ref()
        .map(|c| col_index(&c.column))
        .transpose()?;

    let mut y: Vec<f64> = Vec::new();
    let mut observed: Vec<bool> = Vec::new();
    let mut numeric: Vec<Vec<f64>> = Vec::new();
    let mut cat_values: Vec<String> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2; // header is line 1
        let yv = rec.get(y_col).unwrap_or("");
        if is_missing(yv) {
            y.push(f64::NAN);
            observed.push(false);
        } else {
            let mut v: f64 = yv.parse().map_err(|_| Error::Parse {
                path: display.clone(),
                line,
                msg: format!("response `{yv}` is not a number"),
            })?;
            if formula.log_response {
                if !(v > 0.0) {
                    return Err(Error::Parse {
                        path: display.clone(),
                        line,
                        msg: format!("cannot log-transform non-positive response {v}"),
                    });
                }
                v = v.ln();
            }
            y.push(v);
            observed.push(true);
        }
        let mut row_vals = Vec::with_capacity(cov_cols.len());
        for (&c, name) in cov_cols.iter().zip(&formula.covariates) {
            let s = rec.get(c).unwrap_or("");
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                path: display.clone(),
                line,
                msg: format!("covariate {name} `{s}` is not a number"),
            })?;
            row_vals.push(v);
        }
        numeric.push(row_vals);
        if let Some(c) = cat_col {
            let s = rec.get(c).unwrap_or("");
            if is_missing(s) {
                return Err(Error::Parse {
                    path: display.clone(),
                    line,
                    msg: format!(
                        "categorical {} has a missing value",
                        formula.categorical.as_ref().unwrap().column
                    ),
                });
            }
            cat_values.push(s.to_string());
        }
    }
    let n = y.len();
    if n != n_regions {
        return Err(Error::ShapeMismatch(format!(
            "{n} data rows for {n_regions} regions"
        )));
    }

    // Reference-coded dummies over the sorted non-reference levels.
    let mut dummy_names: Vec<String> = Vec::new();
    let mut dummy_levels: Vec<String> = Vec::new();
    if let Some(cat) = &formula.categorical {
        let mut levels: Vec<String> = cat_values.clone();
        levels.sort();
        levels.dedup();
        if !levels.iter().any(|l| l == &cat.reference) {
            return Err(Error::InvalidInput(format!(
                "reference level `{}` never occurs in column `{}` (levels: {})",
                cat.reference,
                cat.column,
                levels.join(", ")
            )));
        }
        for level in levels {
            if level != cat.reference {
                dummy_names.push(format!("{}_{level}", cat.column));
                dummy_levels.push(level);
            }
        }
    }

    let p = usize::from(formula.intercept) + cov_cols.len() + dummy_names.len();
    if p == 0 {
        return Err(Error::InvalidInput(
            "formula yields an empty design matrix; add covariates or an intercept".into(),
        ));
    }
    let mut names = Vec::with_capacity(p);
    if formula.intercept {
        names.push("intercept".to_string());
    }
    names.extend(formula.covariates.iter().cloned());
    names.extend(dummy_names.iter().cloned());

    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut j = 0;
        if formula.intercept {
            x[(i, j)] = 1.0;
            j += 1;
        }
        for &v in &numeric[i] {
            x[(i, j)] = v;
            j += 1;
        }
        for level in &dummy_levels {
            x[(i, j)] = f64::from(&cat_values[i] == level);
            j += 1;
        }
    }
    Dataset::new(y, x, observed, names)
}
