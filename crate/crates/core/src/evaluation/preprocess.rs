//! Turns text tables into numeric matrices using train-fitted state only.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::dataset::{parse_numeric, ColumnKind, Table};

/// Code assigned to categories never seen in the training table.
pub const UNSEEN_CATEGORY: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PreprocessError {
    #[error("column sets differ: {0}")]
    ColumnMismatch(String),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self { n_rows, n_cols, data: vec![0.0; n_rows * n_cols] }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n_cols + j] = v;
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        Self { n_rows: rows.len(), n_cols: self.n_cols, data }
    }
}

#[derive(Debug, Clone)]
enum ColumnEncoder {
    Numeric { fill: f64 },
    Categorical { codes: BTreeMap<String, f64> },
}

/// Encoders fitted on a training table.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    names: Vec<String>,
    encoders: Vec<ColumnEncoder>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl Preprocessor {
    pub fn fit(train: &Table) -> Self {
        let encoders = (0..train.n_cols())
            .map(|j| match train.kinds()[j] {
                ColumnKind::Numeric => {
                    let finite: Vec<f64> = train
                        .column(j)
                        .iter()
                        .filter_map(|c| parse_numeric(c))
                        .filter(|v| v.is_finite())
                        .collect();
                    ColumnEncoder::Numeric { fill: median(finite) }
                }
                ColumnKind::Categorical => {
                    let mut codes = BTreeMap::new();
                    for c in train.column(j) {
                        codes.entry(c.trim().to_string()).or_insert(0.0);
                    }
                    for (i, v) in codes.values_mut().enumerate() {
                        *v = i as f64;
                    }
                    ColumnEncoder::Categorical { codes }
                }
            })
            .collect();
        Self { names: train.names().to_vec(), encoders }
    }

    pub fn transform(&self, table: &Table) -> Result<Matrix, PreprocessError> {
        if table.n_cols() != self.names.len() {
            return Err(PreprocessError::ColumnMismatch(format!(
                "expected {} columns, got {}",
                self.names.len(),
                table.n_cols()
            )));
        }
        let positions: Vec<usize> = self
            .names
            .iter()
            .map(|n| {
                table
                    .names()
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| PreprocessError::ColumnMismatch(format!("missing column `{n}`")))
            })
            .collect::<Result<_, _>>()?;
        let mut m = Matrix::zeros(table.n_rows(), self.names.len());
        for (j, (enc, &src)) in self.encoders.iter().zip(&positions).enumerate() {
            for (i, cell) in table.column(src).iter().enumerate() {
                let v = match enc {
                    ColumnEncoder::Numeric { fill } => match parse_numeric(cell) {
                        Some(v) if v.is_finite() => v,
                        _ => *fill,
                    },
                    ColumnEncoder::Categorical { codes } => {
                        codes.get(cell.trim()).copied().unwrap_or(UNSEEN_CATEGORY)
                    }
                };
                m.set(i, j, v);
            }
        }
        Ok(m)
    }
}

/// Fits on `train` and encodes both tables.
pub fn preprocess(train: &Table, other: &Table) -> Result<(Matrix, Matrix), PreprocessError> {
    let p = Preprocessor::fit(train);
    Ok((p.transform(train)?, p.transform(other)?))
}
