//! Tabular datasets with their task metadata.
//!
//! Cells are kept as the text they were read with, so that row serialization
//! and the sandbox interchange reproduce values verbatim. Numeric views are
//! built on demand by the evaluation layer.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed data file: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed metadata: {0}")]
    Metadata(String),
    #[error("label column `{0}` not found in data header")]
    MissingLabelColumn(String),
    #[error("metadata describes feature `{0}` which is absent from the data header")]
    HeaderMetadataMismatch(String),
    #[error("dataset has no rows or no feature columns")]
    EmptyDataset,
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("class {class} has {count} instances; stratified splitting needs at least 3")]
    ClassTooSmall { class: usize, count: usize },
    #[error("invalid split specification: {0}")]
    InvalidSplit(String),
    #[error("row has {values} values but {names} feature names")]
    LengthMismatch { values: usize, names: usize },
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// Prediction task attached to a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    Classification { n_classes: usize },
    Regression,
}

impl TaskKind {
    pub fn is_classification(&self) -> bool {
        matches!(self, TaskKind::Classification { .. })
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self {
            TaskKind::Classification { n_classes } => Some(*n_classes),
            TaskKind::Regression => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub task_description: String,
    /// Feature name to free-text description. Keys must be feature names.
    pub feature_descriptions: BTreeMap<String, String>,
    pub task_kind: TaskKind,
    /// Original label values, indexed by class code. Empty for regression or
    /// when the labels were already integer codes.
    #[serde(default)]
    pub class_names: Vec<String>,
}

/// Column-major table of text cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    names: Vec<String>,
    kinds: Vec<ColumnKind>,
    columns: Vec<Vec<String>>,
    n_rows: usize,
}

/// True when a cell denotes a missing value.
pub fn is_missing(cell: &str) -> bool {
    cell.trim().is_empty()
}

/// Parses a numeric cell; empty cells parse as NaN.
pub fn parse_numeric(cell: &str) -> Option<f64> {
    let t = cell.trim();
    if t.is_empty() {
        return Some(f64::NAN);
    }
    t.parse::<f64>().ok()
}

fn infer_kind(values: &[String]) -> ColumnKind {
    if values.iter().all(|v| parse_numeric(v).is_some()) {
        ColumnKind::Numeric
    } else {
        ColumnKind::Categorical
    }
}

impl Table {
    /// Builds a table, inferring column kinds. `forced_categorical` names
    /// columns that are categorical regardless of their content.
    pub fn from_columns(
        names: Vec<String>,
        columns: Vec<Vec<String>>,
        forced_categorical: &HashSet<String>,
    ) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(DatasetError::Invalid(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let n_rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n_rows) {
            return Err(DatasetError::Invalid("ragged columns".into()));
        }
        let kinds = names
            .iter()
            .zip(&columns)
            .map(|(n, c)| {
                if forced_categorical.contains(n) {
                    ColumnKind::Categorical
                } else {
                    infer_kind(c)
                }
            })
            .collect();
        Ok(Self { names, kinds, columns, n_rows })
    }

    pub fn with_kinds(
        names: Vec<String>,
        kinds: Vec<ColumnKind>,
        columns: Vec<Vec<String>>,
    ) -> Result<Self> {
        if names.len() != columns.len() || kinds.len() != columns.len() {
            return Err(DatasetError::Invalid("names, kinds and columns differ in length".into()));
        }
        let n_rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n_rows) {
            return Err(DatasetError::Invalid("ragged columns".into()));
        }
        Ok(Self { names, kinds, columns, n_rows })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[ColumnKind] {
        &self.kinds
    }

    pub fn column(&self, j: usize) -> &[String] {
        &self.columns[j]
    }

    pub fn column_by_name(&self, name: &str) -> Option<&[String]> {
        self.names.iter().position(|n| n == name).map(|j| self.column(j))
    }

    pub fn kind_of(&self, name: &str) -> Option<ColumnKind> {
        self.names.iter().position(|n| n == name).map(|j| self.kinds[j])
    }

    pub fn cell(&self, row: usize, col: usize) -> &str {
        &self.columns[col][row]
    }

    pub fn row(&self, i: usize) -> Vec<&str> {
        self.columns.iter().map(|c| c[i].as_str()).collect()
    }

    /// Returns a table holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let columns = self
            .columns
            .iter()
            .map(|c| rows.iter().map(|&i| c[i].clone()).collect())
            .collect();
        Self {
            names: self.names.clone(),
            kinds: self.kinds.clone(),
            columns,
            n_rows: rows.len(),
        }
    }

    pub fn categorical_names(&self) -> Vec<String> {
        self.names
            .iter()
            .zip(&self.kinds)
            .filter(|(_, k)| **k == ColumnKind::Categorical)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub(crate) fn rename(&mut self, names: Vec<String>) {
        debug_assert_eq!(names.len(), self.names.len());
        self.names = names;
    }

    pub(crate) fn columns_mut(&mut self) -> &mut [Vec<String>] {
        &mut self.columns
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub features: Table,
    /// Class codes (as integers) for classification, real targets for regression.
    pub labels: Vec<f64>,
    pub label_name: String,
    pub metadata: Metadata,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Table,
        labels: Vec<f64>,
        label_name: impl Into<String>,
        metadata: Metadata,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            features,
            labels,
            label_name: label_name.into(),
            metadata,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.n_cols()
    }

    pub fn feature_names(&self) -> &[String] {
        self.features.names()
    }

    pub fn task_kind(&self) -> &TaskKind {
        &self.metadata.task_kind
    }

    fn validate(&self) -> Result<()> {
        if self.labels.is_empty() || self.features.n_cols() == 0 {
            return Err(DatasetError::EmptyDataset);
        }
        if self.features.n_rows() != self.labels.len() {
            return Err(DatasetError::Invalid(format!(
                "{} feature rows but {} labels",
                self.features.n_rows(),
                self.labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in self.features.names() {
            if n.is_empty() {
                return Err(DatasetError::Invalid("empty feature name".into()));
            }
            if !seen.insert(n.as_str()) {
                return Err(DatasetError::Invalid(format!("duplicate feature name `{n}`")));
            }
            if *n == self.label_name {
                return Err(DatasetError::Invalid("label column listed as a feature".into()));
            }
        }
        for key in self.metadata.feature_descriptions.keys() {
            if !seen.contains(key.as_str()) {
                return Err(DatasetError::HeaderMetadataMismatch(key.clone()));
            }
        }
        match self.metadata.task_kind {
            TaskKind::Classification { n_classes } => {
                if n_classes < 2 {
                    return Err(DatasetError::Invalid("classification needs K >= 2".into()));
                }
                for &y in &self.labels {
                    if y.fract() != 0.0 || y < 0.0 || y >= n_classes as f64 {
                        return Err(DatasetError::Invalid(format!(
                            "label {y} outside 0..{n_classes}"
                        )));
                    }
                }
            }
            TaskKind::Regression => {
                if self.labels.iter().any(|y| !y.is_finite()) {
                    return Err(DatasetError::Invalid("non-finite regression label".into()));
                }
            }
        }
        Ok(())
    }

    /// Text used for a label when rendering rows.
    pub fn label_text(&self, y: f64) -> String {
        if self.metadata.task_kind.is_classification() {
            if let Some(name) = self.metadata.class_names.get(y as usize) {
                return name.clone();
            }
        }
        format!("{y}")
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            label_name: self.label_name.clone(),
            metadata: self.metadata.clone(),
        }
    }

    /// Returns a copy with different feature cells but the same labels and metadata.
    pub fn with_features(&self, features: Table) -> Self {
        Self { features, ..self.clone() }
    }
}

/// On-disk metadata descriptor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetadataFile {
    pub name: String,
    #[serde(default)]
    pub task_description: String,
    pub label: String,
    /// `classification` or `regression`.
    pub task_kind: String,
    #[serde(default)]
    pub features: BTreeMap<String, String>,
    /// Columns to treat as categorical even when their cells parse as numbers.
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Class values in code order. Inferred from the data when absent.
    #[serde(default)]
    pub classes: Option<Vec<String>>,
}

/// Loads a comma-delimited table with a header row plus its JSON metadata.
pub fn load_dataset(data_path: &Path, metadata_path: &Path) -> Result<Dataset> {
    let meta_text = fs::read_to_string(metadata_path).map_err(|source| DatasetError::Io {
        path: metadata_path.display().to_string(),
        source,
    })?;
    let meta: MetadataFile =
        serde_json::from_str(&meta_text).map_err(|e| DatasetError::Metadata(e.to_string()))?;
    let file = fs::File::open(data_path).map_err(|source| DatasetError::Io {
        path: data_path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut columns: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for record in reader.records() {
        let record = record?;
        for (j, v) in record.iter().enumerate() {
            columns[j].push(v.to_string());
        }
    }
    dataset_from_columns(meta, header, columns)
}

/// Builds a dataset from parsed header and column cells plus a metadata descriptor.
pub fn dataset_from_columns(
    meta: MetadataFile,
    header: Vec<String>,
    mut columns: Vec<Vec<String>>,
) -> Result<Dataset> {
    let label_idx = header
        .iter()
        .position(|h| *h == meta.label)
        .ok_or_else(|| DatasetError::MissingLabelColumn(meta.label.clone()))?;
    for key in meta.features.keys() {
        if !header.contains(key) || *key == meta.label {
            return Err(DatasetError::HeaderMetadataMismatch(key.clone()));
        }
    }
    let label_cells = columns.remove(label_idx);
    let mut names = header;
    names.remove(label_idx);
    if label_cells.is_empty() || names.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }

    let (labels, task_kind, class_names) = match meta.task_kind.as_str() {
        "classification" => encode_classes(&label_cells, meta.classes.as_deref())?,
        "regression" => {
            let ys = label_cells
                .iter()
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|y| y.is_finite())
                        .ok_or_else(|| DatasetError::Invalid(format!("bad regression label `{c}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            (ys, TaskKind::Regression, Vec::new())
        }
        other => return Err(DatasetError::Metadata(format!("unknown task_kind `{other}`"))),
    };

    let forced: HashSet<String> = meta.categorical.iter().cloned().collect();
    let features = Table::from_columns(names, columns, &forced)?;
    let metadata = Metadata {
        task_description: meta.task_description,
        feature_descriptions: meta.features,
        task_kind,
        class_names,
    };
    Dataset::new(meta.name, features, labels, meta.label, metadata)
}

fn encode_classes(
    cells: &[String],
    declared: Option<&[String]>,
) -> Result<(Vec<f64>, TaskKind, Vec<String>)> {
    let values: Vec<&str> = cells.iter().map(|c| c.trim()).collect();
    let classes: Vec<String> = match declared {
        Some(d) => d.to_vec(),
        None => {
            let distinct: BTreeSet<&str> = values.iter().copied().collect();
            let as_ints: Option<Vec<i64>> = distinct.iter().map(|v| v.parse::<i64>().ok()).collect();
            match as_ints {
                Some(mut ints) => {
                    ints.sort_unstable();
                    ints.dedup();
                    ints.iter().map(|i| i.to_string()).collect()
                }
                None => distinct.iter().map(|s| s.to_string()).collect(),
            }
        }
    };
    let index: BTreeMap<&str, usize> =
        classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let labels = values
        .iter()
        .map(|v| {
            index
                .get(v)
                .map(|&i| i as f64)
                .ok_or_else(|| DatasetError::Invalid(format!("label `{v}` not among declared classes")))
        })
        .collect::<Result<Vec<_>>>()?;
    let n_classes = classes.len();
    if n_classes < 2 {
        return Err(DatasetError::Invalid("classification needs at least two classes".into()));
    }
    let identity_codes = classes.iter().enumerate().all(|(i, c)| *c == i.to_string());
    let names = if identity_codes { Vec::new() } else { classes };
    Ok((labels, TaskKind::Classification { n_classes }, names))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    /// Fraction of the non-test portion held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { test_fraction: 0.2, val_fraction: 0.2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub indices: SplitIndices,
}

impl Split {
    /// Train and validation rows together, in original order.
    pub fn train_full(&self, ds: &Dataset) -> Dataset {
        let mut rows: Vec<usize> =
            self.indices.train.iter().chain(&self.indices.val).copied().collect();
        rows.sort_unstable();
        ds.select_rows(&rows)
    }
}

/// Computes split indices: stratified per class for classification, a plain
/// shuffle for regression. Each partition is returned in ascending row order.
pub fn split_indices(ds: &Dataset, spec: &SplitSpec) -> Result<SplitIndices> {
    for (name, f) in [("test_fraction", spec.test_fraction), ("val_fraction", spec.val_fraction)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(DatasetError::InvalidSplit(format!("{name} must lie in (0, 1), got {f}")));
        }
    }
    if ds.n_rows() == 0 {
        return Err(DatasetError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let strata: Vec<Vec<usize>> = match ds.task_kind() {
        TaskKind::Classification { n_classes } => {
            let mut groups = vec![Vec::new(); *n_classes];
            for (i, &y) in ds.labels.iter().enumerate() {
                groups[y as usize].push(i);
            }
            for (class, g) in groups.iter().enumerate() {
                if !g.is_empty() && g.len() < 3 {
                    return Err(DatasetError::ClassTooSmall { class, count: g.len() });
                }
            }
            groups.into_iter().filter(|g| !g.is_empty()).collect()
        }
        TaskKind::Regression => vec![(0..ds.n_rows()).collect()],
    };
    let stratified = ds.task_kind().is_classification();
    let mut out = SplitIndices { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for mut group in strata {
        group.shuffle(&mut rng);
        let n = group.len();
        let mut n_test = (n as f64 * spec.test_fraction).round() as usize;
        if stratified {
            n_test = n_test.clamp(1, n - 2);
        }
        let rest = n - n_test;
        let mut n_val = (rest as f64 * spec.val_fraction).round() as usize;
        if stratified {
            n_val = n_val.clamp(1, rest - 1);
        }
        out.test.extend_from_slice(&group[..n_test]);
        out.val.extend_from_slice(&group[n_test..n_test + n_val]);
        out.train.extend_from_slice(&group[n_test + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<Split> {
    let indices = split_indices(ds, spec)?;
    Ok(Split {
        train: ds.select_rows(&indices.train),
        val: ds.select_rows(&indices.val),
        test: ds.select_rows(&indices.test),
        indices,
    })
}

/// Renders one row as `If c1 is v1, c2 is v2. Then Result is y`.
pub fn serialize_row<S: AsRef<str>>(values: &[S], label: &str, names: &[String]) -> Result<String> {
    if values.len() != names.len() {
        return Err(DatasetError::LengthMismatch { values: values.len(), names: names.len() });
    }
    let clauses: Vec<String> = names
        .iter()
        .zip(values)
        .map(|(c, v)| format!("{c} is {}", v.as_ref()))
        .collect();
    Ok(format!("If {}. Then Result is {label}", clauses.join(", ")))
}

/// Placeholder name for the `j`-th feature (zero-based).
pub fn placeholder_name(j: usize) -> String {
    format!("C{}", j + 1)
}

/// Strips domain knowledge: features become `C1..Cd`, descriptions vanish and
/// class labels are shown as their integer codes.
pub fn anonymize(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    let names = (0..ds.n_features()).map(placeholder_name).collect();
    out.features.rename(names);
    out.metadata.task_description.clear();
    out.metadata.feature_descriptions.clear();
    out.metadata.class_names.clear();
    out
}

fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Adds Gaussian noise with standard deviation `sigma * column std` to every
/// finite numeric cell. Categorical columns and labels are untouched.
pub fn inject_noise(ds: &Dataset, sigma: f64, seed: u64) -> Dataset {
    assert!(sigma >= 0.0, "sigma must be non-negative");
    let mut out = ds.clone();
    if sigma == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = out.features.kinds().to_vec();
    for (col, kind) in out.features.columns_mut().iter_mut().zip(kinds) {
        if kind != ColumnKind::Numeric {
            continue;
        }
        let parsed: Vec<f64> = col.iter().map(|c| parse_numeric(c).unwrap_or(f64::NAN)).collect();
        let finite: Vec<f64> = parsed.iter().copied().filter(|v| v.is_finite()).collect();
        let sd = sigma * population_std(&finite);
        if sd <= 0.0 {
            continue;
        }
        let normal = Normal::new(0.0, sd).expect("finite positive std");
        for (cell, v) in col.iter_mut().zip(parsed) {
            if v.is_finite() {
                *cell = format!("{}", v + normal.sample(&mut rng));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta(kind: &str, label: &str, features: &[(&str, &str)]) -> MetadataFile {
        MetadataFile {
            name: "t".into(),
            task_description: "predict things".into(),
            label: label.into(),
            task_kind: kind.into(),
            features: features.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            categorical: vec![],
            classes: None,
        }
    }

    fn cols(rows: &[&[&str]]) -> Vec<Vec<String>> {
        let d = rows[0].len();
        (0..d).map(|j| rows.iter().map(|r| r[j].to_string()).collect()).collect()
    }

    fn two_class(n: usize, minority: usize) -> Dataset {
        let header = vec!["a".to_string(), "y".to_string()];
        let rows: Vec<Vec<String>> = (0..n)
            .map(|i| vec![i.to_string(), if i < minority { "1" } else { "0" }.to_string()])
            .collect();
        let columns = (0..2).map(|j| rows.iter().map(|r| r[j].clone()).collect()).collect();
        dataset_from_columns(meta("classification", "y", &[]), header, columns).unwrap()
    }

    #[test]
    fn label_column_is_removed_from_features() {
        let header = ["a", "b", "c", "class"].map(String::from).to_vec();
        let columns = cols(&[&["1", "x", "2.5", "0"], &["2", "y", "3.5", "1"]]);
        let ds = dataset_from_columns(meta("classification", "class", &[]), header, columns).unwrap();
        assert_eq!(ds.n_features(), 3);
        assert_eq!(ds.feature_names(), &["a", "b", "c"]);
        assert_eq!(ds.features.kinds(), &[ColumnKind::Numeric, ColumnKind::Categorical, ColumnKind::Numeric]);
    }

    #[test]
    fn described_feature_missing_from_header() {
        let header = ["a", "class"].map(String::from).to_vec();
        let columns = cols(&[&["1", "0"], &["2", "1"]]);
        let err = dataset_from_columns(meta("classification", "class", &[("Age", "years")]), header, columns)
            .unwrap_err();
        assert!(matches!(err, DatasetError::HeaderMetadataMismatch(f) if f == "Age"));
    }

    #[test]
    fn missing_label_column() {
        let header = ["a", "b"].map(String::from).to_vec();
        let columns = cols(&[&["1", "0"]]);
        let err = dataset_from_columns(meta("classification", "class", &[]), header, columns).unwrap_err();
        assert!(matches!(err, DatasetError::MissingLabelColumn(_)));
    }

    #[test]
    fn empty_dataset() {
        let header = ["a", "class"].map(String::from).to_vec();
        let err = dataset_from_columns(meta("classification", "class", &[]), header, vec![vec![], vec![]])
            .unwrap_err();
        assert!(matches!(err, DatasetError::EmptyDataset));
    }

    #[test]
    fn declared_categorical_wins_over_numeric_content() {
        let header = ["zip", "y"].map(String::from).to_vec();
        let mut m = meta("regression", "y", &[]);
        m.categorical = vec!["zip".into()];
        let ds = dataset_from_columns(m, header, cols(&[&["101", "1.5"], &["102", "2.0"]])).unwrap();
        assert_eq!(ds.features.kinds(), &[ColumnKind::Categorical]);
    }

    #[test]
    fn string_classes_are_coded_in_sorted_order() {
        let header = ["a", "y"].map(String::from).to_vec();
        let columns = cols(&[&["1", "R"], &["2", "B"], &["3", "L"]]);
        let ds = dataset_from_columns(meta("classification", "y", &[]), header, columns).unwrap();
        assert_eq!(ds.metadata.class_names, vec!["B", "L", "R"]);
        assert_eq!(ds.labels, vec![2.0, 0.0, 1.0]);
        assert_eq!(ds.label_text(1.0), "L");
    }

    #[test]
    fn split_sizes_for_hundred_rows() {
        let ds = two_class(100, 50);
        let s = split_indices(&ds, &SplitSpec { test_fraction: 0.2, val_fraction: 0.2, seed: 3 }).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (64, 16, 20));
    }

    #[test]
    fn split_is_deterministic() {
        let ds = two_class(100, 30);
        let spec = SplitSpec { test_fraction: 0.2, val_fraction: 0.2, seed: 11 };
        assert_eq!(split_indices(&ds, &spec).unwrap(), split_indices(&ds, &spec).unwrap());
        let other = SplitSpec { seed: 12, ..spec };
        assert_ne!(split_indices(&ds, &spec).unwrap(), split_indices(&ds, &other).unwrap());
    }

    #[test]
    fn split_rejects_tiny_class() {
        let ds = two_class(20, 1);
        let err = split_indices(&ds, &SplitSpec::default()).unwrap_err();
        assert!(matches!(err, DatasetError::ClassTooSmall { class: 1, count: 1 }));
    }

    #[test]
    fn split_is_stratified() {
        let ds = two_class(200, 40);
        let s = split_indices(&ds, &SplitSpec::default()).unwrap();
        let minority_in_test = s.test.iter().filter(|&&i| ds.labels[i] == 1.0).count();
        assert_eq!(minority_in_test, 8);
    }

    #[test]
    fn serialize_row_format() {
        let names = vec!["A".to_string(), "B".to_string()];
        assert_eq!(serialize_row(&["3", "red"], "1", &names).unwrap(), "If A is 3, B is red. Then Result is 1");
        assert_eq!(serialize_row(&["0"], "0", &names[..1]).unwrap(), "If A is 0. Then Result is 0");
        let three: Vec<String> = ["A", "B", "C"].map(String::from).to_vec();
        assert!(matches!(serialize_row(&["1", "2"], "0", &three), Err(DatasetError::LengthMismatch { .. })));
    }

    #[test]
    fn anonymize_renames_and_strips() {
        let header = ["weight", "height", "y"].map(String::from).to_vec();
        let m = meta("regression", "y", &[("weight", "body weight in kg")]);
        let ds = dataset_from_columns(m, header, cols(&[&["70", "180", "1"], &["60", "170", "2"]])).unwrap();
        let anon = anonymize(&ds);
        assert_eq!(anon.feature_names(), &["C1", "C2"]);
        assert!(anon.metadata.task_description.is_empty());
        assert!(anon.metadata.feature_descriptions.is_empty());
        assert_eq!(anonymize(&anon), anon);
        let row = anon.features.row(0);
        let text = serialize_row(&row, "1", anon.feature_names()).unwrap();
        assert!(text.contains("C1"));
        for original in ds.feature_names() {
            assert!(!text.contains(original.as_str()));
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let ds = two_class(50, 10);
        assert_eq!(inject_noise(&ds, 0.0, 9), ds);
    }

    #[test]
    fn noise_preserves_mean_statistically() {
        // 1000 rows, values 0..999: std ~ 288.7; with sigma 0.1 the per-cell noise
        // std is ~28.9, so the mean's standard error is ~0.91.
        let ds = two_class(1000, 300);
        let noisy = inject_noise(&ds, 0.1, 4);
        let orig: Vec<f64> = ds.features.column(0).iter().map(|c| c.parse().unwrap()).collect();
        let pert: Vec<f64> = noisy.features.column(0).iter().map(|c| c.parse().unwrap()).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let noise_sd = 0.1 * population_std(&orig);
        let se = noise_sd / (orig.len() as f64).sqrt();
        assert!((mean(&orig) - mean(&pert)).abs() < 3.0 * se);
        assert_ne!(orig, pert);
        assert_eq!(noisy.labels, ds.labels);
        assert_eq!(inject_noise(&ds, 0.1, 4), noisy);
    }

    #[test]
    fn noise_skips_categorical_columns() {
        let header = ["c", "x", "y"].map(String::from).to_vec();
        let columns = cols(&[&["u", "1.0", "0"], &["v", "2.0", "1"], &["w", "3.0", "1"]]);
        let ds = dataset_from_columns(meta("regression", "y", &[]), header, columns).unwrap();
        let noisy = inject_noise(&ds, 0.05, 1);
        assert_eq!(noisy.features.column(0), ds.features.column(0));
        assert_ne!(noisy.features.column(1), ds.features.column(1));
    }

    proptest! {
        #[test]
        fn split_partitions_are_disjoint_and_exhaustive(
            n in 12usize..150, minority in 3usize..6, seed in any::<u64>(),
            test_fraction in 0.05f64..0.5, val_fraction in 0.05f64..0.5,
        ) {
            let ds = two_class(n, minority);
            let s = split_indices(&ds, &SplitSpec { test_fraction, val_fraction, seed }).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn serialized_row_recovers_cells(
            cells in proptest::collection::vec("[a-z0-9.]{1,6}", 1..6),
            label in "[0-9]{1,2}",
        ) {
            let names: Vec<String> = (0..cells.len()).map(|j| format!("f{j}")).collect();
            let text = serialize_row(&cells, &label, &names).unwrap();
            let body = text.strip_prefix("If ").unwrap();
            let (clauses, y) = body.split_once(". Then Result is ").unwrap();
            prop_assert_eq!(y, label.as_str());
            let values: Vec<&str> = clauses
                .split(", ")
                .zip(&names)
                .map(|(c, n)| c.strip_prefix(&format!("{n} is ")).unwrap())
                .collect();
            prop_assert_eq!(values, cells.iter().map(String::as_str).collect::<Vec<_>>());
        }
    }
}
