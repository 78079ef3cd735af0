//! Data-driven scoring of feature programs.
//!
//! A program is applied to the training and validation feature tables in the
//! sandbox, a fresh model is fitted on the transformed training rows, and the
//! metric on the transformed validation rows becomes the program's score.

pub mod gbt;
pub mod metrics;
pub mod mlp;
pub mod preprocess;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Table, TaskKind};
use crate::program::FeatureProgram;
use crate::sandbox::{Disqualification, DisqualifyReason, ExecutionLimits, ExecutionStatus, Sandbox};

pub use gbt::{GbtParams, GradientBoostedTrees};
pub use metrics::{accuracy, n_rmse, std_dev, Metric, MetricError};
pub use mlp::{Mlp, MlpParams};
pub use preprocess::{preprocess, Matrix, PreprocessError, Preprocessor};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    GradientBoostedTrees,
    Mlp,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gradient_boosted_trees" | "gbt" | "xgboost" => Ok(Self::GradientBoostedTrees),
            "mlp" => Ok(Self::Mlp),
            other => Err(format!("unknown model kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub gbt: GbtParams,
    #[serde(default)]
    pub mlp: MlpParams,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self { kind, gbt: GbtParams::default(), mlp: MlpParams::default() }
    }

    pub fn fit(&self, x: &Matrix, y: &[f64], task: &TaskKind, seed: u64) -> FittedModel {
        match self.kind {
            ModelKind::GradientBoostedTrees => FittedModel::Gbt(GradientBoostedTrees::fit(x, y, task, &self.gbt)),
            ModelKind::Mlp => FittedModel::Mlp(Mlp::fit(x, y, task, &self.mlp, seed)),
        }
    }
}

#[derive(Debug, Clone)]
pub enum FittedModel {
    Gbt(GradientBoostedTrees),
    Mlp(Mlp),
}

impl FittedModel {
    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        match self {
            FittedModel::Gbt(m) => m.predict(x),
            FittedModel::Mlp(m) => m.predict(x),
        }
    }
}

/// A program's validation score. Valid values are signed so that larger is
/// always better; disqualified scores sort below every valid one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Score {
    Valid { value: f64, raw_metric: f64 },
    Disqualified(Disqualification),
}

impl Score {
    pub fn from_metric(metric: Metric, raw: f64) -> Self {
        Score::Valid { value: metric.signed(raw), raw_metric: raw }
    }

    pub fn disqualified(reason: DisqualifyReason, detail: impl Into<String>) -> Self {
        Score::Disqualified(Disqualification { reason, detail: detail.into() })
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Score::Valid { value, .. } => Some(*value),
            Score::Disqualified(_) => None,
        }
    }

    pub fn raw_metric(&self) -> Option<f64> {
        match self {
            Score::Valid { raw_metric, .. } => Some(*raw_metric),
            Score::Disqualified(_) => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, Score::Valid { .. })
    }

    pub fn compare(&self, other: &Score) -> Ordering {
        match (self.value(), other.value()) {
            (Some(a), Some(b)) => a.total_cmp(&b),
            (Some(_), None) => Ordering::Greater,
            (None, Some(_)) => Ordering::Less,
            (None, None) => Ordering::Equal,
        }
    }
}

/// Fits a model on one table and predicts another; everything is fitted on `train` only.
pub fn fit_predict(
    model: &ModelSpec,
    train: &Table,
    train_labels: &[f64],
    other: &Table,
    task: &TaskKind,
    seed: u64,
) -> Result<Vec<f64>, EvalError> {
    let (x_train, x_other) = preprocess(train, other)?;
    Ok(model.fit(&x_train, train_labels, task, seed).predict(&x_other))
}

#[derive(Debug, Clone)]
pub struct Evaluator {
    pub model: ModelSpec,
    pub metric: Metric,
    pub sandbox: Sandbox,
    pub seed: u64,
}

impl Evaluator {
    pub fn new(model: ModelSpec, metric: Metric, sandbox: Sandbox, seed: u64) -> Self {
        Self { model, metric, sandbox, seed }
    }

    /// Metric of a model fitted on `train` and evaluated on `eval`, both as given.
    pub fn score_tables(&self, train: &Table, train_labels: &[f64], eval: &Table, eval_labels: &[f64], task: &TaskKind) -> Result<Score, EvalError> {
        let pred = fit_predict(&self.model, train, train_labels, eval, task, self.seed)?;
        let raw = self.metric.compute(eval_labels, &pred, train_labels)?;
        Ok(Score::from_metric(self.metric, raw))
    }

    /// Score of the model on untransformed features.
    pub fn base_score(&self, train: &Dataset, val: &Dataset) -> Result<Score, EvalError> {
        self.score_tables(&train.features, &train.labels, &val.features, &val.labels, train.task_kind())
    }

    /// Applies `program` to a table under the sandbox, protecting `label`.
    pub fn transform(&self, program: &FeatureProgram, table: &Table, label: &str) -> Result<Table, Disqualification> {
        let sandbox = self.sandbox.clone().protect_label(label);
        match sandbox.execute(program, table).status {
            ExecutionStatus::Ok(t) => Ok(t),
            ExecutionStatus::Disqualified(d) => Err(d),
        }
    }

    pub fn feature_score(&self, program: &FeatureProgram, train: &Dataset, val: &Dataset) -> Score {
        let t_train = match self.transform(program, &train.features, &train.label_name) {
            Ok(t) => t,
            Err(d) => return Score::Disqualified(d),
        };
        let t_val = match self.transform(program, &val.features, &val.label_name) {
            Ok(t) => t,
            Err(d) => return Score::Disqualified(d),
        };
        match self.score_tables(&t_train, &train.labels, &t_val, &val.labels, train.task_kind()) {
            Ok(s) => s,
            Err(EvalError::Preprocess(e)) => Score::disqualified(DisqualifyReason::ContractViolation, e.to_string()),
            Err(e) => Score::disqualified(DisqualifyReason::RuntimeError, e.to_string()),
        }
    }
}

/// Free-function form of [`Evaluator::feature_score`].
pub fn feature_score(
    model: &ModelSpec,
    program: &FeatureProgram,
    train: &Dataset,
    val: &Dataset,
    metric: Metric,
    limits: ExecutionLimits,
    seed: u64,
) -> Score {
    Evaluator::new(model.clone(), metric, Sandbox::new("python3", limits), seed).feature_score(program, train, val)
}
