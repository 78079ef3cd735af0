use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::TaskKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("length mismatch: {0} true values vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("no values to score")]
    Empty,
    #[error("normalizer must be positive (constant training labels?)")]
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    NRmse,
}

impl Metric {
    pub fn for_task(task: &TaskKind) -> Self {
        match task {
            TaskKind::Classification { .. } => Metric::Accuracy,
            TaskKind::Regression => Metric::NRmse,
        }
    }

    pub fn maximize(self) -> bool {
        matches!(self, Metric::Accuracy)
    }

    /// Maps a raw metric to a value where larger is always better.
    pub fn signed(self, raw: f64) -> f64 {
        if self.maximize() {
            raw
        } else {
            -raw
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::NRmse => "n_rmse",
        }
    }

    /// Scores predictions; `train_labels` supplies the N-RMSE normalizer.
    pub fn compute(self, y_true: &[f64], y_pred: &[f64], train_labels: &[f64]) -> Result<f64, MetricError> {
        match self {
            Metric::Accuracy => accuracy(y_true, y_pred),
            Metric::NRmse => n_rmse(y_true, y_pred, std_dev(train_labels)),
        }
    }
}

fn check(y_true: &[f64], y_pred: &[f64]) -> Result<(), MetricError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

pub fn accuracy(y_true: &[f64], y_pred: &[f64]) -> Result<f64, MetricError> {
    check(y_true, y_pred)?;
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

pub fn n_rmse(y_true: &[f64], y_pred: &[f64], normalizer: f64) -> Result<f64, MetricError> {
    check(y_true, y_pred)?;
    if normalizer.is_nan() || normalizer <= 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    let mse = y_true.iter().zip(y_pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y_true.len() as f64;
    Ok(mse.sqrt() / normalizer)
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]), Ok(1.0));
        assert_eq!(accuracy(&[0.0, 1.0, 1.0, 0.0], &[0.0, 1.0, 0.0, 0.0]), Ok(0.75));
        assert_eq!(accuracy(&[], &[]), Err(MetricError::Empty));
        assert_eq!(accuracy(&[1.0], &[1.0, 0.0]), Err(MetricError::LengthMismatch(1, 2)));
    }

    #[test]
    fn n_rmse_examples() {
        assert_eq!(n_rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 0.7), Ok(0.0));
        assert_eq!(n_rmse(&[0.0, 0.0, 2.0, 2.0], &[1.0; 4], 1.0), Ok(1.0));
        assert_eq!(Metric::NRmse.compute(&[1.0], &[1.0], &[4.0, 4.0, 4.0]), Err(MetricError::ZeroVariance));
    }

    #[test]
    fn sign_convention() {
        assert!(Metric::Accuracy.signed(0.9) > Metric::Accuracy.signed(0.8));
        assert!(Metric::NRmse.signed(0.1) > Metric::NRmse.signed(0.2));
    }

    proptest! {
        #[test]
        fn metric_ranges(pairs in proptest::collection::vec((0u8..4, 0u8..4), 1..50)) {
            let (t, p): (Vec<f64>, Vec<f64>) = pairs.iter().map(|&(a, b)| (a as f64, b as f64)).unzip();
            let acc = accuracy(&t, &p).unwrap();
            prop_assert!((0.0..=1.0).contains(&acc));
            prop_assert!(n_rmse(&t, &p, 1.3).unwrap() >= 0.0);
        }
    }
}
