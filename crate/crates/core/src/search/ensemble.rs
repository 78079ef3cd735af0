//! Final predictions from the top programs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SearchError;
use crate::dataset::Dataset;
use crate::evaluation::{fit_predict, Evaluator};
use crate::memory::ScoredProgram;
use crate::sandbox::Disqualification;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub identity: String,
    pub validation_score: f64,
    /// `Err` when the program failed on the train or test features.
    pub predictions: Result<Vec<f64>, Disqualification>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    pub predictions: Vec<f64>,
    pub members: Vec<EnsembleMember>,
}

impl EnsemblePrediction {
    pub fn survivors(&self) -> usize {
        self.members.iter().filter(|m| m.predictions.is_ok()).count()
    }
}

/// Most frequent class per row. `votes` must be ordered by descending
/// validation score: on a tie the first voter whose class is among the
/// tied ones decides.
pub fn majority_vote(votes: &[&[f64]]) -> Vec<f64> {
    let n = votes.first().map_or(0, |v| v.len());
    (0..n)
        .map(|i| {
            let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
            for v in votes {
                *counts.entry(v[i] as i64).or_default() += 1;
            }
            let top = counts.values().copied().max().unwrap_or(0);
            votes
                .iter()
                .map(|v| v[i])
                .find(|c| counts[&(*c as i64)] == top)
                .expect("at least one voter")
        })
        .collect()
}

fn mean_prediction(preds: &[&[f64]]) -> Vec<f64> {
    let n = preds.first().map_or(0, |v| v.len());
    (0..n).map(|i| preds.iter().map(|p| p[i]).sum::<f64>() / preds.len() as f64).collect()
}

/// Fits one model per program on its transformed `train` features and
/// combines the test predictions: majority vote for classes, mean otherwise.
pub fn ensemble_predict(
    programs: &[ScoredProgram],
    evaluator: &Evaluator,
    train: &Dataset,
    test: &Dataset,
) -> Result<EnsemblePrediction, SearchError> {
    let mut ordered = programs.to_vec();
    ordered.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.admission.cmp(&b.admission)));
    let task = train.task_kind();
    let members: Vec<EnsembleMember> = std::thread::scope(|s| {
        let handles: Vec<_> = ordered
            .iter()
            .map(|p| {
                s.spawn(move || {
                    let predictions = (|| {
                        let t_train = evaluator.transform(&p.program, &train.features, &train.label_name)?;
                        let t_test = evaluator.transform(&p.program, &test.features, &test.label_name)?;
                        fit_predict(&evaluator.model, &t_train, &train.labels, &t_test, task, evaluator.seed).map_err(|e| {
                            Disqualification { reason: crate::sandbox::DisqualifyReason::ContractViolation, detail: e.to_string() }
                        })
                    })();
                    EnsembleMember { identity: p.program.identity(), validation_score: p.score, predictions }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("ensemble thread panicked")).collect()
    });
    let ok: Vec<&[f64]> = members.iter().filter_map(|m| m.predictions.as_deref().ok()).collect();
    if ok.is_empty() {
        return Err(SearchError::AllProgramsFailed);
    }
    let predictions = if task.is_classification() { majority_vote(&ok) } else { mean_prediction(&ok) };
    Ok(EnsemblePrediction { predictions, members })
}
