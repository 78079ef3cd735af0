//! Repeated-split evaluation: base model against the engineered ensemble.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ensemble_predict, run_with_templates, SearchConfig, SearchError, SearchResult};
use crate::backend::Backend;
use crate::dataset::{split, Dataset};
use crate::evaluation::{fit_predict, std_dev};
use crate::prompt::PromptTemplates;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub split: usize,
    pub split_seed: u64,
    pub search_seed: u64,
    /// Test metric of the model on raw features.
    pub base: f64,
    /// Test metric of the top-program ensemble.
    pub llmfe: f64,
    pub seed_validation_score: f64,
    pub best_validation_score: f64,
    pub samples_used: usize,
    pub ensemble_size: usize,
    pub ensemble_survivors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub dataset: String,
    pub n_rows: usize,
    pub n_features: usize,
    pub metric: String,
    pub ablation: String,
    pub records: Vec<SplitRecord>,
    pub base_mean: f64,
    pub base_std: f64,
    pub llmfe_mean: f64,
    pub llmfe_std: f64,
}

/// Population mean and standard deviation.
pub fn summarize(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    (values.iter().sum::<f64>() / values.len() as f64, std_dev(values))
}

impl ProtocolSummary {
    pub fn from_records(cfg: &SearchConfig, ds: &Dataset, metric: &str, records: Vec<SplitRecord>) -> Self {
        let (base_mean, base_std) = summarize(&records.iter().map(|r| r.base).collect::<Vec<_>>());
        let (llmfe_mean, llmfe_std) = summarize(&records.iter().map(|r| r.llmfe).collect::<Vec<_>>());
        Self {
            dataset: ds.name.clone(),
            n_rows: ds.n_rows(),
            n_features: ds.n_features(),
            metric: metric.to_string(),
            ablation: cfg.ablation.label(),
            records,
            base_mean,
            base_std,
            llmfe_mean,
            llmfe_std,
        }
    }
}

/// Config for the `i`-th split: both seeds shifted by `i`.
pub fn split_config(cfg: &SearchConfig, i: usize) -> SearchConfig {
    SearchConfig { split_seed: cfg.split_seed + i as u64, search_seed: cfg.search_seed + i as u64, ..cfg.clone() }
}

/// Searches on one split and scores base model and ensemble on its test rows.
/// Final models are fitted on train and validation rows together.
pub fn run_split(
    cfg: &SearchConfig,
    ds: &Dataset,
    backend: Arc<dyn Backend>,
    i: usize,
) -> Result<(SearchResult, SplitRecord), SearchError> {
    run_split_with(cfg, ds, backend, &PromptTemplates::default(), i)
}

pub fn run_split_with(
    cfg: &SearchConfig,
    ds: &Dataset,
    backend: Arc<dyn Backend>,
    templates: &PromptTemplates,
    i: usize,
) -> Result<(SearchResult, SplitRecord), SearchError> {
    let cfg_i = split_config(cfg, i);
    cfg_i.validate()?;
    let prepared = cfg_i.prepare(ds);
    let parts = split(&prepared, &cfg_i.split_spec())?;
    let result = run_with_templates(&cfg_i, &parts.train, &parts.val, backend, templates)?;
    let full = parts.train_full(&prepared);
    let test = &parts.test;
    let evaluator = cfg_i.evaluator(&full);
    let metric = evaluator.metric;
    let base_pred = fit_predict(&evaluator.model, &full.features, &full.labels, &test.features, full.task_kind(), evaluator.seed)?;
    let base = metric.compute(&test.labels, &base_pred, &full.labels).map_err(crate::evaluation::EvalError::from)?;
    let top = result.top_programs(cfg_i.islands);
    let ensemble = ensemble_predict(&top, &evaluator, &full, test)?;
    let llmfe = metric.compute(&test.labels, &ensemble.predictions, &full.labels).map_err(crate::evaluation::EvalError::from)?;
    let record = SplitRecord {
        split: i,
        split_seed: cfg_i.split_seed,
        search_seed: cfg_i.search_seed,
        base,
        llmfe,
        seed_validation_score: result.seed_score,
        best_validation_score: result.best_score,
        samples_used: result.samples_used,
        ensemble_size: top.len(),
        ensemble_survivors: ensemble.survivors(),
    };
    Ok((result, record))
}

/// Runs `n_splits` independent (split, search) pairs.
pub fn run_protocol(
    cfg: &SearchConfig,
    ds: &Dataset,
    backend: Arc<dyn Backend>,
    n_splits: usize,
) -> Result<(ProtocolSummary, Vec<SearchResult>), SearchError> {
    cfg.validate()?;
    if n_splits == 0 {
        return Err(SearchError::Config("n_splits must be at least 1".into()));
    }
    let mut records = Vec::with_capacity(n_splits);
    let mut results = Vec::with_capacity(n_splits);
    for i in 0..n_splits {
        let (result, record) = run_split(cfg, ds, backend.clone(), i)?;
        records.push(record);
        results.push(result);
    }
    let metric = results[0].metric.name();
    Ok((ProtocolSummary::from_records(cfg, ds, metric, records), results))
}
