//! The evolutionary search loop.
//!
//! Each iteration picks an island, draws demonstrations from it, prompts the
//! backend for `b` new programs, scores every candidate in the sandbox and
//! offers the valid ones back to the same island.

mod ensemble;
mod protocol;
mod trace;

use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{parse_program, Backend, BackendError, Sampler};
use crate::dataset::{anonymize, split, Dataset, DatasetError, Split, SplitSpec};
use crate::evaluation::{EvalError, Evaluator, Metric, ModelSpec, Score};
use crate::memory::{AdmissionRule, BoltzmannParams, MemoryBuffer, MemoryError, ScoredProgram, WithinClusterChoice};
use crate::program::{FeatureProgram, Provenance};
use crate::prompt::{build_prompt, seed_demonstration, InstructionVariant, PromptError, PromptSpec, PromptTemplates};
use crate::sandbox::{ExecutionLimits, Sandbox};

pub use ensemble::{ensemble_predict, majority_vote, EnsembleMember, EnsemblePrediction};
pub use protocol::{run_protocol, run_split, run_split_with, split_config, summarize, ProtocolSummary, SplitRecord};
pub use trace::{CandidateOutcome, CandidateRecord, DemoRef, IterationRecord, TraceLine};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("seed program was disqualified: {0}")]
    SeedDisqualified(String),
    #[error("backend failed after {} iterations: {source}", partial.trace.len())]
    Backend {
        #[source]
        source: BackendError,
        /// Everything recorded before the failure.
        partial: Box<SearchResult>,
    },
    #[error("every ensemble member failed on the held-out features")]
    AllProgramsFailed,
}

impl SearchError {
    pub fn is_unreachable(&self) -> bool {
        matches!(self, SearchError::Backend { source: BackendError::BackendUnreachable(_), .. })
    }
}

/// Pipeline components switched off for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ablation {
    pub no_domain_knowledge: bool,
    pub no_data_examples: bool,
    pub no_evolution: bool,
}

impl Ablation {
    pub fn parse(name: &str) -> Option<Self> {
        let mut a = Self::default();
        match name {
            "none" | "" => {}
            "no_domain_knowledge" => a.no_domain_knowledge = true,
            "no_data_examples" => a.no_data_examples = true,
            "no_evolution" => a.no_evolution = true,
            _ => return None,
        }
        Some(a)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.no_domain_knowledge {
            parts.push("no_domain_knowledge");
        }
        if self.no_data_examples {
            parts.push("no_data_examples");
        }
        if self.no_evolution {
            parts.push("no_evolution");
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// `None` means `ceil(sample_budget / batch_size)` with a truncated last batch.
    pub iterations: Option<usize>,
    pub batch_size: usize,
    pub islands: usize,
    pub demonstrations: usize,
    pub llm_temperature: f64,
    pub sample_budget: usize,
    pub split_seed: u64,
    pub search_seed: u64,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub limits: ExecutionLimits,
    pub ablation: Ablation,
    pub model: ModelSpec,
    /// `None` picks the metric that matches the task.
    pub metric: Option<Metric>,
    pub boltzmann: BoltzmannParams,
    pub admission: AdmissionRule,
    pub within_cluster: WithinClusterChoice,
    pub instruction_variant: Option<InstructionVariant>,
    pub n_example_rows: usize,
    pub max_prompt_chars: Option<usize>,
    pub interpreter: String,
    /// Score the candidates of one batch concurrently.
    pub parallel_eval: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            iterations: None,
            batch_size: 3,
            islands: 3,
            demonstrations: 2,
            llm_temperature: 0.8,
            sample_budget: 20,
            split_seed: 0,
            search_seed: 0,
            test_fraction: 0.2,
            val_fraction: 0.2,
            limits: ExecutionLimits::default(),
            ablation: Ablation::default(),
            model: ModelSpec::new(crate::evaluation::ModelKind::GradientBoostedTrees),
            metric: None,
            boltzmann: BoltzmannParams::default(),
            admission: AdmissionRule::default(),
            within_cluster: WithinClusterChoice::default(),
            instruction_variant: None,
            n_example_rows: 10,
            max_prompt_chars: None,
            interpreter: "python3".into(),
            parallel_eval: true,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::Config(m.to_string()));
        if self.batch_size == 0 || self.islands == 0 || self.demonstrations == 0 || self.sample_budget == 0 {
            return bad("batch_size, islands, demonstrations and sample_budget must be at least 1");
        }
        if let Some(t) = self.iterations {
            if t == 0 {
                return bad("iterations must be at least 1");
            }
            if t * self.batch_size > self.sample_budget {
                return Err(SearchError::Config(format!(
                    "iterations x batch_size = {} exceeds sample_budget {}",
                    t * self.batch_size,
                    self.sample_budget
                )));
            }
        }
        if !(self.llm_temperature.is_finite() && self.llm_temperature >= 0.0) {
            return bad("llm_temperature must be >= 0");
        }
        if self.limits.wall_time.is_zero() || self.limits.memory == 0 {
            return bad("execution limits must be positive");
        }
        if !(0.0 < self.test_fraction && self.test_fraction < 1.0 && 0.0 < self.val_fraction && self.val_fraction < 1.0) {
            return bad("split fractions must lie strictly between 0 and 1");
        }
        if self.boltzmann.t0 <= 0.0 || self.boltzmann.period == 0 {
            return bad("boltzmann t0 and period must be positive");
        }
        Ok(())
    }

    pub fn iteration_count(&self) -> usize {
        self.iterations.unwrap_or_else(|| self.sample_budget.div_ceil(self.batch_size))
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec { test_fraction: self.test_fraction, val_fraction: self.val_fraction, seed: self.split_seed }
    }

    pub fn prompt_spec(&self) -> PromptSpec {
        PromptSpec {
            instruction_variant: self.instruction_variant,
            include_domain_knowledge: !self.ablation.no_domain_knowledge,
            include_data_examples: !self.ablation.no_data_examples,
            n_example_rows: self.n_example_rows,
            k: if self.ablation.no_evolution { 1 } else { self.demonstrations },
            max_chars: self.max_prompt_chars,
        }
    }

    pub fn evaluator(&self, ds: &Dataset) -> Evaluator {
        let metric = self.metric.unwrap_or_else(|| Metric::for_task(ds.task_kind()));
        Evaluator::new(self.model.clone(), metric, Sandbox::new(self.interpreter.clone(), self.limits), self.search_seed)
    }

    /// Dataset as the search sees it; anonymized when domain knowledge is withheld.
    pub fn prepare(&self, ds: &Dataset) -> Dataset {
        if self.ablation.no_domain_knowledge {
            anonymize(ds)
        } else {
            ds.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_program: FeatureProgram,
    pub best_score: f64,
    pub seed_score: f64,
    pub trace: Vec<IterationRecord>,
    /// Best score after seeding, then after every iteration.
    pub best_trajectory: Vec<f64>,
    pub samples_used: usize,
    pub buffer: MemoryBuffer,
    pub metric: Metric,
    #[serde(skip)]
    pub timings: Vec<Duration>,
}

impl SearchResult {
    /// Up to `m` distinct programs from the whole buffer by validation score.
    pub fn top_programs(&self, m: usize) -> Vec<ScoredProgram> {
        self.buffer.top_programs(m)
    }

    /// Line records: one per candidate.
    pub fn trace_lines(&self, split: usize) -> Vec<TraceLine> {
        trace::lines(&self.trace, split)
    }
}

/// Splits `ds` and searches on the train and validation parts.
pub fn run(cfg: &SearchConfig, ds: &Dataset, backend: Arc<dyn Backend>) -> Result<(SearchResult, Split), SearchError> {
    cfg.validate()?;
    let ds = cfg.prepare(ds);
    let parts = split(&ds, &cfg.split_spec())?;
    let result = run_on_split(cfg, &parts.train, &parts.val, backend)?;
    Ok((result, parts))
}

/// The search proper, on already split (and, if needed, anonymized) data.
pub fn run_on_split(
    cfg: &SearchConfig,
    train: &Dataset,
    val: &Dataset,
    backend: Arc<dyn Backend>,
) -> Result<SearchResult, SearchError> {
    run_with_templates(cfg, train, val, backend, &PromptTemplates::default())
}

pub fn run_with_templates(
    cfg: &SearchConfig,
    train: &Dataset,
    val: &Dataset,
    backend: Arc<dyn Backend>,
    templates: &PromptTemplates,
) -> Result<SearchResult, SearchError> {
    cfg.validate()?;
    let evaluator = cfg.evaluator(train);
    let sampler = Sampler::new(backend, Some(cfg.sample_budget));
    sampler.begin_run();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.search_seed);

    let seed = FeatureProgram::identity_seed();
    let seed_score = evaluator.feature_score(&seed, train, val);
    let (seed_value, seed_raw) = match &seed_score {
        Score::Valid { value, raw_metric } => (*value, *raw_metric),
        Score::Disqualified(d) => return Err(SearchError::SeedDisqualified(format!("{}: {}", d.reason, d.detail))),
    };
    let buffer = MemoryBuffer::init(&seed, &seed_score, cfg.islands, cfg.boltzmann)?
        .with_rule(cfg.admission)
        .with_within_cluster(cfg.within_cluster);
    let seed_demo = seed_demonstration(&seed, seed_value, seed_raw);
    let spec = cfg.prompt_spec();

    let mut result = SearchResult {
        best_program: seed.clone(),
        best_score: seed_value,
        seed_score: seed_value,
        trace: Vec::new(),
        best_trajectory: vec![seed_value],
        samples_used: 0,
        buffer,
        metric: evaluator.metric,
        timings: Vec::new(),
    };

    for iteration in 0..cfg.iteration_count() {
        let b = cfg.batch_size.min(cfg.sample_budget - sampler.used());
        if b == 0 {
            break;
        }
        let island = rng.random_range(0..cfg.islands);
        let demos = if cfg.ablation.no_evolution {
            vec![seed_demo.clone()]
        } else {
            result.buffer.sample_demonstrations(island, cfg.demonstrations, &mut rng)
        };
        let prompt = build_prompt(train, &demos, &spec, templates, &mut rng)?;
        let completions = match sampler.sample(&prompt.text, b) {
            Ok(c) => c,
            Err(source) => {
                result.samples_used = sampler.used();
                return Err(SearchError::Backend { source, partial: Box::new(result) });
            }
        };

        let version = demos.len();
        let parents: Vec<String> = demos.iter().map(|d| d.program.identity()).collect();
        let candidates: Vec<Result<FeatureProgram, _>> = completions
            .iter()
            .map(|c| {
                parse_program(&c.raw_text, version).map(|mut p| {
                    p.provenance = Provenance { island: Some(island), iteration: Some(iteration), parents: parents.clone() };
                    p
                })
            })
            .collect();
        let scored = score_batch(&evaluator, &candidates, train, val, cfg.parallel_eval);

        // register in batch order so reruns are identical
        let mut records = Vec::with_capacity(b);
        for (index, ((completion, candidate), (score, elapsed))) in
            completions.iter().zip(candidates).zip(scored).enumerate()
        {
            result.timings.push(elapsed);
            let outcome = match (candidate, score) {
                (Err(failure), _) => CandidateOutcome::ParseFailure { reason: failure },
                (Ok(program), Some(Score::Disqualified(d))) => CandidateOutcome::Disqualified {
                    source_hash: program.source_hash(),
                    reason: d.reason,
                    detail: d.detail,
                },
                (Ok(program), Some(Score::Valid { value, raw_metric })) => {
                    let source_hash = program.source_hash();
                    let admitted = result.buffer.register(island, program.clone(), value, raw_metric);
                    if value > result.best_score {
                        result.best_score = value;
                        result.best_program = program;
                    }
                    CandidateOutcome::Valid { source_hash, score: value, raw_metric, admitted }
                }
                (Ok(_), None) => unreachable!("parsed candidates are always scored"),
            };
            records.push(CandidateRecord { index, request_id: completion.request_id.clone(), outcome });
        }
        result.best_trajectory.push(result.best_score);
        result.trace.push(IterationRecord {
            iteration,
            island,
            variant: prompt.variant,
            demonstrations: demos.iter().map(DemoRef::from).collect(),
            prompt: prompt.text,
            requested: b,
            candidates: records,
            best_score: result.best_score,
        });
        result.samples_used = sampler.used();
    }
    Ok(result)
}

fn score_batch(
    evaluator: &Evaluator,
    candidates: &[Result<FeatureProgram, crate::backend::ParseFailure>],
    train: &Dataset,
    val: &Dataset,
    parallel: bool,
) -> Vec<(Option<Score>, Duration)> {
    let score_one = |c: &Result<FeatureProgram, _>| {
        let start = std::time::Instant::now();
        let s = c.as_ref().ok().map(|p| evaluator.feature_score(p, train, val));
        (s, start.elapsed())
    };
    if parallel && candidates.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = candidates.iter().map(|c| s.spawn(move || score_one(c))).collect();
            handles.into_iter().map(|h| h.join().expect("scoring thread panicked")).collect()
        })
    } else {
        candidates.iter().map(score_one).collect()
    }
}

#[cfg(test)]
mod tests;
