//! Flat TOML run configuration with `--key value` overrides.
//!
//! Precedence is flag, then file, then default. Relative paths in the file
//! are resolved against the file's directory; relative paths given as flags
//! are resolved against the working directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendConfig, BackendKind, RequestMode};
use crate::evaluation::{Metric, ModelKind, ModelSpec};
use crate::memory::{AdmissionRule, BoltzmannParams, WithinClusterChoice};
use crate::prompt::InstructionVariant;
use crate::sandbox::ExecutionLimits;
use crate::search::{Ablation, SearchConfig};

const PATH_KEYS: [&str; 5] = ["dataset_path", "metadata_path", "output_dir", "script_path", "templates_dir"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("override `{0}` is missing its leading `--`")]
    BadOverride(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_path: PathBuf,
    pub metadata_path: PathBuf,
    pub output_dir: PathBuf,

    pub iterations: Option<usize>,
    pub batch_size: usize,
    pub islands: usize,
    pub demonstrations: usize,
    pub llm_temperature: f64,
    pub sample_budget: usize,
    pub split_seed: u64,
    pub search_seed: u64,
    pub n_splits: usize,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub wall_time_secs: f64,
    pub memory_bytes: u64,
    /// `none`, or a comma-separated list of ablations.
    pub ablation: String,
    pub model: String,
    /// `accuracy` or `n_rmse`; empty picks the task's metric.
    pub metric: String,
    pub boltzmann_t0: f64,
    pub boltzmann_period: u64,
    pub admission: AdmissionRule,
    pub within_cluster: WithinClusterChoice,
    /// `random`, `basic` or `complex_operators`.
    pub instruction_variant: String,
    pub n_example_rows: usize,
    pub max_prompt_chars: Option<usize>,
    pub interpreter: String,
    pub parallel_eval: bool,
    pub templates_dir: Option<PathBuf>,

    pub backend: BackendKind,
    pub model_name: String,
    pub endpoint: Option<String>,
    pub script_path: Option<PathBuf>,
    pub max_completion_length: Option<usize>,
    pub request_mode: RequestMode,
    pub request_timeout_secs: f64,

    /// Used by `ablate`.
    pub ablations: Vec<String>,
    /// Used by `noise-sweep`.
    pub noise_sigmas: Vec<f64>,
    /// Run sweep cells concurrently.
    pub parallel_cells: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let search = SearchConfig::default();
        Self {
            dataset_path: PathBuf::new(),
            metadata_path: PathBuf::new(),
            output_dir: PathBuf::from("llmfe-out"),
            iterations: None,
            batch_size: search.batch_size,
            islands: search.islands,
            demonstrations: search.demonstrations,
            llm_temperature: search.llm_temperature,
            sample_budget: search.sample_budget,
            split_seed: 0,
            search_seed: 0,
            n_splits: 5,
            test_fraction: search.test_fraction,
            val_fraction: search.val_fraction,
            wall_time_secs: search.limits.wall_time.as_secs_f64(),
            memory_bytes: search.limits.memory,
            ablation: "none".into(),
            model: "gbt".into(),
            metric: String::new(),
            boltzmann_t0: search.boltzmann.t0,
            boltzmann_period: search.boltzmann.period,
            admission: AdmissionRule::default(),
            within_cluster: WithinClusterChoice::default(),
            instruction_variant: "random".into(),
            n_example_rows: search.n_example_rows,
            max_prompt_chars: None,
            interpreter: search.interpreter,
            parallel_eval: true,
            templates_dir: None,
            backend: BackendKind::ScriptedMock,
            model_name: "gpt-3.5-turbo".into(),
            endpoint: None,
            script_path: None,
            max_completion_length: None,
            request_mode: RequestMode::Batched,
            request_timeout_secs: 120.0,
            ablations: ["none", "no_domain_knowledge", "no_data_examples", "no_evolution"].map(String::from).to_vec(),
            noise_sigmas: vec![0.0, 0.01, 0.05, 0.1],
            parallel_cells: false,
        }
    }
}

fn resolve_paths(table: &mut toml::Table, base: &Path) {
    for key in PATH_KEYS {
        if let Some(toml::Value::String(s)) = table.get_mut(key) {
            let p = Path::new(s.as_str());
            if p.is_relative() {
                *s = base.join(p).to_string_lossy().into_owned();
            }
        }
    }
}

/// Reads `--key value` pairs; a flag followed by another flag (or nothing) is `true`.
pub fn parse_overrides(args: &[String]) -> Result<toml::Table, ConfigError> {
    let mut table = toml::Table::new();
    let mut i = 0;
    while i < args.len() {
        let key = args[i].strip_prefix("--").ok_or_else(|| ConfigError::BadOverride(args[i].clone()))?;
        let (key, inline) = match key.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (key, None),
        };
        let key = key.replace('-', "_");
        let raw = match inline {
            Some(v) => v,
            None if i + 1 < args.len() && !args[i + 1].starts_with("--") => {
                i += 1;
                args[i].clone()
            }
            None => "true".into(),
        };
        // typed when the text is a TOML literal, a plain string otherwise
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or(toml::Value::String(raw));
        table.insert(key, value);
        i += 1;
    }
    Ok(table)
}

impl RunConfig {
    /// Loads the file at `path` (if any) and applies `overrides` on top.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|source| ConfigError::Read { path: p.display().to_string(), source })?;
                let mut t: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
                resolve_paths(&mut t, p.parent().unwrap_or(Path::new(".")));
                t
            }
            None => toml::Table::new(),
        };
        let mut flags = parse_overrides(overrides)?;
        let cwd = std::env::current_dir().unwrap_or_default();
        resolve_paths(&mut flags, &cwd);
        table.extend(flags);
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.search_config()?;
        cfg.backend_config()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn ablation_flags(&self) -> Result<Ablation, ConfigError> {
        parse_ablation(&self.ablation)
    }

    pub fn search_config(&self) -> Result<SearchConfig, ConfigError> {
        let invalid = |key: &'static str, reason: String| ConfigError::Invalid { key, reason };
        let kind: ModelKind = self.model.parse().map_err(|e| invalid("model", e))?;
        let metric = match self.metric.as_str() {
            "" => None,
            "accuracy" => Some(Metric::Accuracy),
            "n_rmse" => Some(Metric::NRmse),
            other => return Err(invalid("metric", format!("unknown metric `{other}`"))),
        };
        let instruction_variant = match self.instruction_variant.as_str() {
            "random" | "" => None,
            "basic" => Some(InstructionVariant::Basic),
            "complex_operators" => Some(InstructionVariant::ComplexOperators),
            other => return Err(invalid("instruction_variant", format!("unknown variant `{other}`"))),
        };
        if !(self.wall_time_secs.is_finite() && self.wall_time_secs > 0.0) || self.memory_bytes == 0 {
            return Err(invalid("wall_time_secs", "limits must be strictly positive".into()));
        }
        if self.n_splits == 0 {
            return Err(invalid("n_splits", "must be at least 1".into()));
        }
        let cfg = SearchConfig {
            iterations: self.iterations,
            batch_size: self.batch_size,
            islands: self.islands,
            demonstrations: self.demonstrations,
            llm_temperature: self.llm_temperature,
            sample_budget: self.sample_budget,
            split_seed: self.split_seed,
            search_seed: self.search_seed,
            test_fraction: self.test_fraction,
            val_fraction: self.val_fraction,
            limits: ExecutionLimits::new(Duration::from_secs_f64(self.wall_time_secs), self.memory_bytes),
            ablation: self.ablation_flags()?,
            model: ModelSpec::new(kind),
            metric,
            boltzmann: BoltzmannParams { t0: self.boltzmann_t0, period: self.boltzmann_period },
            admission: self.admission,
            within_cluster: self.within_cluster,
            instruction_variant,
            n_example_rows: self.n_example_rows,
            max_prompt_chars: self.max_prompt_chars,
            interpreter: self.interpreter.clone(),
            parallel_eval: self.parallel_eval,
        };
        cfg.validate().map_err(|e| invalid("search", e.to_string()))?;
        Ok(cfg)
    }

    pub fn backend_config(&self) -> Result<BackendConfig, ConfigError> {
        let cfg = BackendConfig {
            kind: self.backend,
            model_name: self.model_name.clone(),
            temperature: self.llm_temperature,
            max_completion_length: self.max_completion_length,
            endpoint: self.endpoint.clone(),
            script_path: self.script_path.clone(),
            request_mode: self.request_mode,
            timeout_secs: self.request_timeout_secs,
        };
        cfg.validate().map_err(|e| ConfigError::Invalid { key: "backend", reason: e.to_string() })?;
        Ok(cfg)
    }
}

/// `none`, one ablation name, or several joined by `,` or `+`.
pub fn parse_ablation(text: &str) -> Result<Ablation, ConfigError> {
    let mut out = Ablation::default();
    for part in text.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
        let a = Ablation::parse(part)
            .ok_or_else(|| ConfigError::Invalid { key: "ablation", reason: format!("unknown ablation `{part}`") })?;
        out.no_domain_knowledge |= a.no_domain_knowledge;
        out.no_data_examples |= a.no_data_examples;
        out.no_evolution |= a.no_evolution;
    }
    Ok(out)
}
