//! Program proposers: a chat-completions client and a scripted mock, behind
//! a budget-counting [`Sampler`].

mod http;
mod mock;
mod parse;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpChat, API_KEY_ENV};
pub use mock::{FnBackend, ScriptedMock};
pub use parse::{parse_program, ParseFailure};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("sampling {requested} more completions would exceed the budget ({used} of {budget} used)")]
    BudgetExceeded { requested: usize, used: usize, budget: usize },
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("mock script has no response group for call {call}")]
    ScriptExhausted { call: usize },
    #[error("cannot load mock script {path}: {reason}")]
    Script { path: String, reason: String },
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("b must be at least 1")]
    ZeroSamples,
}

/// One raw model output. An empty `raw_text` marks a failed request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub raw_text: String,
    pub request_id: String,
}

/// Anything that can turn a prompt into `b` completions.
pub trait Backend: Send + Sync {
    /// Returns exactly `b` completions; ids are assigned by the caller.
    fn complete(&self, prompt: &str, b: usize) -> Result<Vec<String>, BackendError>;

    /// Called once at the start of every run.
    fn begin_run(&self) {}
}

/// Counts completions against a budget and tags them with request ids.
pub struct Sampler {
    backend: Arc<dyn Backend>,
    budget: Option<usize>,
    used: AtomicUsize,
}

impl Sampler {
    pub fn new(backend: Arc<dyn Backend>, budget: Option<usize>) -> Self {
        Self { backend, budget, used: AtomicUsize::new(0) }
    }

    pub fn used(&self) -> usize {
        self.used.load(Ordering::SeqCst)
    }

    pub fn budget(&self) -> Option<usize> {
        self.budget
    }

    /// Resets the counter and the backend for a fresh run.
    pub fn begin_run(&self) {
        self.used.store(0, Ordering::SeqCst);
        self.backend.begin_run();
    }

    fn reserve(&self, b: usize) -> Result<usize, BackendError> {
        let mut used = self.used.load(Ordering::SeqCst);
        loop {
            if let Some(budget) = self.budget {
                if used + b > budget {
                    return Err(BackendError::BudgetExceeded { requested: b, used, budget });
                }
            }
            match self.used.compare_exchange(used, used + b, Ordering::SeqCst, Ordering::SeqCst) {
                Ok(_) => return Ok(used),
                Err(now) => used = now,
            }
        }
    }

    /// Samples `b` completions. The budget is charged before any request goes out.
    pub fn sample(&self, prompt: &str, b: usize) -> Result<Vec<Completion>, BackendError> {
        if b == 0 {
            return Err(BackendError::ZeroSamples);
        }
        let first = self.reserve(b)?;
        let mut texts = self.backend.complete(prompt, b)?;
        texts.resize(b, String::new());
        Ok(texts
            .into_iter()
            .enumerate()
            .map(|(i, raw_text)| Completion { raw_text, request_id: format!("req-{:05}", first + i) })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpChat,
    ScriptedMock,
}

/// How the `b` samples of one call are requested over HTTP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestMode {
    /// One request with `n = b`.
    #[default]
    Batched,
    /// `b` concurrent requests with `n = 1`.
    Separate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model_name: String,
    pub temperature: f64,
    pub max_completion_length: Option<usize>,
    pub endpoint: Option<String>,
    pub script_path: Option<PathBuf>,
    pub request_mode: RequestMode,
    pub timeout_secs: f64,
}

impl BackendConfig {
    pub fn mock(script_path: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::ScriptedMock,
            model_name: "scripted-mock".into(),
            temperature: 0.8,
            max_completion_length: None,
            endpoint: None,
            script_path: Some(script_path.into()),
            request_mode: RequestMode::Batched,
            timeout_secs: 120.0,
        }
    }

    pub fn http(endpoint: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::HttpChat,
            model_name: model_name.into(),
            temperature: 0.8,
            max_completion_length: None,
            endpoint: Some(endpoint.into()),
            script_path: None,
            request_mode: RequestMode::Batched,
            timeout_secs: 120.0,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(BackendError::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(BackendError::Config("timeout must be positive".into()));
        }
        match self.kind {
            BackendKind::HttpChat => {
                if self.endpoint.is_none() {
                    return Err(BackendError::Config("http_chat needs an endpoint".into()));
                }
                if self.script_path.is_some() {
                    return Err(BackendError::Config("script_path is only valid for scripted_mock".into()));
                }
            }
            BackendKind::ScriptedMock => {
                if self.script_path.is_none() {
                    return Err(BackendError::Config("scripted_mock needs a script_path".into()));
                }
                if self.endpoint.is_some() {
                    return Err(BackendError::Config("endpoint is only valid for http_chat".into()));
                }
            }
        }
        Ok(())
    }

    /// Builds the configured backend.
    pub fn build(&self) -> Result<Arc<dyn Backend>, BackendError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::HttpChat => Arc::new(HttpChat::from_config(self)?),
            BackendKind::ScriptedMock => {
                Arc::new(ScriptedMock::load(self.script_path.as_ref().expect("validated")).map_err(|e| match e {
                    BackendError::Script { .. } => e,
                    other => BackendError::Config(other.to_string()),
                })?)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock(groups: &[&[&str]]) -> Arc<dyn Backend> {
        Arc::new(ScriptedMock::new(groups.iter().map(|g| g.iter().map(|s| s.to_string()).collect()).collect()))
    }

    #[test]
    fn mock_returns_group_in_order() {
        let s = Sampler::new(mock(&[&["a", "b", "c"]]), None);
        let out = s.sample("p", 3).unwrap();
        let texts: Vec<_> = out.iter().map(|c| c.raw_text.as_str()).collect();
        assert_eq!(texts, ["a", "b", "c"]);
        assert_eq!(out[2].request_id, "req-00002");
        assert_eq!(s.used(), 3);
    }

    #[test]
    fn budget_checked_before_request() {
        let s = Sampler::new(mock(&[&["x"; 18], &["y"; 3]]), Some(20));
        s.sample("p", 18).unwrap();
        let err = s.sample("p", 3).unwrap_err();
        assert!(matches!(err, BackendError::BudgetExceeded { requested: 3, used: 18, budget: 20 }));
        // the rejected call consumed neither budget nor script
        assert_eq!(s.used(), 18);
        assert_eq!(s.sample("p", 2).unwrap()[0].raw_text, "y");
    }

    #[test]
    fn begin_run_rewinds() {
        let s = Sampler::new(mock(&[&["a"], &["b"]]), Some(2));
        let first: Vec<_> = (0..2).map(|_| s.sample("p", 1).unwrap()).collect();
        assert!(matches!(s.sample("p", 1), Err(BackendError::BudgetExceeded { .. })));
        s.begin_run();
        let second: Vec<_> = (0..2).map(|_| s.sample("p", 1).unwrap()).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn short_groups_are_padded_and_exhaustion_reported() {
        let s = Sampler::new(mock(&[&["only"]]), None);
        let out = s.sample("p", 3).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[1].raw_text, "");
        assert!(matches!(s.sample("p", 1), Err(BackendError::ScriptExhausted { call: 1 })));
        assert!(matches!(s.sample("p", 0), Err(BackendError::ZeroSamples)));
    }

    #[test]
    fn concurrent_callers_never_overspend() {
        let groups: Vec<Vec<String>> = (0..100).map(|i| vec![format!("{i}")]).collect();
        let s = Sampler::new(Arc::new(ScriptedMock::new(groups)), Some(37));
        let ok = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..8 {
                scope.spawn(|| {
                    for _ in 0..10 {
                        if s.sample("p", 1).is_ok() {
                            ok.fetch_add(1, Ordering::SeqCst);
                        }
                    }
                });
            }
        });
        assert_eq!(ok.load(Ordering::SeqCst), 37);
        assert_eq!(s.used(), 37);
    }

    #[test]
    fn config_requires_kind_fields() {
        assert!(BackendConfig::mock("s.json").validate().is_ok());
        assert!(BackendConfig::http("http://localhost:1", "m").validate().is_ok());
        let mut c = BackendConfig::mock("s.json");
        c.endpoint = Some("http://x".into());
        assert!(c.validate().is_err());
        let mut c = BackendConfig::http("http://x", "m");
        c.endpoint = None;
        assert!(c.validate().is_err());
        let mut c = BackendConfig::mock("s.json");
        c.temperature = -0.1;
        assert!(c.validate().is_err());
    }
}
