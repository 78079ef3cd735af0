//! Chat-completions client.

use std::time::Duration;

use serde_json::{json, Value};
use ureq::Agent;

use super::{Backend, BackendConfig, BackendError, RequestMode};

pub const API_KEY_ENV: &str = "LLMFE_API_KEY";

/// A request that ran out of retries.
enum Failure {
    Transport(String),
    /// Error status or malformed response body.
    Service,
}

pub struct HttpChat {
    agent: Agent,
    endpoint: String,
    model: String,
    temperature: f64,
    max_tokens: Option<usize>,
    mode: RequestMode,
    api_key: Option<String>,
}

impl HttpChat {
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, BackendError> {
        let endpoint = cfg.endpoint.clone().ok_or_else(|| BackendError::Config("http_chat needs an endpoint".into()))?;
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint,
            model: cfg.model_name.clone(),
            temperature: cfg.temperature,
            max_tokens: cfg.max_completion_length,
            mode: cfg.request_mode,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        })
    }

    fn body(&self, prompt: &str, n: usize) -> Value {
        let mut body = json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
            "n": n,
        });
        if let Some(max) = self.max_tokens {
            body["max_tokens"] = json!(max);
        }
        body
    }

    fn post_once(&self, body: &Value) -> Result<Vec<String>, Failure> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::StatusCode(_) => Failure::Service,
            other => Failure::Transport(other.to_string()),
        })?;
        let value: Value = resp.into_body().read_json().map_err(|_| Failure::Service)?;
        let choices = value["choices"].as_array().ok_or(Failure::Service)?;
        Ok(choices
            .iter()
            .map(|c| c["message"]["content"].as_str().unwrap_or_default().to_string())
            .collect())
    }

    /// One attempt plus one retry.
    fn post(&self, prompt: &str, n: usize) -> Result<Vec<String>, Failure> {
        let body = self.body(prompt, n);
        self.post_once(&body).or_else(|_| self.post_once(&body))
    }
}

impl Backend for HttpChat {
    fn complete(&self, prompt: &str, b: usize) -> Result<Vec<String>, BackendError> {
        let results: Vec<Result<Vec<String>, Failure>> = match self.mode {
            RequestMode::Batched => vec![self.post(prompt, b)],
            RequestMode::Separate => std::thread::scope(|s| {
                let handles: Vec<_> = (0..b).map(|_| s.spawn(|| self.post(prompt, 1))).collect();
                handles.into_iter().map(|h| h.join().expect("request thread panicked")).collect()
            }),
        };
        if results.iter().all(|r| matches!(r, Err(Failure::Transport(_)))) {
            let reason = match &results[0] {
                Err(Failure::Transport(e)) => e.clone(),
                _ => unreachable!(),
            };
            return Err(BackendError::BackendUnreachable(reason));
        }
        let mut out = Vec::with_capacity(b);
        for r in results {
            match r {
                Ok(mut texts) => {
                    let want = if self.mode == RequestMode::Batched { b } else { 1 };
                    texts.resize(want, String::new());
                    out.extend(texts);
                }
                Err(_) => out.extend(std::iter::repeat_n(String::new(), if self.mode == RequestMode::Batched { b } else { 1 })),
            }
        }
        Ok(out)
    }
}
