//! Chat-completion backends: the trait the compromise engine talks to, a
//! retrying/auditing wrapper, a request counter with an optional budget, and
//! a client for a hosted messages API.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            temperature: 1.0,
            seed: 0,
            max_tokens: 2048,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// A plain text-completion endpoint.
pub trait LlmBackend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &str, sampling: &SamplingConfig) -> Result<String>;
}

impl<B: LlmBackend + ?Sized> LlmBackend for &B {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn complete(&self, prompt: &str, sampling: &SamplingConfig) -> Result<String> {
        (**self).complete(prompt, sampling)
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for Box<B> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn complete(&self, prompt: &str, sampling: &SamplingConfig) -> Result<String> {
        (**self).complete(prompt, sampling)
    }
}

/// Counts requests and refuses new ones once `budget` is spent.
pub struct Counting<B> {
    inner: B,
    count: AtomicUsize,
    budget: Option<usize>,
}

impl<B: LlmBackend> Counting<B> {
    pub fn new(inner: B, budget: Option<usize>) -> Self {
        Counting {
            inner,
            count: AtomicUsize::new(0),
            budget,
        }
    }

    pub fn requests(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: LlmBackend> LlmBackend for Counting<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, prompt: &str, sampling: &SamplingConfig) -> Result<String> {
        let n = self.count.fetch_add(1, Ordering::SeqCst);
        if let Some(budget) = self.budget {
            if n >= budget {
                return Err(Error::Backend {
                    backend: self.name().to_string(),
                    message: format!("request budget of {budget} exhausted"),
                });
            }
        }
        self.inner.complete(prompt, sampling)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: usize,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

#[derive(Serialize)]
struct AuditEntry<'a> {
    backend: &'a str,
    attempt: usize,
    sampling: &'a SamplingConfig,
    prompt: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    response: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Retries failed requests with exponential backoff and optionally records
/// every attempt (prompt, sampling, response or error) as one JSON line.
pub struct Retrying<B> {
    inner: B,
    policy: RetryPolicy,
    audit: Option<Mutex<File>>,
}

impl<B: LlmBackend> Retrying<B> {
    pub fn new(inner: B, policy: RetryPolicy) -> Self {
        Retrying {
            inner,
            policy,
            audit: None,
        }
    }

    pub fn with_audit_log(mut self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        self.audit = Some(Mutex::new(file));
        Ok(self)
    }

    fn record(&self, entry: &AuditEntry<'_>) {
        if let Some(file) = &self.audit {
            let mut line = serde_json::to_vec(entry).expect("audit entry serializes");
            line.push(b'\n');
            let mut f = file.lock().expect("audit log poisoned");
            if let Err(e) = f.write_all(&line) {
                log::error!("failed to write audit log: {e}");
            }
        }
    }
}

impl<B: LlmBackend> LlmBackend for Retrying<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, prompt: &str, sampling: &SamplingConfig) -> Result<String> {
        let mut backoff = self.policy.initial_backoff;
        let mut attempt = 0;
        loop {
            match self.inner.complete(prompt, sampling) {
                Ok(text) => {
                    self.record(&AuditEntry {
                        backend: self.name(),
                        attempt,
                        sampling,
                        prompt,
                        response: Some(&text),
                        error: None,
                    });
                    return Ok(text);
                }
                Err(e) => {
                    self.record(&AuditEntry {
                        backend: self.name(),
                        attempt,
                        sampling,
                        prompt,
                        response: None,
                        error: Some(e.to_string()),
                    });
                    if attempt >= self.policy.max_retries {
                        return Err(e);
                    }
                    log::warn!(
                        "backend `{}` attempt {} failed ({e}); retrying in {:?}",
                        self.name(),
                        attempt + 1,
                        backoff
                    );
                    std::thread::sleep(backoff);
                    backoff *= 2;
                    attempt += 1;
                }
            }
        }
    }
}

/// Environment variable holding the API key for [`MessagesApiBackend`].
pub const API_KEY_ENV: &str = "COMPROMISE_API_KEY";
pub const DEFAULT_API_BASE: &str = "https://api.anthropic.com";
pub const DEFAULT_REMOTE_LLM: &str = "claude-3-opus-20240229";

/// Client for a hosted `/v1/messages` chat API.
pub struct MessagesApiBackend {
    base_url: String,
    model: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct MessagesRequest<'a> {
    model: &'a str,
    max_tokens: usize,
    temperature: f64,
    messages: [Message<'a>; 1],
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct MessagesResponse {
    content: Vec<ContentBlock>,
}

#[derive(Deserialize)]
struct ContentBlock {
    #[serde(default)]
    text: Option<String>,
}

impl MessagesApiBackend {
    pub fn from_env(base_url: Option<&str>, model: Option<&str>) -> Result<Self> {
        let api_key = std::env::var(API_KEY_ENV).map_err(|_| Error::Backend {
            backend: "messages-api".into(),
            message: format!("environment variable {API_KEY_ENV} is not set"),
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| Error::Backend {
                backend: "messages-api".into(),
                message: e.to_string(),
            })?;
        Ok(MessagesApiBackend {
            base_url: base_url
                .unwrap_or(DEFAULT_API_BASE)
                .trim_end_matches('/')
                .to_string(),
            model: model.unwrap_or(DEFAULT_REMOTE_LLM).to_string(),
            api_key,
            client,
        })
    }

    fn request_body<'a>(
        &'a self,
        prompt: &'a str,
        sampling: &SamplingConfig,
    ) -> MessagesRequest<'a> {
        MessagesRequest {
            model: &self.model,
            max_tokens: sampling.max_tokens,
            temperature: sampling.temperature,
            messages: [Message {
                role: "user",
                content: prompt,
            }],
        }
    }
}

impl LlmBackend for MessagesApiBackend {
    fn name(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str, sampling: &SamplingConfig) -> Result<String> {
        sampling.validate()?;
        let err = |message: String| Error::Backend {
            backend: self.model.clone(),
            message,
        };
        let resp = self
            .client
            .post(format!("{}/v1/messages", self.base_url))
            .header("x-api-key", &self.api_key)
            .header("anthropic-version", "2023-06-01")
            .json(&self.request_body(prompt, sampling))
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| err(e.to_string()))?;
        let body: MessagesResponse = resp.json().map_err(|e| err(e.to_string()))?;
        let text: String = body.content.into_iter().filter_map(|b| b.text).collect();
        if text.is_empty() {
            return Err(err("response contained no text".into()));
        }
        Ok(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    struct Flaky {
        failures: AtomicUsize,
    }

    impl LlmBackend for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn complete(&self, prompt: &str, _: &SamplingConfig) -> Result<String> {
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                return Err(Error::Backend {
                    backend: "flaky".into(),
                    message: "boom".into(),
                });
            }
            Ok(format!("echo: {prompt}"))
        }
    }

    fn fast() -> RetryPolicy {
        RetryPolicy {
            max_retries: 3,
            initial_backoff: Duration::ZERO,
        }
    }

    #[test]
    fn retries_until_success_and_audits_every_attempt() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("audit.jsonl");
        let b = Retrying::new(
            Flaky {
                failures: AtomicUsize::new(2),
            },
            fast(),
        )
        .with_audit_log(&log)
        .unwrap();
        assert_eq!(
            b.complete("hi", &SamplingConfig::default()).unwrap(),
            "echo: hi"
        );
        let lines: Vec<serde_json::Value> = std::fs::read_to_string(&log)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0]["error"].is_string());
        assert_eq!(lines[2]["response"], "echo: hi");
    }

    #[test]
    fn gives_up_after_retry_limit() {
        let b = Retrying::new(
            Flaky {
                failures: AtomicUsize::new(4),
            },
            fast(),
        );
        assert!(b.complete("hi", &SamplingConfig::default()).is_err());
    }

    #[test]
    fn budget_is_enforced() {
        let b = Counting::new(
            Flaky {
                failures: AtomicUsize::new(0),
            },
            Some(1),
        );
        assert!(b.complete("a", &SamplingConfig::default()).is_ok());
        assert!(b.complete("b", &SamplingConfig::default()).is_err());
        assert_eq!(b.requests(), 2);
    }

    #[test]
    fn messages_request_shape() {
        let b = MessagesApiBackend {
            base_url: DEFAULT_API_BASE.into(),
            model: "m".into(),
            api_key: "k".into(),
            client: reqwest::blocking::Client::new(),
        };
        let sampling = SamplingConfig {
            temperature: 0.7,
            seed: 1,
            max_tokens: 100,
        };
        let body = serde_json::to_value(b.request_body("hello", &sampling)).unwrap();
        assert_eq!(
            body,
            serde_json::json!({
                "model": "m", "max_tokens": 100, "temperature": 0.7,
                "messages": [{"role": "user", "content": "hello"}]
            })
        );
    }

    #[test]
    fn negative_temperature_rejected() {
        let s = SamplingConfig {
            temperature: -0.1,
            ..Default::default()
        };
        assert!(s.validate().is_err());
    }
}
