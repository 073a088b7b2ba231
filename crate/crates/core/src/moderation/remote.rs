//! Rewrites through a completions-style HTTP API.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use reqwest::StatusCode;

use super::{Rewriter, RewriterConfig};
use crate::error::{Error, Result};

/// Environment variable holding the bearer token for the remote backend.
pub const API_KEY_ENV: &str = "REWRITER_API_KEY";

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cond: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(permits: usize) -> Self {
        Self {
            free: Mutex::new(permits.max(1)),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("gate poisoned");
        while *free == 0 {
            free = self.cond.wait(free).expect("gate poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate poisoned") += 1;
        self.0.cond.notify_one();
    }
}

#[derive(Debug)]
pub struct RemoteRewriter {
    config: RewriterConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    gate: Gate,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fail(Error),
}

impl RemoteRewriter {
    pub fn new(config: RewriterConfig, api_key: impl Into<String>) -> Result<Self> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            gate: Gate::new(config.max_concurrent),
            config,
            api_key: api_key.into(),
            client,
        })
    }

    /// Reads the credential from [`API_KEY_ENV`].
    pub fn from_env(config: RewriterConfig) -> Result<Self> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| {
                Error::Config(format!("remote rewriter needs ${API_KEY_ENV} to be set"))
            })?;
        Self::new(config, key)
    }

    /// The JSON body sent for `text`.
    pub fn request_body(&self, text: &str) -> serde_json::Value {
        serde_json::json!({
            "model": self.config.model,
            "prompt": format!("{}{}", self.config.prompt_template, text),
            "max_tokens": self.config.max_tokens,
            "temperature": self.config.temperature,
        })
    }

    fn attempt(&self, body: &serde_json::Value) -> Attempt {
        let response = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(&self.api_key)
            .json(body)
            .send();
        let response = match response {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(format!("request failed: {e}")),
        };
        let status = response.status();
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Attempt::Fail(Error::BackendAuth(format!("status {status}")));
        }
        if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
            return Attempt::Retry(format!("status {status}"));
        }
        let text = response.text();
        if !status.is_success() {
            let detail = text.unwrap_or_default();
            return Attempt::Fail(Error::Backend {
                attempts: 1,
                message: format!("status {status}: {detail}"),
            });
        }
        let parsed = text
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).map_err(|e| e.to_string()));
        let completion = parsed.ok().and_then(|v| {
            v.pointer("/choices/0/text")
                .and_then(|t| t.as_str())
                .map(|t| t.trim().to_string())
        });
        match completion {
            Some(c) => Attempt::Done(c),
            None => Attempt::Retry("response has no choices[0].text".into()),
        }
    }
}

impl Rewriter for RemoteRewriter {
    fn id(&self) -> String {
        format!("remote_llm:{}", self.config.model)
    }

    /// Sends `prompt_template + text`; retries transport errors, 429 and 5xx
    /// with exponential backoff, but never authentication failures.
    fn rewrite(&self, text: &str) -> Result<String> {
        let _permit = self.gate.acquire();
        let body = self.request_body(text);
        let mut attempts = 0;
        loop {
            attempts += 1;
            let message = match self.attempt(&body) {
                Attempt::Done(c) => return Ok(c),
                Attempt::Fail(Error::Backend { message, .. }) => {
                    return Err(Error::Backend { attempts, message })
                }
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(message) => message,
            };
            if attempts > self.config.retries {
                return Err(Error::Backend { attempts, message });
            }
            let delay = self.config.backoff_ms.saturating_mul(1 << (attempts - 1).min(16));
            tracing::warn!(attempts, %message, delay_ms = delay, "rewriter call failed; retrying");
            std::thread::sleep(Duration::from_millis(delay));
        }
    }
}
