//! Blocking JSON POST with retries, shared by the chat and embedding clients.

use serde::{Deserialize, Serialize};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Delay before the first retry; doubled on each further attempt.
    pub backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_ms: 500,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HttpError {
    /// Connection failures, timeouts, 429 and 5xx, after all retries.
    #[error("endpoint unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },
    /// Every attempt, including the last, ran out of time.
    #[error("endpoint timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    /// A 4xx other than 429; retrying would not help.
    #[error("endpoint returned HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("unexpected response: {0}")]
    BadResponse(String),
}

enum Attempt {
    Retry { message: String, timeout: bool },
    Fail(HttpError),
}

pub(crate) struct JsonClient {
    agent: ureq::Agent,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl JsonClient {
    pub(crate) fn new(api_key: Option<String>, retry: RetryPolicy) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(retry.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            api_key,
            retry,
        }
    }

    fn attempt(&self, url: &str, body: &serde_json::Value) -> Result<serde_json::Value, Attempt> {
        let mut req = self.agent.post(url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Attempt::Retry {
            timeout: matches!(e, ureq::Error::Timeout(_)),
            message: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry {
                message: format!("HTTP {status}"),
                timeout: false,
            });
        }
        if !(200..300).contains(&status) {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Attempt::Fail(HttpError::Rejected { status, body: text }));
        }
        resp.body_mut()
            .read_json()
            .map_err(|e| Attempt::Fail(HttpError::BadResponse(e.to_string())))
    }

    pub(crate) fn post(
        &self,
        url: &str,
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, HttpError> {
        let mut last = String::new();
        let mut all_timeouts = true;
        let attempts = self.retry.max_retries + 1;
        for n in 0..attempts {
            if n > 0 {
                let delay = self.retry.backoff_ms.saturating_mul(1 << (n - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(url, body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry { message, timeout }) => {
                    log::warn!(
                        "POST {url} failed (attempt {}/{attempts}): {message}",
                        n + 1
                    );
                    all_timeouts &= timeout;
                    last = message;
                }
            }
        }
        if all_timeouts {
            Err(HttpError::Timeout { attempts })
        } else {
            Err(HttpError::Unavailable { attempts, last })
        }
    }
}

/// `base` with `path` appended, avoiding a doubled slash.
pub(crate) fn join_url(base: &str, path: &str) -> String {
    format!(
        "{}/{}",
        base.trim_end_matches('/'),
        path.trim_start_matches('/')
    )
}
