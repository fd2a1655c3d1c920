//! JSON-over-HTTP POST with exponential backoff, shared by the chat and
//! embedding clients.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): base · 2^(attempt−1), capped.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt.saturating_sub(1)).min(20);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

fn retryable(status: u16) -> bool {
    status == 408 || status == 429 || (500..600).contains(&status)
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    client: reqwest::blocking::Client,
    pub url: String,
    api_key: Option<String>,
    pub retry: RetryPolicy,
}

impl JsonClient {
    pub fn new(url: impl Into<String>, api_key: Option<String>, retry: RetryPolicy, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(JsonClient {
            client,
            url: url.into(),
            api_key,
            retry,
        })
    }

    /// POSTs `body`; retries on transport errors, 408, 429 and 5xx.
    pub fn post(&self, body: &Value) -> Result<Value> {
        let mut last_status = None;
        let mut last_message = String::new();
        let attempts = self.retry.max_retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay(attempt));
            }
            let mut req = self.client.post(&self.url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    if resp.status().is_success() {
                        return resp.json::<Value>().map_err(|e| Error::Endpoint {
                            attempts: attempt + 1,
                            status: Some(status),
                            message: format!("invalid JSON body: {e}"),
                        });
                    }
                    last_status = Some(status);
                    last_message = resp.text().unwrap_or_default();
                    if !retryable(status) {
                        return Err(Error::Endpoint {
                            attempts: attempt + 1,
                            status: last_status,
                            message: last_message,
                        });
                    }
                    log::warn!("{} returned {status}; attempt {}/{attempts}", self.url, attempt + 1);
                }
                Err(e) => {
                    last_message = e.to_string();
                    log::warn!("{} unreachable ({e}); attempt {}/{attempts}", self.url, attempt + 1);
                }
            }
        }
        Err(Error::Endpoint {
            attempts,
            status: last_status,
            message: last_message,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_retries: 10,
            base_delay_ms: 100,
            max_delay_ms: 1000,
        };
        assert_eq!(p.delay(1), Duration::from_millis(100));
        assert_eq!(p.delay(2), Duration::from_millis(200));
        assert_eq!(p.delay(4), Duration::from_millis(800));
        assert_eq!(p.delay(5), Duration::from_millis(1000));
    }
}
