//! Blocking JSON-over-HTTP with bounded retries, shared by the embedding and
//! chat clients.

use std::time::Duration;

use serde_json::Value;

use crate::error::{Result, StagError};

#[derive(Clone, Debug)]
pub struct HttpConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retries: u32,
    pub backoff: Duration,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpConfig {
            endpoint: endpoint.into(),
            api_key: None,
            timeout: Duration::from_secs(60),
            retries: 3,
            backoff: Duration::from_millis(200),
        }
    }
}

pub struct JsonClient {
    agent: ureq::Agent,
    config: HttpConfig,
}

enum Attempt {
    Retry(String),
    Fatal(StagError),
}

impl JsonClient {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        JsonClient { agent, config }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn attempt(&self, body: &Value) -> std::result::Result<Value, Attempt> {
        let mut req = self
            .agent
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body.to_string()).map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}: {text}")));
        }
        if status >= 400 {
            return Err(Attempt::Fatal(StagError::Network(format!("HTTP {status}: {text}"))));
        }
        serde_json::from_str(&text).map_err(|e| Attempt::Fatal(StagError::MalformedResponse(format!("{e}: {text}"))))
    }

    /// POSTs `body`, retrying transport failures, 429 and 5xx responses up to
    /// the configured limit.
    pub fn post(&self, body: &Value) -> Result<Value> {
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff * 2u32.pow(attempt - 1));
            }
            match self.attempt(body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("request to {} failed: {msg}", self.config.endpoint);
                    last = msg;
                }
            }
        }
        Err(StagError::Network(format!(
            "{} after {} attempts: {last}",
            self.config.endpoint,
            self.config.retries + 1
        )))
    }
}
