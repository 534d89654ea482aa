//! Minimal JSON-over-HTTP plumbing shared by every remote backend.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub url: String,
    /// Environment variable holding a bearer token, if the endpoint needs one.
    pub auth_env: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
    pub max_in_flight: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            auth_env: None,
            timeout_secs: 60,
            retries: 2,
            max_in_flight: 4,
        }
    }
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            ..Self::default()
        }
    }
}

#[derive(Debug)]
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct HttpClient {
    config: EndpointConfig,
    client: reqwest::blocking::Client,
    gate: Arc<Semaphore>,
}

impl HttpClient {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        if config.url.is_empty() {
            return Err(Error::Config("endpoint url is empty".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let gate = Arc::new(Semaphore {
            permits: Mutex::new(config.max_in_flight.max(1)),
            cv: Condvar::new(),
        });
        Ok(Self {
            config,
            client,
            gate,
        })
    }

    pub fn url(&self) -> &str {
        &self.config.url
    }

    /// POST `body` and decode the JSON reply, retrying transport failures and
    /// 5xx responses. Requests must be idempotent.
    pub fn post_json<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R> {
        let _permit = self.gate.acquire();
        let token = match &self.config.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::Config(format!("auth token variable {var} is not set"))
            })?),
            None => None,
        };
        let mut last_err = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(50 * u64::from(attempt)));
            }
            let mut req = self.client.post(&self.config.url).json(body);
            if let Some(t) = &token {
                req = req.bearer_auth(t);
            }
            match req.send() {
                Ok(resp) if resp.status().is_server_error() => {
                    last_err = format!("{} returned {}", self.config.url, resp.status());
                }
                Ok(resp) if !resp.status().is_success() => {
                    return Err(Error::Transport(format!(
                        "{} returned {}",
                        self.config.url,
                        resp.status()
                    )));
                }
                Ok(resp) => {
                    let text = resp.text().map_err(|e| Error::Transport(e.to_string()))?;
                    return serde_json::from_str(&text).map_err(|e| {
                        Error::Transport(format!("malformed reply from {}: {e}", self.config.url))
                    });
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(Error::Transport(last_err))
    }
}
