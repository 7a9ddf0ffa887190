//! Chat-completion client over blocking HTTP.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, BackendError, BackendRequest, BackendResponse, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub model: String,
    pub temperature: f64,
    pub max_in_flight: usize,
    pub attempts: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            model: "gpt-4-0125-preview".into(),
            temperature: 0.0,
            max_in_flight: 4,
            attempts: 3,
            backoff_ms: 500,
            timeout_secs: 120,
        }
    }
}

impl HttpConfig {
    /// Defaults overridden by `COHORT_ENDPOINT`, `COHORT_MODEL` and
    /// `COHORT_TEMPERATURE` when set.
    pub fn from_env() -> Self {
        let mut c = Self::default();
        if let Ok(v) = std::env::var("COHORT_ENDPOINT") {
            c.endpoint = v;
        }
        if let Ok(v) = std::env::var("COHORT_MODEL") {
            c.model = v;
        }
        if let Some(t) = std::env::var("COHORT_TEMPERATURE").ok().and_then(|v| v.parse().ok()) {
            c.temperature = t;
        }
        c
    }
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    slots: Slots,
}

enum Attempt {
    Retry(String),
    Fatal(BackendError),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| BackendError::Config(format!("environment variable {} is not set", config.api_key_env)))?;
        Self::with_key(config, api_key)
    }

    pub fn with_key(config: HttpConfig, api_key: impl Into<String>) -> Result<Self, BackendError> {
        if config.attempts == 0 || config.max_in_flight == 0 {
            return Err(BackendError::Config("attempts and max_in_flight must be positive".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            slots: Slots {
                free: Mutex::new(config.max_in_flight),
                cv: Condvar::new(),
            },
            config,
            api_key: api_key.into(),
            client,
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<BackendResponse, Attempt> {
        let started = Instant::now();
        let resp = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.is_client_error() {
            return Err(Attempt::Fatal(BackendError::Rejected {
                status: status.as_u16(),
                body: text,
            }));
        }
        if !status.is_success() {
            return Err(Attempt::Retry(format!("status {status}: {text}")));
        }
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Attempt::Retry(format!("invalid JSON body: {e}")))?;
        let content = value["choices"][0]["message"]["content"]
            .as_str()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Attempt::Retry("response has no message content".into()))?;
        let usage = value.get("usage").and_then(|u| {
            Some(Usage {
                prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
                completion_tokens: u.get("completion_tokens")?.as_u64()?,
            })
        });
        Ok(BackendResponse {
            text: content.to_string(),
            usage,
            latency: Some(started.elapsed().as_secs_f64()),
        })
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.rendered_prompt},
            ],
        });
        let _slot = self.slots.acquire();
        let mut last = String::new();
        for n in 0..self.config.attempts {
            if n > 0 {
                std::thread::sleep(Duration::from_millis(self.config.backoff_ms << (n - 1)));
            }
            match self.attempt(&body) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    tracing::warn!(key = %request.key, attempt = n + 1, "backend request failed: {msg}");
                    last = msg;
                }
            }
        }
        Err(BackendError::Transport {
            attempts: self.config.attempts,
            message: last,
        })
    }

    fn label(&self) -> String {
        format!("http:{}", self.config.model)
    }
}
