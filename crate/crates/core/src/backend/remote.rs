use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tracing::warn;

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, Usage};

pub const API_KEY_ENV: &str = "TOR_API_KEY";

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub backoff_max: Duration,
    /// Seeds the backoff jitter.
    pub seed: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            base_url: "https://api.deepseek.com/v1".into(),
            model: "deepseek-chat".into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            backoff_max: Duration::from_secs(20),
            seed: 0,
        }
    }
}

pub struct RemoteBackend {
    client: reqwest::blocking::Client,
    config: RemoteConfig,
    jitter: Mutex<ChaCha8Rng>,
    attempts: AtomicU64,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(RemoteBackend {
            client,
            jitter: Mutex::new(ChaCha8Rng::seed_from_u64(config.seed)),
            config,
            attempts: AtomicU64::new(0),
        })
    }

    /// HTTP attempts made so far, retries included.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn backoff(&self, retry: u32) -> Duration {
        let exp = self.config.backoff_base.saturating_mul(2u32.saturating_pow(retry));
        let capped = exp.min(self.config.backoff_max);
        let factor = 0.5 + 0.5 * self.jitter.lock().expect("jitter lock").random::<f64>();
        capped.mul_f64(factor)
    }

    fn attempt(&self, body: &Value) -> Result<ChatResponse, BackendError> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        let started = Instant::now();
        let mut builder = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        if !status.is_success() {
            return Err(BackendError::Http { status: status.as_u16(), body: text });
        }
        parse_completion(&text, started.elapsed())
    }
}

fn parse_completion(text: &str, elapsed: Duration) -> Result<ChatResponse, BackendError> {
    let value: Value = serde_json::from_str(text).map_err(|e| BackendError::Protocol(e.to_string()))?;
    let content = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Protocol("missing choices[0].message.content".into()))?;
    let usage = Usage {
        prompt_tokens: value.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion_tokens: value.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    };
    Ok(ChatResponse { content: content.to_string(), usage, latency_ms: elapsed.as_millis() as u64 })
}

impl ChatBackend for RemoteBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let body = json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut retry = 0;
        loop {
            match self.attempt(&body) {
                Ok(response) => return Ok(response),
                Err(err) if err.is_transient() => {
                    if retry >= self.config.max_retries {
                        return Err(BackendError::Exhausted { attempts: retry + 1, last: err.to_string() });
                    }
                    let delay = self.backoff(retry);
                    warn!(tag = %request.tag, %err, ?delay, "transient backend failure, retrying");
                    thread::sleep(delay);
                    retry += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }
}
