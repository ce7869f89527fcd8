//! Chat endpoints: the transport trait, an OpenAI-compatible HTTP client and
//! a shared rate limiter.

use std::fmt;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// A request that produced no reply text.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct TransportError {
    pub message: String,
}

impl TransportError {
    pub fn new(message: impl Into<String>) -> Self {
        TransportError {
            message: message.into(),
        }
    }
}

/// Anything that answers a chat transcript with one completion.
pub trait ChatEndpoint: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, TransportError>;
}

impl<T: ChatEndpoint + ?Sized> ChatEndpoint for &T {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, TransportError> {
        (**self).complete(messages)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmEndpointConfig {
    pub provider: String,
    pub model: String,
    /// Base URL of an OpenAI-compatible API; `/chat/completions` is appended.
    pub base_url: String,
    pub temperature: f64,
    pub top_p: f64,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Requests per second across all runs; `None` for unlimited.
    pub rate_limit: Option<f64>,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
}

impl Default for LlmEndpointConfig {
    fn default() -> Self {
        LlmEndpointConfig {
            provider: "openai".into(),
            model: "gpt-4o-mini".into(),
            base_url: "https://api.openai.com/v1".into(),
            temperature: 1.0,
            top_p: 1.0,
            timeout_secs: 60,
            max_retries: 5,
            rate_limit: None,
            api_key_env: "OPENAI_API_KEY".into(),
        }
    }
}

impl LlmEndpointConfig {
    pub fn validate(&self) -> reversal_core::Result<()> {
        let bad = |m: String| Err(reversal_core::Error::InvalidConfig(m));
        if self.temperature.is_nan() || self.top_p.is_nan() || self.temperature < 0.0 || self.top_p < 0.0 {
            return bad(format!("temperature and top_p must be >= 0 (got {}, {})", self.temperature, self.top_p));
        }
        if let Some(r) = self.rate_limit {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("rate limit must be positive (got {r})"));
            }
        }
        Ok(())
    }
}

/// Spaces requests at least `1 / rate` seconds apart across threads.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(per_second: f64) -> Self {
        RateLimiter {
            interval: Duration::from_secs_f64(1.0 / per_second),
            next: Mutex::new(None),
        }
    }

    /// Blocks until the caller may send.
    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

/// Blocking client for `POST {base_url}/chat/completions`.
pub struct OpenAiCompatible {
    cfg: LlmEndpointConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
    limiter: Option<RateLimiter>,
}

impl fmt::Debug for OpenAiCompatible {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OpenAiCompatible")
            .field("cfg", &self.cfg)
            .field("api_key", &self.api_key.as_ref().map(|_| "<set>"))
            .finish()
    }
}

#[derive(Serialize)]
struct Request<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    top_p: f64,
}

#[derive(Deserialize)]
struct Response {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

impl OpenAiCompatible {
    /// Reads the API key from `cfg.api_key_env`; a missing variable means no
    /// `Authorization` header (useful for local servers).
    pub fn new(cfg: LlmEndpointConfig) -> reversal_core::Result<Self> {
        cfg.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| reversal_core::Error::InvalidConfig(format!("http client: {e}")))?;
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        let limiter = cfg.rate_limit.map(RateLimiter::new);
        Ok(OpenAiCompatible {
            cfg,
            client,
            api_key,
            limiter,
        })
    }

    pub fn config(&self) -> &LlmEndpointConfig {
        &self.cfg
    }
}

impl ChatEndpoint for OpenAiCompatible {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, TransportError> {
        if let Some(l) = &self.limiter {
            l.acquire();
        }
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let body = Request {
            model: &self.cfg.model,
            messages,
            temperature: self.cfg.temperature,
            top_p: self.cfg.top_p,
        };
        let mut req = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| TransportError::new(format!("request failed: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(TransportError::new(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())));
        }
        let parsed: Response = resp.json().map_err(|e| TransportError::new(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| TransportError::new("response has no message content"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_limiter_spaces_requests() {
        let l = RateLimiter::new(100.0);
        let t = Instant::now();
        for _ in 0..5 {
            l.acquire();
        }
        assert!(t.elapsed() >= Duration::from_millis(39));
    }

    #[test]
    fn config_validation() {
        assert!(LlmEndpointConfig::default().validate().is_ok());
        let bad = LlmEndpointConfig {
            temperature: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = LlmEndpointConfig {
            rate_limit: Some(0.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn message_wire_format() {
        let json = serde_json::to_string(&ChatMessage::system("hi")).unwrap();
        assert_eq!(json, r#"{"role":"system","content":"hi"}"#);
    }
}
