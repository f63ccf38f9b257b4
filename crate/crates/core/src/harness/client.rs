//! Chat-completions client carrying base64 PNG images.
//!
//! Request: `POST {base_url}/chat/completions` with
//! `{"model", "messages": [{"role": "user", "content": [image_url parts..., text part]}], "temperature": 0}`.
//! Response text is `choices[0].message.content`.

use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    pub max_images_per_request: usize,
    pub timeout_seconds: f64,
    pub max_retries: u32,
    pub concurrency_limit: usize,
    /// Name of the environment variable holding a bearer token.
    pub auth_env: Option<String>,
    pub backoff_initial_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model_name: "default".into(),
            max_images_per_request: 32,
            timeout_seconds: 120.0,
            max_retries: 3,
            concurrency_limit: 4,
            auth_env: None,
            backoff_initial_ms: 500,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.concurrency_limit == 0 {
            return Err(Error::Config("concurrency_limit must be >= 1".into()));
        }
        if self.max_images_per_request == 0 {
            return Err(Error::Config("max_images_per_request must be >= 1".into()));
        }
        if !(self.timeout_seconds > 0.0) {
            return Err(Error::Config("timeout_seconds must be > 0".into()));
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// Something that answers a prompt with images attached.
pub trait ChatBackend: Sync {
    /// `images` are PNG-encoded, in chronological order.
    fn complete(&self, images: &[Vec<u8>], prompt: &str) -> Result<String>;

    fn max_images(&self) -> usize {
        usize::MAX
    }
}

pub fn png_data_url(png: &[u8]) -> String {
    format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(png)
    )
}

pub fn build_request_body(model: &str, images: &[Vec<u8>], prompt: &str) -> Value {
    let mut content: Vec<Value> = images
        .iter()
        .map(|png| json!({"type": "image_url", "image_url": {"url": png_data_url(png)}}))
        .collect();
    content.push(json!({"type": "text", "text": prompt}));
    json!({
        "model": model,
        "messages": [{"role": "user", "content": content}],
        "temperature": 0,
    })
}

/// First choice's message text; array-of-parts content is concatenated.
pub fn extract_response_text(body: &Value) -> Result<String> {
    let content = body
        .pointer("/choices/0/message/content")
        .ok_or_else(|| Error::Endpoint(format!("response has no choices[0].message.content: {body}")))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        Value::Null => Ok(String::new()),
        other => Err(Error::Endpoint(format!("unexpected content {other}"))),
    }
}

pub struct HttpBackend {
    cfg: EndpointConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Done(String),
    Transient(String),
}

impl HttpBackend {
    pub fn new(cfg: EndpointConfig) -> Result<Self> {
        cfg.validate()?;
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(cfg.timeout_seconds))
            .build();
        Ok(HttpBackend { cfg, agent })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn attempt(&self, url: &str, body: &Value, token: Option<&str>) -> Result<Attempt> {
        let mut req = self.agent.post(url).set("Content-Type", "application/json");
        if let Some(tok) = token {
            req = req.set("Authorization", &format!("Bearer {tok}"));
        }
        match req.send_json(body) {
            Ok(resp) => {
                let v: Value = resp
                    .into_json()
                    .map_err(|e| Error::Endpoint(format!("unreadable response body: {e}")))?;
                extract_response_text(&v).map(Attempt::Done)
            }
            // 408 and 429 are retried like server errors
            Err(ureq::Error::Status(code, resp)) if code >= 500 || code == 408 || code == 429 => {
                Ok(Attempt::Transient(format!("HTTP {code}: {}", resp.into_string().unwrap_or_default())))
            }
            Err(ureq::Error::Status(code, resp)) => Err(Error::Config(format!(
                "endpoint rejected request with HTTP {code}: {}",
                resp.into_string().unwrap_or_default()
            ))),
            Err(ureq::Error::Transport(t)) => Ok(Attempt::Transient(t.to_string())),
        }
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, images: &[Vec<u8>], prompt: &str) -> Result<String> {
        if images.len() > self.cfg.max_images_per_request {
            return Err(Error::Config(format!(
                "{} images exceed max_images_per_request={}",
                images.len(),
                self.cfg.max_images_per_request
            )));
        }
        let token = match &self.cfg.auth_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| Error::Config(format!("auth env var `{var}` is not set")))?,
            ),
            None => None,
        };
        let url = self.cfg.completions_url();
        let body = build_request_body(&self.cfg.model_name, images, prompt);
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                let delay = self.cfg.backoff_initial_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(&url, &body, token.as_deref())? {
                Attempt::Done(text) => return Ok(text),
                Attempt::Transient(msg) => last = msg,
            }
        }
        Err(Error::Endpoint(format!(
            "gave up after {} attempts: {last}",
            self.cfg.max_retries + 1
        )))
    }

    fn max_images(&self) -> usize {
        self.cfg.max_images_per_request
    }
}

/// One-shot query with a fresh client.
pub fn query_model(cfg: &EndpointConfig, images: &[Vec<u8>], prompt: &str) -> Result<String> {
    HttpBackend::new(cfg.clone())?.complete(images, prompt)
}
