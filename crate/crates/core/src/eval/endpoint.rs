//! Model endpoints: chat-completion-style HTTP services plus a built-in
//! stub family (oracle / random / constant) for offline testing.

use std::path::Path;
use std::time::Duration;

use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qa::QaPair;
use crate::seed::derive_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Always answers with the ground-truth choice.
    StubOracle,
    /// Answers uniformly at random over the choices, seeded per question.
    StubRandom,
    /// Always returns `constant_response`.
    StubConstant,
    /// Chat-completion-style HTTP endpoint.
    Http,
}

fn default_template() -> String {
    "openai-chat".to_string()
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    250
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_temperature() -> Option<f64> {
    Some(0.0)
}

/// Endpoint descriptor, loaded from a TOML or JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Identifier used in journals and reports.
    pub id: String,
    pub kind: ModelKind,
    /// Endpoint URL (http kind).
    #[serde(default)]
    pub url: Option<String>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    /// Request template id; only "openai-chat" is built in.
    #[serde(default = "default_template")]
    pub request_template: String,
    /// Upstream model name placed in the request body.
    #[serde(default)]
    pub model_name: Option<String>,
    /// Text-only mode: prompts carry no image and none is attached.
    #[serde(default)]
    pub blind: bool,
    /// Passed through to the endpoint opaquely. The default of 0.0 requests
    /// deterministic decoding where the endpoint supports it.
    #[serde(default = "default_temperature")]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub constant_response: Option<String>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Minimum interval between requests (http kind), for rate limiting.
    #[serde(default)]
    pub rate_limit_ms: u64,
    /// Seed of the random stub.
    #[serde(default)]
    pub stub_seed: u64,
}

impl ModelConfig {
    /// Parses TOML or JSON, auto-detected.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ModelConfig = if let Ok(cfg) = toml::from_str(&text) {
            cfg
        } else {
            serde_json::from_str(&text).map_err(|e| {
                Error::Config(format!(
                    "model config {} parses as neither TOML nor JSON: {e}",
                    path.display()
                ))
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ModelKind::Http => {
                if self.url.is_none() {
                    return Err(Error::Config(format!("model {:?} lacks a url", self.id)));
                }
                if self.request_template != "openai-chat" {
                    return Err(Error::Config(format!(
                        "unknown request template {:?}",
                        self.request_template
                    )));
                }
            }
            ModelKind::StubConstant if self.constant_response.is_none() => {
                return Err(Error::Config(
                    "stub-constant requires constant_response".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn stub_oracle(id: &str) -> Self {
        ModelConfig {
            id: id.into(),
            kind: ModelKind::StubOracle,
            url: None,
            auth_env: None,
            request_template: default_template(),
            model_name: None,
            blind: false,
            temperature: default_temperature(),
            constant_response: None,
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            timeout_ms: default_timeout_ms(),
            rate_limit_ms: 0,
            stub_seed: 0,
        }
    }

    pub fn stub_random(id: &str, seed: u64) -> Self {
        let mut cfg = Self::stub_oracle(id);
        cfg.kind = ModelKind::StubRandom;
        cfg.stub_seed = seed;
        cfg
    }

    pub fn stub_constant(id: &str, response: &str) -> Self {
        let mut cfg = Self::stub_oracle(id);
        cfg.kind = ModelKind::StubConstant;
        cfg.constant_response = Some(response.into());
        cfg
    }
}

/// A ready-to-call endpoint.
pub struct Endpoint {
    config: ModelConfig,
    client: Option<reqwest::blocking::Client>,
}

impl Endpoint {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let client = if config.kind == ModelKind::Http {
            Some(
                reqwest::blocking::Client::builder()
                    .timeout(Duration::from_millis(config.timeout_ms))
                    .build()
                    .map_err(|e| Error::Endpoint(format!("client: {e}")))?,
            )
        } else {
            None
        };
        Ok(Endpoint { config, client })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Whether responses require the degraded image on disk.
    pub fn needs_image(&self) -> bool {
        self.config.kind == ModelKind::Http && !self.config.blind
    }

    /// Produces the raw response text for one (question, condition) query.
    /// `condition` participates in the random stub's seed so repeated
    /// questions across conditions are independent draws.
    pub fn respond(
        &self,
        qa: &QaPair,
        condition: &str,
        prompt: &str,
        image: Option<&Path>,
    ) -> Result<String> {
        match self.config.kind {
            ModelKind::StubOracle => Ok(qa.answer().to_string()),
            ModelKind::StubConstant => {
                Ok(self.config.constant_response.clone().unwrap_or_default())
            }
            ModelKind::StubRandom => {
                let mut rng = derive_rng(
                    self.config.stub_seed,
                    &["stub-random", &qa.key(), condition],
                );
                let i = rng.random_range(0..qa.choices.len());
                Ok(qa.choices[i].clone())
            }
            ModelKind::Http => self.respond_http(prompt, image),
        }
    }

    fn respond_http(&self, prompt: &str, image: Option<&Path>) -> Result<String> {
        let body = self.chat_request_body(prompt, image)?;
        let url = self.config.url.as_deref().expect("validated");
        let client = self.client.as_ref().expect("http client");

        let mut last_error = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let backoff = self
                    .config
                    .backoff_ms
                    .saturating_mul(1 << (attempt - 1).min(4));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            let mut request = client.post(url).json(&body);
            if let Some(env_name) = &self.config.auth_env {
                if let Ok(token) = std::env::var(env_name) {
                    request = request.bearer_auth(token);
                }
            }
            match request.send() {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        let json: serde_json::Value = response
                            .json()
                            .map_err(|e| Error::Endpoint(format!("bad response body: {e}")))?;
                        return extract_chat_content(&json);
                    }
                    last_error = format!("http status {status}");
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(Error::Endpoint(format!(
            "{} unreachable after {} retries: {last_error}",
            url, self.config.max_retries
        )))
    }

    /// Builds an openai-chat request. Vision queries attach the image as a
    /// base64 data URL; blind queries send plain text content.
    fn chat_request_body(&self, prompt: &str, image: Option<&Path>) -> Result<serde_json::Value> {
        let content = match image {
            Some(path) if !self.config.blind => {
                let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
                let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
                serde_json::json!([
                    { "type": "text", "text": prompt },
                    {
                        "type": "image_url",
                        "image_url": { "url": format!("data:image/png;base64,{encoded}") }
                    }
                ])
            }
            _ => serde_json::Value::String(prompt.to_string()),
        };
        let mut body = serde_json::json!({
            "messages": [ { "role": "user", "content": content } ]
        });
        if let Some(name) = &self.config.model_name {
            body["model"] = serde_json::Value::String(name.clone());
        }
        if let Some(t) = self.config.temperature {
            body["temperature"] = serde_json::json!(t);
        }
        Ok(body)
    }
}

fn extract_chat_content(json: &serde_json::Value) -> Result<String> {
    json["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::Endpoint("response lacks choices[0].message.content".into()))
}
