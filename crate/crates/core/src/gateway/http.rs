use base64::Engine;
use reqwest::blocking::{Client, Response};
use serde_json::{json, Value};

use crate::dataset::GenerationParams;
use crate::gateway::{BackendConfig, BackendError, ImageBackend, TextBackend};

const MAX_MESSAGE: usize = 300;

/// Reads the credential at call time; the value is never stored.
fn credential(config: &BackendConfig) -> Result<String, BackendError> {
    std::env::var(&config.credentials_env_var)
        .ok()
        .filter(|v| !v.is_empty())
        .ok_or_else(|| BackendError::MissingCredentials(config.credentials_env_var.clone()))
}

/// Removes every occurrence of `secret` from `text` and truncates it.
pub fn redact(text: &str, secret: &str) -> String {
    let mut out = if secret.is_empty() { text.to_owned() } else { text.replace(secret, "[REDACTED]") };
    if out.len() > MAX_MESSAGE {
        let mut cut = MAX_MESSAGE;
        while !out.is_char_boundary(cut) {
            cut -= 1;
        }
        out.truncate(cut);
        out.push('…');
    }
    out
}

fn client(config: &BackendConfig) -> Result<Client, BackendError> {
    Client::builder().timeout(config.timeout()).build().map_err(|e| BackendError::Transport(e.to_string()))
}

fn post_json(client: &Client, config: &BackendConfig, key: &str, body: &Value) -> Result<Value, BackendError> {
    let resp = client
        .post(&config.endpoint_url)
        .bearer_auth(key)
        .json(body)
        .send()
        .map_err(|e| BackendError::Transport(redact(&e.to_string(), key)))?;
    read_json(resp, key)
}

fn read_json(resp: Response, key: &str) -> Result<Value, BackendError> {
    let status = resp.status();
    let text = resp.text().map_err(|e| BackendError::Transport(redact(&e.to_string(), key)))?;
    if !status.is_success() {
        return Err(BackendError::Http { status: status.as_u16(), message: redact(&text, key) });
    }
    serde_json::from_str(&text).map_err(|e| BackendError::Decode(redact(&e.to_string(), key)))
}

/// Completion endpoint speaking the common `{"choices":[{"text":…}]}` shape.
#[derive(Debug, Clone)]
pub struct HttpTextBackend {
    config: BackendConfig,
    client: Client,
}

impl HttpTextBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        let client = client(&config)?;
        Ok(HttpTextBackend { config, client })
    }
}

impl TextBackend for HttpTextBackend {
    fn id(&self) -> String {
        self.config.model_id.clone()
    }

    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        let key = credential(&self.config)?;
        let model = if params.model_id.is_empty() { &self.config.model_id } else { &params.model_id };
        let body = json!({
            "model": model,
            "prompt": prompt,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "top_p": params.top_p,
            "best_of": params.best_of,
            "frequency_penalty": params.frequency_penalty,
            "presence_penalty": params.presence_penalty,
        });
        let v = post_json(&self.client, &self.config, &key, &body)?;
        v.pointer("/choices/0/text")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| BackendError::Decode("response has no choices[0].text".into()))
    }
}

/// Image endpoint speaking the common `{"data":[{"b64_json":…}|{"url":…}]}` shape.
#[derive(Debug, Clone)]
pub struct HttpImageBackend {
    config: BackendConfig,
    client: Client,
}

impl HttpImageBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        let client = client(&config)?;
        Ok(HttpImageBackend { config, client })
    }
}

impl ImageBackend for HttpImageBackend {
    fn id(&self) -> String {
        self.config.model_id.clone()
    }

    fn generate(&self, prompt: &str, n: usize) -> Result<Vec<Vec<u8>>, BackendError> {
        let key = credential(&self.config)?;
        let body = json!({
            "model": self.config.model_id,
            "prompt": prompt,
            "n": n,
            "response_format": "b64_json",
        });
        let v = post_json(&self.client, &self.config, &key, &body)?;
        let data = v
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::Decode("response has no data array".into()))?;
        let engine = base64::engine::general_purpose::STANDARD;
        data.iter()
            .map(|item| {
                if let Some(b64) = item.get("b64_json").and_then(Value::as_str) {
                    engine.decode(b64).map_err(|e| BackendError::Decode(e.to_string()))
                } else if let Some(url) = item.get("url").and_then(Value::as_str) {
                    let resp = self.client.get(url).send().map_err(|e| BackendError::Transport(e.to_string()))?;
                    if !resp.status().is_success() {
                        return Err(BackendError::Http {
                            status: resp.status().as_u16(),
                            message: "image download".into(),
                        });
                    }
                    resp.bytes().map(|b| b.to_vec()).map_err(|e| BackendError::Transport(e.to_string()))
                } else {
                    Err(BackendError::Decode("image entry has neither b64_json nor url".into()))
                }
            })
            .collect()
    }
}
