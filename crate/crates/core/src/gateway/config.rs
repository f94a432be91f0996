use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::RetryPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    TextGen,
    ImageGen,
}

/// Connection settings for one backend. Only the *name* of the credential
/// environment variable is ever stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint_url: String,
    #[serde(default)]
    pub model_id: String,
    #[serde(default)]
    pub credentials_env_var: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_images")]
    pub images_per_prompt: usize,
    /// Requests per second; absent means unlimited.
    #[serde(default)]
    pub rate_per_sec: Option<f64>,
}

fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    3
}
fn default_images() -> usize {
    4
}

impl BackendConfig {
    pub fn text_defaults() -> Self {
        BackendConfig {
            kind: BackendKind::TextGen,
            endpoint_url: "https://api.openai.com/v1/completions".into(),
            model_id: "text-davinci-002".into(),
            credentials_env_var: "TEXTGEN_API_KEY".into(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            images_per_prompt: default_images(),
            rate_per_sec: Some(1.0),
        }
    }

    pub fn image_defaults() -> Self {
        BackendConfig {
            kind: BackendKind::ImageGen,
            endpoint_url: "https://api.openai.com/v1/images/generations".into(),
            model_id: "dall-e-2".into(),
            credentials_env_var: "IMAGEGEN_API_KEY".into(),
            ..Self::text_defaults()
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images_per_prompt < 1 {
            return Err(Error::Config("images_per_prompt must be at least 1".into()));
        }
        if self.rate_per_sec.is_some_and(|r| r.is_nan() || r <= 0.0) {
            return Err(Error::Config("rate_per_sec must be positive".into()));
        }
        Ok(())
    }
}

/// Gateway configuration file (TOML).
///
/// ```toml
/// stub = false          # true: offline deterministic backends
/// seed = 7              # stub seed
/// parallelism = 4       # max in-flight requests per batch
///
/// [retry]
/// base_ms = 1000
/// factor = 2.0
/// jitter = true
///
/// [text]
/// kind = "text_gen"
/// endpoint_url = "https://api.openai.com/v1/completions"
/// model_id = "text-davinci-002"
/// credentials_env_var = "TEXTGEN_API_KEY"
/// max_retries = 3
/// rate_per_sec = 1.0
///
/// [image]
/// kind = "image_gen"
/// endpoint_url = "https://api.openai.com/v1/images/generations"
/// credentials_env_var = "IMAGEGEN_API_KEY"
/// images_per_prompt = 4
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    #[serde(default)]
    pub stub: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "BackendConfig::text_defaults")]
    pub text: BackendConfig,
    #[serde(default = "BackendConfig::image_defaults")]
    pub image: BackendConfig,
}

fn default_parallelism() -> usize {
    4
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            stub: false,
            seed: 0,
            parallelism: default_parallelism(),
            retry: RetryPolicy::default(),
            text: BackendConfig::text_defaults(),
            image: BackendConfig::image_defaults(),
        }
    }
}

impl GatewayConfig {
    /// Offline configuration: stub backends, no rate limit, no backoff.
    pub fn stub(seed: u64) -> Self {
        let mut cfg = GatewayConfig { stub: true, seed, retry: RetryPolicy::immediate(), ..Default::default() };
        cfg.text.rate_per_sec = None;
        cfg.image.rate_per_sec = None;
        cfg
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: GatewayConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.parallelism < 1 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        if self.text.kind != BackendKind::TextGen || self.image.kind != BackendKind::ImageGen {
            return Err(Error::Config("[text] must be text_gen and [image] must be image_gen".into()));
        }
        self.text.validate()?;
        self.image.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = GatewayConfig::parse("").unwrap();
        assert_eq!(cfg, GatewayConfig::default());
        assert_eq!(cfg.image.images_per_prompt, 4);
        assert_eq!(cfg.parallelism, 4);
        assert_eq!(cfg.text.rate_per_sec, Some(1.0));
    }

    #[test]
    fn documented_example_parses() {
        let cfg = GatewayConfig::parse(
            r#"
stub = true
seed = 7
[text]
kind = "text_gen"
credentials_env_var = "MY_KEY"
max_retries = 2
[image]
kind = "image_gen"
images_per_prompt = 1
"#,
        )
        .unwrap();
        assert!(cfg.stub);
        assert_eq!(cfg.text.max_retries, 2);
        assert_eq!(cfg.image.images_per_prompt, 1);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(GatewayConfig::parse("parallelism = 0").is_err());
        assert!(GatewayConfig::parse("[image]\nkind = \"image_gen\"\nimages_per_prompt = 0").is_err());
        assert!(GatewayConfig::parse("[text]\nkind = \"image_gen\"").is_err());
    }
}
