//! Text and image model access behind one retrying, rate-limited facade.

mod config;
mod http;
mod limiter;
mod stub;

use std::sync::Arc;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{BackendConfig, BackendKind, GatewayConfig};
pub use http::{redact, HttpImageBackend, HttpTextBackend};
pub use limiter::{RateLimiter, RetryPolicy};
pub use stub::{target_metaphor, StubImageBackend, StubTextBackend};

use crate::dataset::{BlobStore, GenerationParams, ImageFormat, PromptStrategy};
use crate::error::{Error, Result};
use crate::prompt::{build_prompt, parse_completion_output, parse_cot_output, ElaborationFields};

/// Failure of a single backend call.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Decode(String),
    #[error("credential variable `{0}` is not set")]
    MissingCredentials(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        !matches!(self, BackendError::MissingCredentials(_))
    }
}

pub trait TextBackend: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError>;
}

pub trait ImageBackend: Send + Sync {
    fn id(&self) -> String;
    /// Up to `n` encoded images for `prompt`.
    fn generate(&self, prompt: &str, n: usize) -> Result<Vec<Vec<u8>>, BackendError>;
}

/// A parsed model elaboration, not yet attached to a metaphor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElaborationDraft {
    pub fields: ElaborationFields,
    pub strategy: PromptStrategy,
    pub params: GenerationParams,
    pub generator_id: String,
    pub attempts: u32,
}

/// Images stored in the blob directory for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFetch {
    pub prompt: String,
    pub generator_id: String,
    pub blobs: Vec<(String, ImageFormat)>,
    pub requested: usize,
}

impl ImageFetch {
    pub fn shortfall(&self) -> usize {
        self.requested.saturating_sub(self.blobs.len())
    }
}

pub struct Gateway {
    text: Arc<dyn TextBackend>,
    image: Arc<dyn ImageBackend>,
    text_config: BackendConfig,
    image_config: BackendConfig,
    retry: RetryPolicy,
    text_limiter: RateLimiter,
    image_limiter: RateLimiter,
    parallelism: usize,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("text", &self.text.id())
            .field("image", &self.image.id())
            .field("parallelism", &self.parallelism)
            .finish()
    }
}

impl Gateway {
    pub fn new(
        text: Arc<dyn TextBackend>,
        image: Arc<dyn ImageBackend>,
        text_config: BackendConfig,
        image_config: BackendConfig,
    ) -> Self {
        Gateway {
            text_limiter: RateLimiter::new(text_config.rate_per_sec),
            image_limiter: RateLimiter::new(image_config.rate_per_sec),
            text,
            image,
            text_config,
            image_config,
            retry: RetryPolicy::default(),
            parallelism: 4,
        }
    }

    /// Stub backends with the given seed; no rate limit and no backoff.
    pub fn stub(seed: u64) -> Self {
        Self::from_config(&GatewayConfig::stub(seed)).expect("stub configuration is valid")
    }

    pub fn from_config(cfg: &GatewayConfig) -> Result<Self> {
        cfg.validate()?;
        let (text, image): (Arc<dyn TextBackend>, Arc<dyn ImageBackend>) = if cfg.stub {
            (Arc::new(StubTextBackend::new(cfg.seed)), Arc::new(StubImageBackend::new(cfg.seed)))
        } else {
            let t = HttpTextBackend::new(cfg.text.clone()).map_err(|e| Error::Config(e.to_string()))?;
            let i = HttpImageBackend::new(cfg.image.clone()).map_err(|e| Error::Config(e.to_string()))?;
            (Arc::new(t), Arc::new(i))
        };
        Ok(Gateway::new(text, image, cfg.text.clone(), cfg.image.clone())
            .with_retry(cfg.retry.clone())
            .with_parallelism(cfg.parallelism))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_parallelism(mut self, n: usize) -> Self {
        self.parallelism = n.max(1);
        self
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn text_config(&self) -> &BackendConfig {
        &self.text_config
    }

    pub fn image_config(&self) -> &BackendConfig {
        &self.image_config
    }

    /// Prompts the text model and parses its answer, retrying malformed output and
    /// transient failures up to `max_retries` times (so at most `max_retries + 1` calls).
    pub fn generate_elaboration(
        &self,
        metaphor: &str,
        strategy: PromptStrategy,
        params: &GenerationParams,
    ) -> Result<ElaborationDraft> {
        params.validate()?;
        let prompt = build_prompt(strategy, metaphor)?;
        let max = self.text_config.max_retries;
        let mut last: Option<Error> = None;
        for attempt in 0..=max {
            if matches!(last, Some(Error::Gateway { .. })) {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            self.text_limiter.acquire();
            let raw = match self.text.complete(&prompt.text, params) {
                Ok(raw) => raw,
                Err(e) if !e.is_retryable() => return Err(Error::Gateway { attempts: attempt + 1, last: e }),
                Err(e) => {
                    warn!("text backend attempt {} failed: {e}", attempt + 1);
                    last = Some(Error::Gateway { attempts: attempt + 1, last: e });
                    continue;
                }
            };
            let parsed = match strategy {
                PromptStrategy::CoT => parse_cot_output(&raw),
                PromptStrategy::Completion => parse_completion_output(&raw).map(|text| ElaborationFields {
                    objects: Vec::new(),
                    implicit_meaning: String::new(),
                    elaboration_text: text,
                }),
            };
            match parsed {
                Ok(fields) => {
                    return Ok(ElaborationDraft {
                        fields,
                        strategy,
                        params: params.clone(),
                        generator_id: self.text.id(),
                        attempts: attempt + 1,
                    })
                }
                Err(e) => {
                    debug!("unparseable output on attempt {}: {e}", attempt + 1);
                    last = Some(e);
                }
            }
        }
        let attempts = max + 1;
        Err(match last.expect("at least one attempt") {
            Error::Gateway { last, .. } => Error::Gateway { attempts, last },
            e => Error::ParseExhausted { attempts, last: Box::new(e) },
        })
    }

    /// Requests `images_per_prompt` images and stores them as blobs. Fewer than
    /// requested is not an error; see [`ImageFetch::shortfall`].
    pub fn fetch_images(&self, blobs: &BlobStore, prompt: &str) -> Result<ImageFetch> {
        let n = self.image_config.images_per_prompt;
        let max = self.image_config.max_retries;
        let mut last = None;
        for attempt in 0..=max {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            self.image_limiter.acquire();
            match self.image.generate(prompt, n) {
                Ok(images) if images.is_empty() => {
                    warn!("image backend attempt {} returned no images", attempt + 1);
                    last = Some(BackendError::Decode("backend returned no images".into()));
                }
                Ok(mut images) => {
                    images.truncate(n);
                    let stored = images.iter().map(|b| blobs.put(b)).collect::<Result<Vec<_>>>()?;
                    if stored.len() < n {
                        warn!("image backend returned {} of {n} images", stored.len());
                    }
                    return Ok(ImageFetch {
                        prompt: prompt.to_owned(),
                        generator_id: self.image.id(),
                        blobs: stored,
                        requested: n,
                    });
                }
                Err(e) if !e.is_retryable() => return Err(Error::Gateway { attempts: attempt + 1, last: e }),
                Err(e) => {
                    warn!("image backend attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                }
            }
        }
        Err(Error::Gateway { attempts: max + 1, last: last.expect("at least one attempt") })
    }
}
