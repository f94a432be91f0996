use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::ImageFormat;
use crate::error::{Error, Result};

/// Case-folds, trims and collapses internal whitespace.
pub fn normalize_text(text: &str) -> String {
    let folded = caseless::default_case_fold_str(text);
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetaphorId(String);

impl MetaphorId {
    /// Content hash of the normalized metaphor text.
    pub fn from_text(text: &str) -> Self {
        let digest = Sha256::digest(normalize_text(text).as_bytes());
        MetaphorId(hex::encode(&digest[..8]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<String> for MetaphorId {
    fn from(s: String) -> Self {
        MetaphorId(s)
    }
}

impl From<&str> for MetaphorId {
    fn from(s: &str) -> Self {
        MetaphorId(s.to_owned())
    }
}

impl fmt::Display for MetaphorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SourceCorpus {
    #[serde(rename = "FLUTE")]
    Flute,
    Advertisements,
    CoPoet,
    #[serde(rename = "FigQA")]
    FigQa,
    FigureOfSpeech,
    CrossLingMetaphors,
    MetaphorParaphrase,
}

impl SourceCorpus {
    pub const ALL: [SourceCorpus; 7] = [
        SourceCorpus::Flute,
        SourceCorpus::Advertisements,
        SourceCorpus::CoPoet,
        SourceCorpus::FigQa,
        SourceCorpus::FigureOfSpeech,
        SourceCorpus::CrossLingMetaphors,
        SourceCorpus::MetaphorParaphrase,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SourceCorpus::Flute => "FLUTE",
            SourceCorpus::Advertisements => "Advertisements",
            SourceCorpus::CoPoet => "CoPoet",
            SourceCorpus::FigQa => "FigQA",
            SourceCorpus::FigureOfSpeech => "FigureOfSpeech",
            SourceCorpus::CrossLingMetaphors => "CrossLingMetaphors",
            SourceCorpus::MetaphorParaphrase => "MetaphorParaphrase",
        }
    }
}

impl fmt::Display for SourceCorpus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SourceCorpus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
        SourceCorpus::ALL
            .into_iter()
            .find(|c| c.name().to_lowercase() == key)
            .ok_or_else(|| Error::InvalidInput(format!("unknown source corpus `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Groundedness {
    Pending,
    Visual,
    NonVisual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinguisticMetaphor {
    pub id: MetaphorId,
    pub text: String,
    pub source_corpus: SourceCorpus,
    pub groundedness: Groundedness,
    pub created_at: DateTime<Utc>,
}

impl LinguisticMetaphor {
    pub fn new(text: &str, source_corpus: SourceCorpus, created_at: DateTime<Utc>) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::InvalidInput("metaphor text is empty".into()));
        }
        Ok(LinguisticMetaphor {
            id: MetaphorId::from_text(text),
            text: text.to_owned(),
            source_corpus,
            groundedness: Groundedness::Pending,
            created_at,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PromptStrategy {
    #[serde(rename = "cot")]
    CoT,
    #[serde(rename = "completion")]
    Completion,
}

impl PromptStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptStrategy::CoT => "cot",
            PromptStrategy::Completion => "completion",
        }
    }
}

impl FromStr for PromptStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cot" => Ok(PromptStrategy::CoT),
            "completion" => Ok(PromptStrategy::Completion),
            other => Err(Error::InvalidInput(format!("unknown prompt strategy `{other}`"))),
        }
    }
}

/// Sampling parameters for the text model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub top_p: f64,
    pub best_of: u32,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
    pub model_id: String,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.7,
            max_tokens: 256,
            top_p: 1.0,
            best_of: 1,
            frequency_penalty: 0.5,
            presence_penalty: 0.5,
            model_id: "text-davinci-002".into(),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Validation(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Validation(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.max_tokens < 1 {
            return Err(Error::Validation("max_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

/// Where an elaboration record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Generated,
    /// Re-ingested from an export; the pre-edit text is not part of the export schema.
    Imported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualElaboration {
    pub id: String,
    pub metaphor_id: MetaphorId,
    pub objects: Vec<String>,
    pub implicit_meaning: String,
    pub elaboration_text: String,
    pub edited: bool,
    pub original_text: Option<String>,
    pub generation_params: GenerationParams,
    pub prompt_strategy: PromptStrategy,
    #[serde(default)]
    pub validated_by: Option<String>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl VisualElaboration {
    pub fn check(&self) -> Result<()> {
        if self.elaboration_text.trim().is_empty() {
            return Err(Error::Validation("elaboration text is empty".into()));
        }
        match (&self.original_text, self.edited) {
            (Some(orig), true) if orig == &self.elaboration_text => {
                return Err(Error::Validation("edited elaboration identical to original".into()))
            }
            (Some(_), false) => return Err(Error::Validation("original text kept on unedited elaboration".into())),
            (None, true) if self.provenance == Provenance::Generated => {
                return Err(Error::Validation("edited elaboration lost its original text".into()))
            }
            _ => {}
        }
        match self.prompt_strategy {
            PromptStrategy::CoT => {
                if self.objects.is_empty() || self.objects.iter().any(|o| o.trim().is_empty()) {
                    return Err(Error::Validation("CoT elaboration needs non-empty objects".into()));
                }
                if self.implicit_meaning.trim().is_empty() {
                    return Err(Error::Validation("CoT elaboration needs an implicit meaning".into()));
                }
            }
            PromptStrategy::Completion => {
                if !self.objects.is_empty() || !self.implicit_meaning.is_empty() {
                    return Err(Error::Validation(
                        "completion elaborations carry no objects or implicit meaning".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStatus {
    Pending,
    Accepted,
    Rejected,
}

impl FilterStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterStatus::Pending => "pending",
            FilterStatus::Accepted => "accepted",
            FilterStatus::Rejected => "rejected",
        }
    }
}

impl FromStr for FilterStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pending" => Ok(FilterStatus::Pending),
            "accepted" | "accept" => Ok(FilterStatus::Accepted),
            "rejected" | "reject" => Ok(FilterStatus::Rejected),
            other => Err(Error::InvalidInput(format!("unknown filter status `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedImage {
    pub id: String,
    pub metaphor_id: MetaphorId,
    pub elaboration_id: String,
    pub prompt_text: String,
    /// `<sha256 of bytes>.<ext>`, relative to the blob directory.
    pub image_ref: String,
    pub format: ImageFormat,
    pub generator_id: String,
    pub filter_status: FilterStatus,
    pub decided_by: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_metaphors: usize,
    pub n_images: usize,
    pub avg_images_per_metaphor: f64,
}

impl DatasetStats {
    pub fn from_counts(n_metaphors: usize, n_images: usize) -> Self {
        let avg = if n_metaphors > 0 { n_images as f64 / n_metaphors as f64 } else { 0.0 };
        DatasetStats { n_metaphors, n_images, avg_images_per_metaphor: avg }
    }
}
