use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::dataset::{normalize_text, GenerationParams};
use crate::gateway::{BackendError, ImageBackend, TextBackend};
use crate::prompt::{ELABORATION_LABEL, ILLUSTRATION_CUE, IMPLICIT_LABEL, METAPHOR_LABEL, OBJECTS_LABEL};

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

const MEANINGS: [&str; 8] =
    ["overwhelming", "fragile", "powerful", "chaotic", "lonely", "joyful", "relentless", "calm"];
const SETTINGS: [&str; 6] = [
    "under a stormy sky",
    "in a sunlit field",
    "in a crowded city street",
    "on a quiet beach at dusk",
    "inside a dim room",
    "on a snowy mountain top",
];
const STOPWORDS: [&str; 14] =
    ["the", "a", "an", "is", "are", "was", "were", "my", "his", "her", "their", "our", "your", "like"];

fn digest(seed: u64, parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

/// The metaphor on the last `Metaphor:` line of a prompt.
pub fn target_metaphor(prompt: &str) -> Option<&str> {
    prompt.lines().rev().find_map(|l| l.split_once(METAPHOR_LABEL).map(|(_, m)| m.trim()))
}

fn content_words(metaphor: &str) -> Vec<String> {
    metaphor
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| w.len() > 2 && !STOPWORDS.contains(&w.as_str()))
        .collect()
}

fn capitalize(word: &str) -> String {
    let mut c = word.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

/// Offline text model that answers either prompt style deterministically.
#[derive(Debug, Clone, Default)]
pub struct StubTextBackend {
    seed: u64,
    overrides: BTreeMap<String, String>,
}

impl StubTextBackend {
    pub fn new(seed: u64) -> Self {
        StubTextBackend { seed, overrides: BTreeMap::new() }
    }

    /// Returns `continuation` verbatim whenever the prompt targets `metaphor`.
    pub fn with_override(mut self, metaphor: &str, continuation: &str) -> Self {
        self.overrides.insert(normalize_text(metaphor), continuation.to_owned());
        self
    }

    fn cot(&self, metaphor: &str) -> String {
        let h = digest(self.seed, &[metaphor.as_bytes()]);
        let words = content_words(metaphor);
        let mut objects: Vec<String> = words.iter().take(2).map(|w| capitalize(w)).collect();
        if objects.is_empty() {
            objects.push("Scene".into());
        }
        let meaning = MEANINGS[h[0] as usize % MEANINGS.len()];
        let setting = SETTINGS[h[1] as usize % SETTINGS.len()];
        let subject = objects.iter().map(|o| o.to_lowercase()).collect::<Vec<_>>().join(" beside a ");
        format!(
            " {}\n{IMPLICIT_LABEL} {meaning}\n{ELABORATION_LABEL} A {subject} {setting}, showing how {meaning} it feels.\n\n",
            objects.join(", ")
        )
    }

    fn completion(&self, metaphor: &str) -> String {
        let h = digest(self.seed, &[metaphor.as_bytes()]);
        let words = content_words(metaphor);
        let subject = if words.is_empty() { "a scene".to_owned() } else { format!("a {}", words.join(" and a ")) };
        let setting = SETTINGS[h[2] as usize % SETTINGS.len()];
        format!(" {subject} {setting}.\n\n")
    }
}

impl TextBackend for StubTextBackend {
    fn id(&self) -> String {
        format!("stub-text-{}", self.seed)
    }

    fn complete(&self, prompt: &str, _params: &GenerationParams) -> Result<String, BackendError> {
        let metaphor = target_metaphor(prompt).ok_or_else(|| BackendError::Decode("prompt has no target".into()))?;
        if let Some(text) = self.overrides.get(&normalize_text(metaphor)) {
            return Ok(text.clone());
        }
        let tail = prompt.trim_end();
        if tail.ends_with(OBJECTS_LABEL) {
            Ok(self.cot(metaphor))
        } else if tail.ends_with(ILLUSTRATION_CUE) {
            Ok(self.completion(metaphor))
        } else {
            Err(BackendError::Decode("prompt does not end at a known cue".into()))
        }
    }
}

/// Offline image model producing distinct PNG-tagged byte strings per (prompt, index).
#[derive(Debug, Clone, Default)]
pub struct StubImageBackend {
    seed: u64,
    max_images: Option<usize>,
}

impl StubImageBackend {
    pub fn new(seed: u64) -> Self {
        StubImageBackend { seed, max_images: None }
    }

    /// Returns at most `n` images per call regardless of the request.
    pub fn with_max_images(mut self, n: usize) -> Self {
        self.max_images = Some(n);
        self
    }
}

impl ImageBackend for StubImageBackend {
    fn id(&self) -> String {
        format!("stub-image-{}", self.seed)
    }

    fn generate(&self, prompt: &str, n: usize) -> Result<Vec<Vec<u8>>, BackendError> {
        let n = self.max_images.map_or(n, |m| m.min(n));
        Ok((0..n)
            .map(|i| {
                let mut bytes = PNG_MAGIC.to_vec();
                bytes.extend_from_slice(&digest(self.seed, &[prompt.as_bytes(), &(i as u64).to_le_bytes()]));
                bytes
            })
            .collect())
    }
}
