//! Few-shot prompt construction and parsing of model continuations.
//!
//! The few-shot examples live in `fixtures/` as plain-text blocks separated by a
//! blank line, one `Label: value` field per line. Prompts use LF line endings and
//! are byte-stable for a given metaphor.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::dataset::PromptStrategy;
use crate::error::{Error, Result};

pub const COT_INSTRUCTION: &str = "Your task will be to elaborate a metaphor with rich visual details along with the provided objects to be included and implicit meaning. Make sure to include the implicit meaning and the objects to be included in the explanation";

pub const METAPHOR_LABEL: &str = "Metaphor:";
pub const OBJECTS_LABEL: &str = "Objects to be included:";
pub const IMPLICIT_LABEL: &str = "Implicit Meaning:";
pub const ELABORATION_LABEL: &str = "Visual elaboration:";
pub const ILLUSTRATION_CUE: &str = "An illustration of";

const COT_FIXTURE: &str = include_str!("../fixtures/cot_examples.txt");
const COMPLETION_FIXTURE: &str = include_str!("../fixtures/completion_examples.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub metaphor: String,
    pub objects: Option<String>,
    pub implicit_meaning: Option<String>,
    pub elaboration: String,
}

/// Parses the few-shot fixture format.
pub fn parse_fixture(text: &str) -> Result<Vec<FewShotExample>> {
    let text = text.replace("\r\n", "\n");
    text.split("\n\n")
        .map(str::trim)
        .filter(|b| !b.is_empty())
        .map(|block| {
            let mut ex = FewShotExample {
                metaphor: String::new(),
                objects: None,
                implicit_meaning: None,
                elaboration: String::new(),
            };
            for line in block.lines() {
                let field = |label: &str| line.strip_prefix(label).map(|v| v.trim().to_owned());
                if let Some(v) = field(METAPHOR_LABEL) {
                    ex.metaphor = v;
                } else if let Some(v) = field(OBJECTS_LABEL) {
                    ex.objects = Some(v);
                } else if let Some(v) = field(IMPLICIT_LABEL) {
                    ex.implicit_meaning = Some(v);
                } else if let Some(v) = field(ELABORATION_LABEL) {
                    ex.elaboration = v;
                } else {
                    return Err(Error::InvalidInput(format!("unrecognised fixture line `{line}`")));
                }
            }
            if ex.metaphor.is_empty() || ex.elaboration.is_empty() {
                return Err(Error::InvalidInput(format!("fixture block lacks metaphor or elaboration: `{block}`")));
            }
            Ok(ex)
        })
        .collect()
}

pub fn cot_examples() -> &'static [FewShotExample] {
    static EXAMPLES: OnceLock<Vec<FewShotExample>> = OnceLock::new();
    EXAMPLES.get_or_init(|| parse_fixture(COT_FIXTURE).expect("bundled CoT fixture is well-formed"))
}

pub fn completion_examples() -> &'static [FewShotExample] {
    static EXAMPLES: OnceLock<Vec<FewShotExample>> = OnceLock::new();
    EXAMPLES.get_or_init(|| parse_fixture(COMPLETION_FIXTURE).expect("bundled completion fixture is well-formed"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub strategy: PromptStrategy,
    pub target_metaphor: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElaborationFields {
    pub objects: Vec<String>,
    pub implicit_meaning: String,
    pub elaboration_text: String,
}

fn clean_metaphor(metaphor: &str) -> Result<String> {
    let m = metaphor.split_whitespace().collect::<Vec<_>>().join(" ");
    if m.is_empty() {
        return Err(Error::InvalidInput("metaphor is empty".into()));
    }
    Ok(m)
}

pub fn build_prompt(strategy: PromptStrategy, metaphor: &str) -> Result<PromptText> {
    match strategy {
        PromptStrategy::CoT => build_cot_prompt(metaphor),
        PromptStrategy::Completion => build_completion_prompt(metaphor),
    }
}

/// Instruction, five worked examples, then the target left open at the objects cue.
pub fn build_cot_prompt(metaphor: &str) -> Result<PromptText> {
    let target = clean_metaphor(metaphor)?;
    let mut text = String::with_capacity(2048);
    text.push_str(COT_INSTRUCTION);
    text.push_str("\n\n");
    for (i, ex) in cot_examples().iter().enumerate() {
        text.push_str(&format!(
            "{}. {METAPHOR_LABEL} {}\n{OBJECTS_LABEL} {}\n{IMPLICIT_LABEL} {}\n{ELABORATION_LABEL} {}\n\n",
            i + 1,
            ex.metaphor,
            ex.objects.as_deref().unwrap_or_default(),
            ex.implicit_meaning.as_deref().unwrap_or_default(),
            ex.elaboration,
        ));
    }
    text.push_str(&format!("{}. {METAPHOR_LABEL} {target}\n{OBJECTS_LABEL}", cot_examples().len() + 1));
    Ok(PromptText { text, strategy: PromptStrategy::CoT, target_metaphor: target })
}

/// The same five metaphors, each followed directly by its illustration; ends at the open cue.
pub fn build_completion_prompt(metaphor: &str) -> Result<PromptText> {
    let target = clean_metaphor(metaphor)?;
    let mut text = String::with_capacity(1536);
    for (i, ex) in completion_examples().iter().enumerate() {
        text.push_str(&format!("{}. {METAPHOR_LABEL} {}\n{}\n\n", i + 1, ex.metaphor, ex.elaboration));
    }
    text.push_str(&format!("{}. {METAPHOR_LABEL} {target}\n{ILLUSTRATION_CUE}", completion_examples().len() + 1));
    Ok(PromptText { text, strategy: PromptStrategy::Completion, target_metaphor: target })
}

/// Byte range of `label` in `hay`, ASCII case-insensitive.
fn find_label(hay: &str, label: &str, from: usize) -> Option<(usize, usize)> {
    let lower = hay.to_ascii_lowercase();
    lower[from..].find(&label.to_ascii_lowercase()).map(|i| (from + i, from + i + label.len()))
}

/// Cuts a continuation where the model starts another example.
fn first_block(text: &str) -> &str {
    let mut end = text.len();
    if let Some(i) = text.find("\n\n") {
        end = end.min(i);
    }
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim_start();
        let digits = t.chars().take_while(char::is_ascii_digit).count();
        if offset > 0 && digits > 0 && t[digits..].starts_with(". ") && t[digits + 2..].starts_with(METAPHOR_LABEL) {
            end = end.min(offset);
            break;
        }
        offset += line.len();
    }
    text[..end].trim()
}

/// Extracts objects, implicit meaning and elaboration from a CoT continuation.
///
/// The input normally starts right after the open objects cue; echoed labels and
/// surrounding whitespace are tolerated.
pub fn parse_cot_output(raw: &str) -> Result<ElaborationFields> {
    let raw = raw.replace("\r\n", "\n");
    let implicit = find_label(&raw, IMPLICIT_LABEL, 0).ok_or(Error::Parse("Implicit Meaning"))?;
    let elab = find_label(&raw, ELABORATION_LABEL, implicit.1).ok_or(Error::Parse("Visual elaboration"))?;

    let head = &raw[..implicit.0];
    let objects_text = match find_label(head, OBJECTS_LABEL, 0) {
        Some((_, end)) => &head[end..],
        None => head,
    };
    let objects: Vec<String> = objects_text
        .replace('\n', " ")
        .split(',')
        .map(|o| o.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|o| !o.is_empty())
        .collect();
    if objects.is_empty() {
        return Err(Error::Parse("Objects to be included"));
    }
    let implicit_meaning = raw[implicit.1..elab.0].trim().to_owned();
    if implicit_meaning.is_empty() {
        return Err(Error::Parse("Implicit Meaning"));
    }
    let elaboration_text = first_block(&raw[elab.1..]).to_owned();
    if elaboration_text.is_empty() {
        return Err(Error::Parse("Visual elaboration"));
    }
    Ok(ElaborationFields { objects, implicit_meaning, elaboration_text })
}

/// Renders fields the way a model continues the open objects cue.
pub fn render_cot_fields(fields: &ElaborationFields) -> String {
    format!(
        " {}\n{IMPLICIT_LABEL} {}\n{ELABORATION_LABEL} {}",
        fields.objects.join(", "),
        fields.implicit_meaning,
        fields.elaboration_text
    )
}

/// Re-attaches the illustration cue to a completion-style continuation.
pub fn parse_completion_output(raw: &str) -> Result<String> {
    let raw = raw.replace("\r\n", "\n");
    let body = first_block(&raw);
    if body.is_empty() {
        return Err(Error::Parse("Visual elaboration"));
    }
    if starts_with_cue(body) {
        Ok(body.to_owned())
    } else {
        Ok(format!("{ILLUSTRATION_CUE} {body}"))
    }
}

fn starts_with_cue(text: &str) -> bool {
    text.get(..ILLUSTRATION_CUE.len()).is_some_and(|p| p.eq_ignore_ascii_case(ILLUSTRATION_CUE))
}

/// Text sent to the image model: the elaboration behind the illustration cue.
/// Idempotent; already-prefixed text is returned unchanged.
pub fn build_image_prompt(elaboration_text: &str) -> Result<String> {
    let trimmed = elaboration_text.trim();
    if trimmed.is_empty() {
        return Err(Error::InvalidInput("elaboration text is empty".into()));
    }
    if starts_with_cue(trimmed) {
        return Ok(elaboration_text.to_owned());
    }
    let mut chars = trimmed.chars();
    let first = chars.next().expect("non-empty");
    Ok(format!("{ILLUSTRATION_CUE} {}{}", first.to_lowercase(), chars.as_str()))
}

impl ElaborationFields {
    pub fn image_prompt(&self) -> Result<String> {
        build_image_prompt(&self.elaboration_text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BLOCK6: &str = "Messy bedroom, Pig\nImplicit Meaning: dirty\nVisual elaboration: A bedroom with clothes & garbage everywhere with a pig in the center rooting around.";

    #[test]
    fn fixtures_share_metaphors() {
        let cot: Vec<_> = cot_examples().iter().map(|e| &e.metaphor).collect();
        let completion: Vec<_> = completion_examples().iter().map(|e| &e.metaphor).collect();
        assert_eq!(cot.len(), 5);
        assert_eq!(cot, completion);
        assert!(completion_examples()
            .iter()
            .all(|e| e.objects.is_none() && e.elaboration.starts_with(ILLUSTRATION_CUE)));
    }

    #[test]
    fn cot_prompt_shape() {
        let p = build_cot_prompt("My bedroom is a pig sty").unwrap();
        assert_eq!(p.text.matches("Metaphor:").count(), 6);
        assert!(p.text.ends_with("6. Metaphor: My bedroom is a pig sty\nObjects to be included:"));
        assert_eq!(p.text, build_cot_prompt("My bedroom is a pig sty").unwrap().text);
        assert!(matches!(build_cot_prompt("  "), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn completion_prompt_shape() {
        let p = build_completion_prompt("My bedroom is a pig sty").unwrap();
        assert!(p.text.starts_with("1. Metaphor: My lawyer is a shark.\nAn illustration of a shark in a suit"));
        assert_eq!(p.text.matches("Implicit Meaning").count(), 0);
        assert!(p.text.ends_with("\nAn illustration of"));
        assert!(build_completion_prompt("").is_err());
    }

    #[test]
    fn parses_block_six() {
        let f = parse_cot_output(BLOCK6).unwrap();
        assert_eq!(f.objects, vec!["Messy bedroom", "Pig"]);
        assert_eq!(f.implicit_meaning, "dirty");
        assert_eq!(
            f.elaboration_text,
            "A bedroom with clothes & garbage everywhere with a pig in the center rooting around."
        );
    }

    #[test]
    fn tolerates_echoed_labels_and_trailing_examples() {
        let raw = format!(
            "\n  Objects to be included: {BLOCK6}\n\n7. Metaphor: Time is a thief\nObjects to be included: Clock"
        );
        let f = parse_cot_output(&raw).unwrap();
        assert_eq!(f, parse_cot_output(BLOCK6).unwrap());
        let raw = format!("{BLOCK6}\n7. Metaphor: Time is a thief");
        assert_eq!(
            parse_cot_output(&raw).unwrap().elaboration_text,
            parse_cot_output(BLOCK6).unwrap().elaboration_text
        );
    }

    #[test]
    fn missing_labels_are_named() {
        let err = parse_cot_output("Messy bedroom, Pig\nImplicit Meaning: dirty\n").unwrap_err();
        assert!(matches!(err, Error::Parse("Visual elaboration")));
        assert!(matches!(parse_cot_output("Pig\nVisual elaboration: x"), Err(Error::Parse("Implicit Meaning"))));
        assert!(matches!(
            parse_cot_output(" , \nImplicit Meaning: dirty\nVisual elaboration: x"),
            Err(Error::Parse("Objects to be included"))
        ));
    }

    #[test]
    fn image_prompt_prefixing() {
        assert_eq!(
            build_image_prompt("A heart with a prickly thorn coming out of the center").unwrap(),
            "An illustration of a heart with a prickly thorn coming out of the center"
        );
        let done = "An illustration of a boiling pot of water";
        assert_eq!(build_image_prompt(done).unwrap(), done);
        assert_eq!(build_image_prompt("an ILLUSTRATION of x").unwrap(), "an ILLUSTRATION of x");
        assert!(build_image_prompt(" ").is_err());
    }

    #[test]
    fn completion_continuation_wrapped() {
        assert_eq!(
            parse_completion_output(" a messy bedroom with a pig.\n\n7. Metaphor: x").unwrap(),
            "An illustration of a messy bedroom with a pig."
        );
        assert!(parse_completion_output("  \n").is_err());
    }
}
