use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on edit suggestions per image.
pub const MAX_INSTRUCTIONS: usize = 5;

/// Edit count attributed to a Lost Cause verdict.
pub const LOST_CAUSE_EDITS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Ranking,
    Pairwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentItem {
    pub item_id: String,
    /// system id → image reference
    pub images: BTreeMap<String, String>,
}

/// A frozen evaluation design: systems, items and raters never change after creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub id: String,
    pub kind: ExperimentKind,
    pub systems: Vec<String>,
    pub items: Vec<ExperimentItem>,
    pub raters: Vec<String>,
    pub shuffle_seed: u64,
    #[serde(default = "default_open")]
    pub open: bool,
}

fn default_open() -> bool {
    true
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        let k = self.systems.len();
        if k < 2 {
            return Err(Error::Validation(format!("experiment needs at least 2 systems, got {k}")));
        }
        if self.kind == ExperimentKind::Pairwise && k != 2 {
            return Err(Error::Validation(format!("pairwise experiment needs exactly 2 systems, got {k}")));
        }
        let systems: BTreeSet<&String> = self.systems.iter().collect();
        if systems.len() != k {
            return Err(Error::Validation("duplicate system id".into()));
        }
        if self.raters.is_empty() {
            return Err(Error::Validation("experiment has no raters".into()));
        }
        if self.raters.iter().collect::<BTreeSet<_>>().len() != self.raters.len() {
            return Err(Error::Validation("duplicate rater id".into()));
        }
        let mut seen = BTreeSet::new();
        for item in &self.items {
            if !seen.insert(&item.item_id) {
                return Err(Error::Validation(format!("duplicate item `{}`", item.item_id)));
            }
            if item.images.keys().collect::<BTreeSet<_>>() != systems {
                return Err(Error::Validation(format!(
                    "item `{}` must map every system to exactly one image",
                    item.item_id
                )));
            }
        }
        Ok(())
    }

    pub fn item(&self, item_id: &str) -> Result<&ExperimentItem> {
        self.items.iter().find(|i| i.item_id == item_id).ok_or_else(|| Error::not_found("item", item_id))
    }

    pub fn has_rater(&self, rater_id: &str) -> bool {
        self.raters.iter().any(|r| r == rater_id)
    }

    fn check_submission(&self, kind: ExperimentKind, rater_id: &str, item_id: &str) -> Result<()> {
        if !self.open {
            return Err(Error::Validation(format!("experiment `{}` is closed", self.id)));
        }
        if self.kind != kind {
            return Err(Error::Validation(format!("experiment `{}` is not a {kind:?} experiment", self.id)));
        }
        if !self.has_rater(rater_id) {
            return Err(Error::Validation(format!("rater `{rater_id}` is not listed on `{}`", self.id)));
        }
        self.item(item_id).map(|_| ())
    }

    pub fn validate_ranking(&self, ann: &RankingAnnotation) -> Result<()> {
        self.check_submission(ExperimentKind::Ranking, &ann.rater_id, &ann.item_id)?;
        let k = self.systems.len();
        let keys: BTreeSet<&String> = ann.ranks.keys().collect();
        if keys != self.systems.iter().collect() {
            return Err(Error::Validation("ranks must cover every system exactly once".into()));
        }
        let values: BTreeSet<u32> = ann.ranks.values().copied().collect();
        if values.len() != k || values.iter().any(|&r| r < 1 || r as usize > k) {
            return Err(Error::Validation(format!("ranks are not a permutation of 1..{k}")));
        }
        if ann.verdicts.keys().collect::<BTreeSet<_>>() != keys {
            return Err(Error::Validation("every system needs a verdict".into()));
        }
        ann.verdicts.values().try_for_each(ImageVerdict::validate)
    }

    pub fn validate_pairwise(&self, ann: &PairwiseAnnotation) -> Result<()> {
        self.check_submission(ExperimentKind::Pairwise, &ann.rater_id, &ann.item_id)?;
        ann.verdict_a.validate()?;
        ann.verdict_b.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Perfect,
    LostCause,
    NeedsEdits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditAction {
    AddObject,
    RemoveObject,
    MoveObject,
    ReplaceObject,
    ChangeProperty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditInstruction {
    pub action: EditAction,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageVerdict {
    pub kind: VerdictKind,
    #[serde(default)]
    pub instructions: Vec<EditInstruction>,
}

impl ImageVerdict {
    pub fn perfect() -> Self {
        ImageVerdict { kind: VerdictKind::Perfect, instructions: Vec::new() }
    }

    pub fn lost_cause() -> Self {
        ImageVerdict { kind: VerdictKind::LostCause, instructions: Vec::new() }
    }

    pub fn needs_edits(instructions: Vec<EditInstruction>) -> Self {
        ImageVerdict { kind: VerdictKind::NeedsEdits, instructions }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            VerdictKind::Perfect | VerdictKind::LostCause if !self.instructions.is_empty() => {
                Err(Error::Validation(format!("{:?} verdict must not carry edit instructions", self.kind)))
            }
            VerdictKind::NeedsEdits if self.instructions.is_empty() => {
                Err(Error::Validation("NeedsEdits verdict requires at least one instruction".into()))
            }
            VerdictKind::NeedsEdits if self.instructions.len() > MAX_INSTRUCTIONS => Err(Error::Validation(format!(
                "{} instructions given, at most {MAX_INSTRUCTIONS} allowed",
                self.instructions.len()
            ))),
            _ if self.instructions.iter().any(|i| i.text.trim().is_empty()) => {
                Err(Error::Validation("edit instruction text is empty".into()))
            }
            _ => Ok(()),
        }
    }

    /// Perfect counts as 0 edits, Lost Cause as 5, otherwise the instruction count.
    pub fn edit_count(&self) -> usize {
        match self.kind {
            VerdictKind::Perfect => 0,
            VerdictKind::LostCause => LOST_CAUSE_EDITS,
            VerdictKind::NeedsEdits => self.instructions.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingAnnotation {
    pub experiment_id: String,
    pub rater_id: String,
    pub item_id: String,
    pub ranks: BTreeMap<String, u32>,
    pub verdicts: BTreeMap<String, ImageVerdict>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    PreferA,
    PreferB,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseAnnotation {
    pub experiment_id: String,
    pub item_id: String,
    pub rater_id: String,
    pub verdict: Preference,
    pub verdict_a: ImageVerdict,
    pub verdict_b: ImageVerdict,
}

/// Latest submission for one (rater, item), with superseded ones kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSlot<A> {
    pub current: A,
    pub version: u64,
    pub history: Vec<A>,
}

impl<A> AnnotationSlot<A> {
    pub fn new(current: A) -> Self {
        AnnotationSlot { current, version: 1, history: Vec::new() }
    }

    pub fn replace(&mut self, next: A, expected: Option<u64>, id: &str) -> Result<()> {
        if let Some(v) = expected {
            if v != self.version {
                return Err(Error::Conflict { id: id.to_owned(), expected: v, actual: self.version });
            }
        }
        let prev = std::mem::replace(&mut self.current, next);
        self.history.push(prev);
        self.version += 1;
        Ok(())
    }
}

type Slots<A> = BTreeMap<String, BTreeMap<String, AnnotationSlot<A>>>;

/// An experiment with its submissions keyed by rater then item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentState {
    pub experiment: Experiment,
    #[serde(default)]
    pub rankings: Slots<RankingAnnotation>,
    #[serde(default)]
    pub pairwise: Slots<PairwiseAnnotation>,
}

impl ExperimentState {
    pub fn new(experiment: Experiment) -> Self {
        ExperimentState { experiment, rankings: BTreeMap::new(), pairwise: BTreeMap::new() }
    }

    pub fn ranking_annotations(&self) -> Vec<RankingAnnotation> {
        self.rankings.values().flat_map(|m| m.values()).map(|s| s.current.clone()).collect()
    }

    pub fn pairwise_annotations(&self) -> Vec<PairwiseAnnotation> {
        self.pairwise.values().flat_map(|m| m.values()).map(|s| s.current.clone()).collect()
    }

    /// Stores a validated ranking; returns the slot version.
    pub fn submit_ranking(&mut self, ann: RankingAnnotation, expected: Option<u64>) -> Result<u64> {
        self.experiment.validate_ranking(&ann)?;
        upsert(&mut self.rankings, ann.rater_id.clone(), ann.item_id.clone(), ann, expected)
    }

    pub fn submit_pairwise(&mut self, ann: PairwiseAnnotation, expected: Option<u64>) -> Result<u64> {
        self.experiment.validate_pairwise(&ann)?;
        upsert(&mut self.pairwise, ann.rater_id.clone(), ann.item_id.clone(), ann, expected)
    }
}

fn upsert<A>(slots: &mut Slots<A>, rater: String, item: String, ann: A, expected: Option<u64>) -> Result<u64> {
    let id = format!("{rater}/{item}");
    let by_item = slots.entry(rater).or_default();
    match by_item.get_mut(&item) {
        Some(slot) => {
            slot.replace(ann, expected, &id)?;
            Ok(slot.version)
        }
        None => {
            if let Some(v) = expected.filter(|&v| v != 0) {
                return Err(Error::Conflict { id, expected: v, actual: 0 });
            }
            by_item.insert(item, AnnotationSlot::new(ann));
            Ok(1)
        }
    }
}
