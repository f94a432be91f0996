//! Visual-entailment data: recasting paraphrase rankings, authored hypotheses,
//! label collection, leak-free splits and export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{FilterStatus, MetaphorId, Store, StoreData};
use crate::error::{Error, Result};
use crate::eval::{majority_vote, VoteLabel};
use crate::num::Scalar;

/// Labels required before gold can be finalized.
pub const MIN_GOLD_LABELS: usize = 3;

/// Paraphrase score meaning "exact paraphrase".
pub const EXACT_PARAPHRASE_SCORE: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Contradiction,
    Neutral,
}

impl VoteLabel for NliLabel {}

impl FromStr for NliLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "e" | "entailment" => Ok(NliLabel::Entailment),
            "c" | "contradiction" => Ok(NliLabel::Contradiction),
            "n" | "neutral" => Ok(NliLabel::Neutral),
            other => Err(Error::InvalidInput(format!("unknown entailment label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraseCandidate {
    pub sentence: String,
    pub score: u8,
}

/// A metaphor with four scored literal paraphrase candidates (4 = exact paraphrase).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraseItem {
    pub metaphor: String,
    pub candidates: Vec<ParaphraseCandidate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairOrigin {
    Recast,
    Authored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatus {
    Open,
    Resolved,
    /// No strict majority; never exported.
    Unresolved,
}

/// A pair before it is stored and given an id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairDraft {
    pub metaphor_id: MetaphorId,
    pub hypothesis: String,
    pub suggested: Option<NliLabel>,
    pub authored: Option<NliLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntailmentPair {
    pub id: String,
    pub metaphor_id: MetaphorId,
    pub hypothesis: String,
    pub rater_labels: BTreeMap<String, NliLabel>,
    /// Authored label until finalized, then the strict majority.
    pub gold: Option<NliLabel>,
    /// UI hint only.
    pub suggested: Option<NliLabel>,
    pub origin: PairOrigin,
    pub status: PairStatus,
}

impl EntailmentPair {
    fn from_draft(id: String, d: PairDraft) -> Self {
        EntailmentPair {
            id,
            metaphor_id: d.metaphor_id,
            hypothesis: d.hypothesis,
            rater_labels: BTreeMap::new(),
            gold: d.authored,
            suggested: d.suggested,
            origin: if d.authored.is_some() { PairOrigin::Authored } else { PairOrigin::Recast },
            status: PairStatus::Open,
        }
    }

    pub fn collect_label(&mut self, rater_id: &str, label: NliLabel) -> Result<()> {
        if self.status != PairStatus::Open {
            return Err(Error::Validation(format!("pair `{}` is already finalized", self.id)));
        }
        if rater_id.trim().is_empty() {
            return Err(Error::InvalidInput("rater id is empty".into()));
        }
        self.rater_labels.insert(rater_id.to_owned(), label);
        Ok(())
    }

    pub fn finalize_gold(&mut self) -> Result<()> {
        let labels: Vec<NliLabel> = self.rater_labels.values().copied().collect();
        if labels.len() < MIN_GOLD_LABELS {
            return Err(Error::InsufficientLabels { id: self.id.clone(), have: labels.len(), need: MIN_GOLD_LABELS });
        }
        match majority_vote(&labels) {
            Ok(gold) => {
                self.gold = Some(gold);
                self.status = PairStatus::Resolved;
            }
            Err(Error::NoMajority(_)) => {
                self.gold = None;
                self.status = PairStatus::Unresolved;
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }

    /// Resolved pairs carry exactly the strict majority of their labels.
    pub fn gold_is_sound(&self) -> bool {
        match self.status {
            PairStatus::Resolved => {
                let labels: Vec<NliLabel> = self.rater_labels.values().copied().collect();
                majority_vote(&labels).ok() == self.gold && self.gold.is_some()
            }
            PairStatus::Unresolved => self.gold.is_none(),
            PairStatus::Open => true,
        }
    }
}

/// One pair per candidate; an exact-paraphrase score suggests Entailment.
pub fn recast_paraphrase_item(item: &ParaphraseItem) -> Result<Vec<PairDraft>> {
    if item.candidates.len() != 4 {
        return Err(Error::InvalidInput(format!("expected 4 candidates, got {}", item.candidates.len())));
    }
    if item.metaphor.trim().is_empty() {
        return Err(Error::InvalidInput("metaphor text is empty".into()));
    }
    let metaphor_id = MetaphorId::from_text(&item.metaphor);
    item.candidates
        .iter()
        .map(|c| {
            if !(1..=4).contains(&c.score) {
                return Err(Error::InvalidInput(format!("paraphrase score {} outside 1..4", c.score)));
            }
            if c.sentence.trim().is_empty() {
                return Err(Error::InvalidInput("candidate sentence is empty".into()));
            }
            Ok(PairDraft {
                metaphor_id: metaphor_id.clone(),
                hypothesis: c.sentence.trim().to_owned(),
                suggested: (c.score == EXACT_PARAPHRASE_SCORE).then_some(NliLabel::Entailment),
                authored: None,
            })
        })
        .collect()
}

/// Three authored hypotheses, one per label.
pub fn author_hypotheses(metaphor_id: &MetaphorId, hypotheses: &[(String, NliLabel)]) -> Result<Vec<PairDraft>> {
    if hypotheses.len() != 3 {
        return Err(Error::Validation(format!("expected 3 hypotheses, got {}", hypotheses.len())));
    }
    let labels: BTreeSet<NliLabel> = hypotheses.iter().map(|(_, l)| *l).collect();
    if labels.len() != 3 {
        return Err(Error::Validation(
            "hypothesis labels must be one each of entailment, contradiction, neutral".into(),
        ));
    }
    hypotheses
        .iter()
        .map(|(text, label)| {
            if text.trim().is_empty() {
                return Err(Error::Validation("hypothesis text is empty".into()));
            }
            Ok(PairDraft {
                metaphor_id: metaphor_id.clone(),
                hypothesis: text.trim().to_owned(),
                suggested: None,
                authored: Some(*label),
            })
        })
        .collect()
}

/// For every rater pair, the fraction of items they labelled identically; averaged over rater pairs.
pub fn mean_pairwise_agreement<T: Scalar>(pairs: &[EntailmentPair]) -> Result<T> {
    let Some(first) = pairs.first() else {
        return Err(Error::InvalidInput("agreement over no pairs".into()));
    };
    let raters: Vec<&String> = first.rater_labels.keys().collect();
    if raters.len() < 2 {
        return Err(Error::InvalidInput("agreement needs at least 2 raters".into()));
    }
    if let Some(p) = pairs.iter().find(|p| p.rater_labels.keys().ne(raters.iter().copied())) {
        return Err(Error::InvalidInput(format!("pair `{}` is labelled by a different rater set", p.id)));
    }
    let mut per_pair = Vec::new();
    for i in 0..raters.len() {
        for j in i + 1..raters.len() {
            let same = pairs.iter().filter(|p| p.rater_labels[raters[i]] == p.rater_labels[raters[j]]).count();
            per_pair.push(T::ratio(same, pairs.len()));
        }
    }
    Ok(T::mean(per_pair).expect("at least one rater pair"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" | "val" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub sizes: (usize, usize, usize),
    pub assignments: BTreeMap<MetaphorId, Split>,
}

impl SplitAssignment {
    pub fn split_of(&self, id: &MetaphorId) -> Option<Split> {
        self.assignments.get(id).copied()
    }

    pub fn members(&self, split: Split) -> impl Iterator<Item = &MetaphorId> {
        self.assignments.iter().filter(move |(_, s)| **s == split).map(|(id, _)| id)
    }
}

/// Seeded uniform shuffle of the (sorted) ids, then sliced into train/dev/test.
pub fn split_dataset(ids: &[MetaphorId], sizes: (usize, usize, usize), seed: u64) -> Result<SplitAssignment> {
    let (train, dev, test) = sizes;
    let mut sorted: Vec<&MetaphorId> = ids.iter().collect();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != ids.len() {
        return Err(Error::InvalidInput("duplicate metaphor ids".into()));
    }
    if train + dev + test != ids.len() {
        return Err(Error::InvalidInput(format!(
            "split sizes {train}+{dev}+{test} do not sum to {} metaphors",
            ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let assignments = sorted
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < train {
                Split::Train
            } else if i < train + dev {
                Split::Dev
            } else {
                Split::Test
            };
            (id.clone(), split)
        })
        .collect();
    Ok(SplitAssignment { seed, sizes, assignments })
}

/// One line of the visual-entailment export. Field order is the wire order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VeRecord {
    pub image: String,
    pub hypothesis: String,
    pub label: NliLabel,
    pub split: Split,
    pub metaphor_id: MetaphorId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VeExportReport {
    pub split: Option<Split>,
    pub seed: u64,
    pub records: usize,
    pub unresolved_excluded: usize,
    pub open_excluded: usize,
    /// Metaphors in the split with no accepted image.
    pub without_images: Vec<MetaphorId>,
}

/// Accepted images × resolved pairs for every metaphor of `split`, ordered by metaphor,
/// image, then pair.
pub fn export_ve(data: &StoreData, split: Split) -> Result<(Vec<VeRecord>, VeExportReport)> {
    let assignment =
        data.split.as_ref().ok_or_else(|| Error::InvalidInput("no split assignment; run the split first".into()))?;
    let mut pairs_by_metaphor: BTreeMap<&MetaphorId, Vec<&EntailmentPair>> = BTreeMap::new();
    for p in data.pairs.values() {
        pairs_by_metaphor.entry(&p.metaphor_id).or_default().push(p);
    }
    let mut report = VeExportReport { split: Some(split), seed: assignment.seed, ..Default::default() };
    let mut out = Vec::new();
    for id in assignment.members(split) {
        let images: Vec<&str> = match data.metaphors.get(id) {
            Some(rec) => data
                .images_of(rec)
                .filter(|i| i.filter_status == FilterStatus::Accepted)
                .map(|i| i.image_ref.as_str())
                .collect(),
            None => Vec::new(),
        };
        if images.is_empty() {
            report.without_images.push(id.clone());
        }
        let pairs = pairs_by_metaphor.get(id).map(Vec::as_slice).unwrap_or_default();
        let mut resolved = Vec::new();
        for p in pairs {
            match (p.status, p.gold) {
                (PairStatus::Resolved, Some(gold)) => resolved.push((p, gold)),
                (PairStatus::Unresolved, _) => report.unresolved_excluded += 1,
                _ => report.open_excluded += 1,
            }
        }
        for image in &images {
            for (p, gold) in &resolved {
                out.push(VeRecord {
                    image: (*image).to_owned(),
                    hypothesis: p.hypothesis.clone(),
                    label: *gold,
                    split,
                    metaphor_id: id.clone(),
                });
            }
        }
    }
    report.records = out.len();
    Ok((out, report))
}

pub fn write_ve_jsonl<W: Write>(mut out: W, records: &[VeRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

// Store-backed operations.

pub fn add_pairs(store: &Store, drafts: Vec<PairDraft>) -> Result<Vec<EntailmentPair>> {
    store.write(|data| {
        for d in &drafts {
            data.metaphor(&d.metaphor_id)?;
        }
        let mut created = Vec::with_capacity(drafts.len());
        for d in drafts {
            let id = data.metaphor_mut(&d.metaphor_id)?.next_pair_id();
            let pair = EntailmentPair::from_draft(id.clone(), d);
            data.pairs.insert(id, pair.clone());
            created.push(pair);
        }
        Ok(created)
    })
}

pub fn collect_label(store: &Store, pair_id: &str, rater_id: &str, label: NliLabel) -> Result<EntailmentPair> {
    store.write(|data| {
        let pair = data.pairs.get_mut(pair_id).ok_or_else(|| Error::not_found("entailment pair", pair_id))?;
        pair.collect_label(rater_id, label)?;
        Ok(pair.clone())
    })
}

pub fn finalize_gold(store: &Store, pair_id: &str) -> Result<EntailmentPair> {
    store.write(|data| {
        let pair = data.pairs.get_mut(pair_id).ok_or_else(|| Error::not_found("entailment pair", pair_id))?;
        pair.finalize_gold()?;
        Ok(pair.clone())
    })
}

/// Splits every metaphor that has at least one entailment pair and records the assignment.
pub fn assign_splits(store: &Store, sizes: (usize, usize, usize), seed: u64) -> Result<SplitAssignment> {
    store.write(|data| {
        let ids: Vec<MetaphorId> =
            data.pairs.values().map(|p| p.metaphor_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let assignment = split_dataset(&ids, sizes, seed)?;
        data.split = Some(assignment.clone());
        Ok(assignment)
    })
}
