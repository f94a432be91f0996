use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::eval::Preference;

/// A label that can be majority-voted; label spaces with a neutral outcome expose it.
pub trait VoteLabel: Ord + Clone {
    fn tie_label() -> Option<Self> {
        None
    }
}

impl VoteLabel for Preference {
    fn tie_label() -> Option<Self> {
        Some(Preference::Tie)
    }
}

/// What to do when no label wins a strict majority.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoMajorityRule {
    ResolveToTie,
    Reject,
}

impl NoMajorityRule {
    pub fn default_for<L: VoteLabel>() -> Self {
        if L::tie_label().is_some() {
            NoMajorityRule::ResolveToTie
        } else {
            NoMajorityRule::Reject
        }
    }
}

pub fn majority_vote<L: VoteLabel>(labels: &[L]) -> Result<L> {
    majority_vote_with(labels, NoMajorityRule::default_for::<L>())
}

pub fn majority_vote_with<L: VoteLabel>(labels: &[L], rule: NoMajorityRule) -> Result<L> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("majority vote over no labels".into()));
    }
    let mut counts: BTreeMap<&L, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    if let Some((winner, _)) = counts.into_iter().find(|&(_, c)| 2 * c > labels.len()) {
        return Ok(winner.clone());
    }
    match (rule, L::tie_label()) {
        (NoMajorityRule::ResolveToTie, Some(tie)) => Ok(tie),
        _ => Err(Error::NoMajority(labels.len())),
    }
}
