//! Aggregates over ranking and pairwise judgments.
//!
//! Every per-system rate is computed over individual (rater, item) judgments,
//! not over per-item majorities.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{
    fleiss_kappa, majority_vote, Experiment, ImageVerdict, PairwiseAnnotation, Preference, RankingAnnotation,
    VerdictKind,
};
use crate::num::Scalar;

fn undefined(what: &str, system: &str) -> Error {
    Error::UndefinedMetric(format!("no annotations cover system `{system}` for {what}"))
}

fn verdicts_for<'a>(anns: &'a [RankingAnnotation], system: &'a str) -> impl Iterator<Item = &'a ImageVerdict> {
    anns.iter().filter_map(move |a| a.verdicts.get(system))
}

fn rate_of<'a, T: Scalar>(verdicts: impl Iterator<Item = &'a ImageVerdict>, kind: VerdictKind) -> Option<T> {
    let (mut hits, mut n) = (0, 0);
    for v in verdicts {
        n += 1;
        hits += usize::from(v.kind == kind);
    }
    (n > 0).then(|| T::ratio(hits, n))
}

pub fn average_rank<T: Scalar>(anns: &[RankingAnnotation], system: &str) -> Result<T> {
    T::mean(anns.iter().filter_map(|a| a.ranks.get(system)).map(|&r| T::from_count(r as usize)))
        .ok_or_else(|| undefined("average rank", system))
}

pub fn lost_cause_rate<T: Scalar>(anns: &[RankingAnnotation], system: &str) -> Result<T> {
    rate_of(verdicts_for(anns, system), VerdictKind::LostCause).ok_or_else(|| undefined("lost cause rate", system))
}

pub fn perfect_rate<T: Scalar>(anns: &[RankingAnnotation], system: &str) -> Result<T> {
    rate_of(verdicts_for(anns, system), VerdictKind::Perfect).ok_or_else(|| undefined("perfect rate", system))
}

pub fn avg_instruction_count<T: Scalar>(anns: &[RankingAnnotation], system: &str) -> Result<T> {
    T::mean(verdicts_for(anns, system).map(|v| T::from_count(v.edit_count())))
        .ok_or_else(|| undefined("instruction count", system))
}

/// Fraction of judgments giving each system rank 1.
pub fn rank1_distribution<T: Scalar>(anns: &[RankingAnnotation], systems: &[String]) -> Result<BTreeMap<String, T>> {
    if anns.is_empty() {
        return Err(Error::UndefinedMetric("rank-1 distribution over no annotations".into()));
    }
    let mut firsts: BTreeMap<&str, usize> = systems.iter().map(|s| (s.as_str(), 0)).collect();
    for a in anns {
        for (s, _) in a.ranks.iter().filter(|(_, &r)| r == 1) {
            *firsts.entry(s.as_str()).or_default() += 1;
        }
    }
    Ok(firsts.into_iter().map(|(s, c)| (s.to_owned(), T::ratio(c, anns.len()))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemMetrics<T> {
    pub system: String,
    pub average_rank: T,
    pub lost_cause_rate: T,
    pub perfect_rate: T,
    pub avg_instruction_count: T,
    pub rank1_fraction: T,
}

/// One row per system, in experiment order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingMetrics<T> {
    pub experiment_id: String,
    pub n_annotations: usize,
    pub systems: Vec<SystemMetrics<T>>,
}

impl<T: Scalar> RankingMetrics<T> {
    pub fn compute(experiment: &Experiment, anns: &[RankingAnnotation]) -> Result<Self> {
        let mut rank1 = rank1_distribution::<T>(anns, &experiment.systems)?;
        let systems = experiment
            .systems
            .iter()
            .map(|s| {
                Ok(SystemMetrics {
                    system: s.clone(),
                    average_rank: average_rank(anns, s)?,
                    lost_cause_rate: lost_cause_rate(anns, s)?,
                    perfect_rate: perfect_rate(anns, s)?,
                    avg_instruction_count: avg_instruction_count(anns, s)?,
                    rank1_fraction: rank1.remove(s).unwrap_or_else(T::zero),
                })
            })
            .collect::<Result<_>>()?;
        Ok(RankingMetrics { experiment_id: experiment.id.clone(), n_annotations: anns.len(), systems })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreferenceProportions<T> {
    pub prefer_a: T,
    pub prefer_b: T,
    pub tie: T,
    pub n_items: usize,
}

fn labels_by_item<'a>(
    anns: &'a [PairwiseAnnotation],
    raters: &[String],
    items: &[String],
) -> Result<BTreeMap<&'a str, Vec<Preference>>> {
    let listed: BTreeSet<&str> = raters.iter().map(String::as_str).collect();
    let mut by_item: BTreeMap<&str, BTreeMap<&str, Preference>> = BTreeMap::new();
    for a in anns.iter().filter(|a| listed.contains(a.rater_id.as_str())) {
        by_item.entry(a.item_id.as_str()).or_default().insert(a.rater_id.as_str(), a.verdict);
    }
    let missing: Vec<(String, String)> = items
        .iter()
        .flat_map(|i| raters.iter().map(move |r| (r, i)))
        .filter(|(r, i)| by_item.get(i.as_str()).is_none_or(|m| !m.contains_key(r.as_str())))
        .map(|(r, i)| (r.clone(), i.clone()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteData(missing));
    }
    let wanted: BTreeSet<&str> = items.iter().map(String::as_str).collect();
    Ok(by_item.into_iter().filter(|(i, _)| wanted.contains(i)).map(|(i, m)| (i, m.into_values().collect())).collect())
}

/// Majority preference per item, then the share of items won by A, by B, or tied.
pub fn preference_proportions<T: Scalar>(
    anns: &[PairwiseAnnotation],
    raters: &[String],
    items: &[String],
) -> Result<PreferenceProportions<T>> {
    if items.is_empty() {
        return Err(Error::UndefinedMetric("preference proportions over no items".into()));
    }
    let by_item = labels_by_item(anns, raters, items)?;
    let (mut a, mut b, mut tie) = (0, 0, 0);
    for labels in by_item.values() {
        match majority_vote(labels)? {
            Preference::PreferA => a += 1,
            Preference::PreferB => b += 1,
            Preference::Tie => tie += 1,
        }
    }
    let n = by_item.len();
    Ok(PreferenceProportions { prefer_a: T::ratio(a, n), prefer_b: T::ratio(b, n), tie: T::ratio(tie, n), n_items: n })
}

/// Fleiss' kappa over the three-way preference votes.
pub fn preference_fleiss_kappa<T: Scalar>(
    anns: &[PairwiseAnnotation],
    raters: &[String],
    items: &[String],
) -> Result<T> {
    let by_item = labels_by_item(anns, raters, items)?;
    let counts: Vec<Vec<usize>> = by_item
        .values()
        .map(|labels| {
            [Preference::PreferA, Preference::PreferB, Preference::Tie]
                .iter()
                .map(|p| labels.iter().filter(|l| *l == p).count())
                .collect()
        })
        .collect();
    fleiss_kappa(&counts, raters.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{EditAction, EditInstruction};
    use crate::Exact;

    fn ann(rater: &str, item: &str, ranks: &[(&str, u32)], verdict: ImageVerdict) -> RankingAnnotation {
        RankingAnnotation {
            experiment_id: "e".into(),
            rater_id: rater.into(),
            item_id: item.into(),
            ranks: ranks.iter().map(|(s, r)| (s.to_string(), *r)).collect(),
            verdicts: ranks.iter().map(|(s, _)| (s.to_string(), verdict.clone())).collect(),
        }
    }

    #[test]
    fn average_rank_cases() {
        let one = [ann("r1", "i", &[("A", 2), ("B", 1)], ImageVerdict::perfect())];
        assert_eq!(average_rank::<f64>(&one, "A").unwrap(), 2.0);
        let two = [
            ann("r1", "i", &[("A", 1), ("B", 3), ("C", 2)], ImageVerdict::perfect()),
            ann("r2", "i", &[("A", 3), ("B", 1), ("C", 2)], ImageVerdict::perfect()),
        ];
        assert_eq!(average_rank::<f64>(&two, "A").unwrap(), 2.0);
        assert!(matches!(average_rank::<f64>(&two, "Z"), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn instruction_mapping() {
        let edits = ImageVerdict::needs_edits(vec![
            EditInstruction { action: EditAction::AddObject, text: "add a moon".into() },
            EditInstruction { action: EditAction::MoveObject, text: "move the pig".into() },
        ]);
        let anns = [
            ann("r1", "i", &[("A", 1), ("B", 2)], ImageVerdict::perfect()),
            ann("r2", "i", &[("A", 1), ("B", 2)], ImageVerdict::lost_cause()),
            ann("r3", "i", &[("A", 1), ("B", 2)], edits),
        ];
        assert_eq!(avg_instruction_count::<Exact>(&anns, "A").unwrap(), Exact::new(7, 3));
        assert_eq!(lost_cause_rate::<Exact>(&anns, "A").unwrap(), Exact::new(1, 3));
        assert_eq!(perfect_rate::<Exact>(&anns, "B").unwrap(), Exact::new(1, 3));
        let rank1 = rank1_distribution::<Exact>(&anns, &["A".into(), "B".into()]).unwrap();
        assert_eq!(rank1["A"], Exact::from_integer(1));
        assert_eq!(rank1["B"], Exact::from_integer(0));
    }

    fn pw(rater: &str, item: &str, v: Preference) -> PairwiseAnnotation {
        PairwiseAnnotation {
            experiment_id: "e".into(),
            item_id: item.into(),
            rater_id: rater.into(),
            verdict: v,
            verdict_a: ImageVerdict::perfect(),
            verdict_b: ImageVerdict::perfect(),
        }
    }

    #[test]
    fn single_item_preference() {
        let raters: Vec<String> = vec!["r1".into(), "r2".into(), "r3".into()];
        let anns = [
            pw("r1", "i", Preference::PreferA),
            pw("r2", "i", Preference::PreferA),
            pw("r3", "i", Preference::PreferB),
        ];
        let p = preference_proportions::<Exact>(&anns, &raters, &["i".into()]).unwrap();
        assert_eq!(
            (p.prefer_a, p.prefer_b, p.tie),
            (Exact::from_integer(1), Exact::from_integer(0), Exact::from_integer(0))
        );
    }

    #[test]
    fn missing_rater_reported() {
        let raters: Vec<String> = vec!["r1".into(), "r2".into()];
        let anns = [pw("r1", "i", Preference::PreferA)];
        match preference_proportions::<f64>(&anns, &raters, &["i".into()]) {
            Err(Error::IncompleteData(missing)) => assert_eq!(missing, vec![("r2".to_string(), "i".to_string())]),
            other => panic!("{other:?}"),
        }
    }
}
