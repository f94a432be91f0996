use serde::Serialize;

use crate::dataset::Store;
use crate::error::{Error, Result};
use crate::eval::{
    preference_fleiss_kappa, preference_proportions, Experiment, ExperimentKind, ExperimentState, PairwiseAnnotation,
    PreferenceProportions, RankingAnnotation, RankingMetrics,
};
use crate::Real;

/// Aggregate view of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentReport {
    Ranking(RankingMetrics<Real>),
    Pairwise { experiment_id: String, proportions: PreferenceProportions<Real>, fleiss_kappa: Real },
}

impl ExperimentReport {
    pub fn compute(state: &ExperimentState) -> Result<Self> {
        let exp = &state.experiment;
        match exp.kind {
            ExperimentKind::Ranking => {
                Ok(ExperimentReport::Ranking(RankingMetrics::compute(exp, &state.ranking_annotations())?))
            }
            ExperimentKind::Pairwise => Self::pairwise(exp, &state.pairwise_annotations()),
        }
    }

    /// Pairwise report over every listed rater and item.
    pub fn pairwise(exp: &Experiment, anns: &[PairwiseAnnotation]) -> Result<Self> {
        let items: Vec<String> = exp.items.iter().map(|i| i.item_id.clone()).collect();
        Ok(ExperimentReport::Pairwise {
            experiment_id: exp.id.clone(),
            proportions: preference_proportions(anns, &exp.raters, &items)?,
            fleiss_kappa: preference_fleiss_kappa(anns, &exp.raters, &items)?,
        })
    }
}

/// Registers a frozen experiment; ids are unique.
pub fn create_experiment(store: &Store, experiment: Experiment) -> Result<Experiment> {
    experiment.validate()?;
    store.write(|data| {
        if data.experiments.contains_key(&experiment.id) {
            return Err(Error::AlreadyExists { kind: "experiment", id: experiment.id.clone() });
        }
        data.experiments.insert(experiment.id.clone(), ExperimentState::new(experiment.clone()));
        Ok(experiment)
    })
}

pub fn list_experiments(store: &Store) -> Vec<Experiment> {
    store.read(|d| d.experiments.values().map(|s| s.experiment.clone()).collect())
}

pub fn submit_ranking(store: &Store, ann: RankingAnnotation, expected: Option<u64>) -> Result<u64> {
    store.write(|data| {
        let state = data
            .experiments
            .get_mut(&ann.experiment_id)
            .ok_or_else(|| Error::not_found("experiment", ann.experiment_id.clone()))?;
        state.submit_ranking(ann, expected)
    })
}

pub fn submit_pairwise(store: &Store, ann: PairwiseAnnotation, expected: Option<u64>) -> Result<u64> {
    store.write(|data| {
        let state = data
            .experiments
            .get_mut(&ann.experiment_id)
            .ok_or_else(|| Error::not_found("experiment", ann.experiment_id.clone()))?;
        state.submit_pairwise(ann, expected)
    })
}

/// Metrics computed on a snapshot of the experiment.
pub fn experiment_report(store: &Store, experiment_id: &str) -> Result<ExperimentReport> {
    let state = store.read(|d| d.experiment(experiment_id).cloned())?;
    ExperimentReport::compute(&state)
}
