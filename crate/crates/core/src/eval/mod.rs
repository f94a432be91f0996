//! Blinded human-evaluation experiments and their aggregate statistics.

mod agreement;
mod metrics;
mod ops;
mod presentation;
mod types;
mod vote;

pub use agreement::{cohen_kappa, cohen_kappa_mean_pairwise, fleiss_kappa};
pub use metrics::{
    average_rank, avg_instruction_count, lost_cause_rate, perfect_rate, preference_fleiss_kappa,
    preference_proportions, rank1_distribution, PreferenceProportions, RankingMetrics, SystemMetrics,
};
pub use ops::{
    create_experiment, experiment_report, list_experiments, submit_pairwise, submit_ranking, ExperimentReport,
};
pub use presentation::{presentation_order, resolve_pairwise, resolve_ranking, slot_label, BlindedSlot};
pub use types::*;
pub use vote::{majority_vote, majority_vote_with, NoMajorityRule, VoteLabel};
