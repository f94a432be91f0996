//! Human-in-the-loop curation of visual-metaphor datasets.
//!
//! The crate is organised around the life of a linguistic metaphor:
//!
//! * [`dataset`] holds the domain records, the on-disk store and JSONL export.
//! * [`prompt`] builds the few-shot prompts and parses model continuations.
//! * [`gateway`] talks to text and image generation backends (or offline stubs).
//! * [`pipeline`] is the screening → elaboration → validation → imaging →
//!   filtering state machine.
//! * [`eval`] runs blinded ranking / pairwise experiments and computes their
//!   aggregate metrics and agreement statistics.
//! * [`recast`] builds visual-entailment data from the curated records.
//!
//! Aggregate metrics are generic over [`Scalar`], so they can be evaluated in
//! floating point ([`Real`]) or exactly ([`Exact`]).

pub mod dataset;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod num;
pub mod pipeline;
pub mod prompt;
pub mod recast;

pub use error::{Error, Result};
pub use num::Scalar;

/// Floating-point scalar used for reported metrics.
pub type Real = f64;

/// Exact rational scalar used for reproducible recounts.
pub type Exact = num_rational::Ratio<i64>;

pub type RankingReport = eval::RankingMetrics<Real>;
pub type PreferenceReport = eval::PreferenceProportions<Real>;
