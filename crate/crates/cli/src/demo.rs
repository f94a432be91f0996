//! Fully offline end-to-end run with stub backends and scripted expert decisions.

use std::collections::BTreeSet;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use vizmet_core::dataset::{
    DatasetStats, FilterStatus, GenerationParams, Groundedness, MetaphorId, PromptStrategy, RecordFilter, SourceCorpus,
    Store,
};
use vizmet_core::gateway::Gateway;
use vizmet_core::pipeline::{self, BatchStage, WorkflowState};
use vizmet_core::{Error, Result};

const TARGETS: [&str; 10] =
    ["Love", "Time", "Memory", "Grief", "Hope", "The city", "Ambition", "Silence", "My inbox", "The economy"];
const VEHICLES: [&str; 10] = [
    "a lighthouse in the fog",
    "a thief in the night",
    "a leaking boat",
    "a slow glacier",
    "a candle in the window",
    "a beehive at noon",
    "a mountain with no summit",
    "a heavy blanket",
    "a bottomless pit",
    "a house of cards",
];

pub const ACTOR: &str = "demo-expert";

#[derive(Debug, Clone, PartialEq)]
pub struct DemoOptions {
    pub seed: u64,
    pub metaphors: usize,
    /// Share of elaborations edited, in percent.
    pub edit_percent: usize,
    /// Share of images rejected, in percent.
    pub reject_percent: usize,
}

impl DemoOptions {
    pub fn new(seed: u64) -> Self {
        DemoOptions { seed, metaphors: 50, edit_percent: 29, reject_percent: 20 }
    }
}

/// Summary of a demo run. Contains nothing time- or path-dependent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoReport {
    pub seed: u64,
    pub metaphors: usize,
    pub edits: usize,
    pub images: usize,
    pub rejected: usize,
    pub published: usize,
    pub abandoned: usize,
    pub edit_rate: f64,
    pub stats: DatasetStats,
    pub export_lines: usize,
}

/// Files written by [`run`] under its output directory.
#[derive(Debug, Clone)]
pub struct DemoPaths {
    pub store: PathBuf,
    pub export: PathBuf,
    pub meta: PathBuf,
}

impl DemoPaths {
    pub fn under(out: &Path) -> Self {
        DemoPaths {
            store: out.join("store"),
            export: out.join("dataset.jsonl"),
            meta: out.join("dataset.jsonl.meta.json"),
        }
    }
}

/// `n` distinct "target is vehicle" sentences, chosen by the seed.
pub fn demo_metaphors(n: usize, seed: u64) -> Result<Vec<String>> {
    let mut all: Vec<String> =
        TARGETS.iter().flat_map(|t| VEHICLES.iter().map(move |v| format!("{t} is {v}"))).collect();
    if n > all.len() {
        return Err(Error::InvalidInput(format!("the demo corpus has {} metaphors, {n} requested", all.len())));
    }
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    all.truncate(n);
    Ok(all)
}

/// `percent` of `total`, rounded half up in integer arithmetic.
pub fn scripted_count(total: usize, percent: usize) -> usize {
    (total * percent * 2 + 100) / 200
}

/// Seeded choice of exactly `k` positions out of `total`.
fn pick(rng: &mut ChaCha8Rng, total: usize, k: usize) -> BTreeSet<usize> {
    index::sample(rng, total, k).into_iter().collect()
}

fn batch(store: &Store, gw: &Gateway, stage: &BatchStage, limit: usize) -> Result<()> {
    let report = pipeline::run_batch(store, gw, stage, limit, ACTOR);
    match report.failed.first() {
        Some(f) => Err(Error::Validation(format!("{} failed for {}: {}", report.stage, f.metaphor_id, f.error))),
        None => Ok(()),
    }
}

/// Ingest, screen, elaborate, validate, imagine and filter `opts.metaphors` records into a
/// fresh store under `out`, then export the published dataset.
pub fn run(out: &Path, opts: &DemoOptions) -> Result<DemoReport> {
    let paths = DemoPaths::under(out);
    if paths.store.exists() && fs::read_dir(&paths.store)?.next().is_some() {
        return Err(Error::InvalidInput(format!("{} already holds a store", paths.store.display())));
    }
    let store = Store::open(&paths.store)?;
    let gw = Gateway::stub(opts.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let texts = demo_metaphors(opts.metaphors, opts.seed)?;
    let rows: Vec<(String, SourceCorpus)> =
        texts.into_iter().enumerate().map(|(i, t)| (t, SourceCorpus::ALL[i % SourceCorpus::ALL.len()])).collect();
    store.ingest_metaphors(&rows)?;
    let ids: Vec<MetaphorId> = store.read(|d| d.metaphors.keys().cloned().collect());
    for id in &ids {
        pipeline::screen_groundedness(&store, id, Groundedness::Visual, ACTOR, None)?;
    }

    let elaborate = BatchStage::Elaborate { strategy: PromptStrategy::CoT, params: GenerationParams::default() };
    batch(&store, &gw, &elaborate, ids.len())?;

    let queue = store.read(pipeline::validation_queue);
    let edits = pick(&mut rng, queue.len(), scripted_count(queue.len(), opts.edit_percent));
    for (i, task) in queue.iter().enumerate() {
        let edited = edits.contains(&i).then(|| format!("Close-up view: {}", task.elaboration.elaboration_text));
        pipeline::validate_elaboration(&store, &task.elaboration.id, edited.as_deref(), ACTOR, Some(task.version))?;
    }

    batch(&store, &gw, &BatchStage::Imagine, ids.len())?;

    let images = store.read(pipeline::image_queue);
    let rejects = pick(&mut rng, images.len(), scripted_count(images.len(), opts.reject_percent));
    for (i, task) in images.iter().enumerate() {
        let status = if rejects.contains(&i) { FilterStatus::Rejected } else { FilterStatus::Accepted };
        pipeline::decide_image(&store, &task.image.id, status, ACTOR, None)?;
    }

    let violations = store.read(pipeline::invariant_violations);
    if let Some(v) = violations.first() {
        return Err(Error::Validation(format!("workflow invariant violated: {v}")));
    }

    let export_lines = store
        .export_jsonl(BufWriter::new(fs::File::create(&paths.export)?), &RecordFilter::published())
        .map_err(|e| Error::Io(e.source))?;
    let edit_rate: f64 = store.read(pipeline::edit_rate)?;
    let count = |s: WorkflowState| store.read(|d| d.in_state(s).count());
    let report = DemoReport {
        seed: opts.seed,
        metaphors: ids.len(),
        edits: edits.len(),
        images: images.len(),
        rejected: rejects.len(),
        published: count(WorkflowState::Published),
        abandoned: count(WorkflowState::Abandoned),
        edit_rate,
        stats: store.dataset_stats(&RecordFilter::published()),
        export_lines,
    };
    fs::write(&paths.meta, serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_distinct_and_seeded() {
        let a = demo_metaphors(50, 7).unwrap();
        assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), 50);
        assert_eq!(a, demo_metaphors(50, 7).unwrap());
        assert_ne!(a, demo_metaphors(50, 8).unwrap());
        assert!(demo_metaphors(101, 7).is_err());
    }

    #[test]
    fn scripted_counts_round() {
        assert_eq!(scripted_count(50, 29), 15);
        assert_eq!(scripted_count(100, 29), 29);
        assert_eq!(scripted_count(200, 20), 40);
        assert_eq!(scripted_count(0, 20), 0);
    }
}
