#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;
use vizmet_core::dataset::{
    FilterStatus, GenerationParams, Groundedness, MetaphorId, PromptStrategy, SourceCorpus, Store,
};
use vizmet_core::gateway::Gateway;
use vizmet_core::pipeline::{decide_image, run_batch, screen_groundedness, validate_elaboration, BatchStage};

pub fn metaphor_texts(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("Idea number {i} is a lighthouse in the fog")).collect()
}

pub fn fresh_store() -> (TempDir, Store) {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    (dir, store)
}

/// Ingests `n` metaphors and walks every one to Published or Abandoned with the
/// stub gateway: seeded edits on ~29% of elaborations and rejects on ~20% of images.
pub fn scripted_store(n: usize, seed: u64) -> (TempDir, Store) {
    let (dir, store) = fresh_store();
    let recs: Vec<(String, SourceCorpus)> = metaphor_texts(n)
        .into_iter()
        .enumerate()
        .map(|(i, t)| (t, SourceCorpus::ALL[i % SourceCorpus::ALL.len()]))
        .collect();
    store.ingest_metaphors(&recs).unwrap();
    let ids: Vec<MetaphorId> = store.read(|d| d.metaphors.keys().cloned().collect());
    for id in &ids {
        screen_groundedness(&store, id, Groundedness::Visual, "expert", None).unwrap();
    }
    let gw = Gateway::stub(seed);
    let stage = BatchStage::Elaborate { strategy: PromptStrategy::CoT, params: GenerationParams::default() };
    assert!(run_batch(&store, &gw, &stage, n, "gateway").failed.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in &ids {
        let rec = store.metaphor(id).unwrap();
        let eid = rec.current_elaboration_id().unwrap().to_owned();
        let edit = rng.random_bool(0.29).then(|| format!("A lighthouse beam cutting through fog, version {}", id));
        validate_elaboration(&store, &eid, edit.as_deref(), "expert", None).unwrap();
    }
    assert!(run_batch(&store, &gw, &BatchStage::Imagine, n, "gateway").failed.is_empty());
    let image_ids: Vec<String> = store.read(|d| d.images.keys().cloned().collect());
    for iid in image_ids {
        let status = if rng.random_bool(0.2) { FilterStatus::Rejected } else { FilterStatus::Accepted };
        decide_image(&store, &iid, status, "expert", None).unwrap();
    }
    (dir, store)
}
