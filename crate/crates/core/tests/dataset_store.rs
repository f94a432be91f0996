mod common;

use std::collections::BTreeSet;

use common::{fresh_store, scripted_store};
use vizmet_core::dataset::{normalize_text, DatasetStats, MetaphorId, RecordFilter, SourceCorpus, Store};
use vizmet_core::pipeline::invariant_violations;

fn recs(items: &[(&str, SourceCorpus)]) -> Vec<(String, SourceCorpus)> {
    items.iter().map(|(t, s)| (t.to_string(), *s)).collect()
}

#[test]
fn ingest_examples() {
    let (_d, store) = fresh_store();
    let r = store.ingest_metaphors(&[]).unwrap();
    assert_eq!((r.inserted, r.duplicates), (0, 0));

    let r = store
        .ingest_metaphors(&recs(&[
            ("My lawyer is a shark.", SourceCorpus::Flute),
            ("my lawyer is a shark.", SourceCorpus::FigQa),
        ]))
        .unwrap();
    assert_eq!((r.inserted, r.duplicates), (1, 1));
    let rec = store.metaphor(&MetaphorId::from_text("My lawyer is a shark.")).unwrap();
    assert_eq!(rec.metaphor.source_corpus, SourceCorpus::Flute);
}

#[test]
fn ingest_dedup_matches_brute_force_set() {
    let batch = recs(&[
        ("Time is a thief", SourceCorpus::Flute),
        ("Her voice is music", SourceCorpus::CoPoet),
        ("TIME   is a thief", SourceCorpus::FigQa),
        ("The classroom was a zoo", SourceCorpus::Advertisements),
        ("her voice is  MUSIC", SourceCorpus::Flute),
    ]);
    let (_d, store) = fresh_store();
    let r = store.ingest_metaphors(&batch).unwrap();
    let distinct: BTreeSet<String> = batch.iter().map(|(t, _)| normalize_text(t)).collect();
    assert_eq!(r.inserted, distinct.len());
    assert_eq!(r.duplicates, batch.len() - distinct.len());
    assert_eq!((r.inserted, r.duplicates), (3, 2));
}

#[test]
fn empty_text_rejected_per_record() {
    let (_d, store) = fresh_store();
    let r = store
        .ingest_metaphors(&recs(&[("  ", SourceCorpus::Flute), ("Life is a journey", SourceCorpus::Flute)]))
        .unwrap();
    assert_eq!(r.inserted, 1);
    assert_eq!(r.rejected.len(), 1);
    assert_eq!(r.rejected[0].0, 0);
}

#[test]
fn ingestion_is_idempotent() {
    let batch = recs(&[("Time is a thief", SourceCorpus::Flute), ("Life is a journey", SourceCorpus::CoPoet)]);
    let (_d, store) = fresh_store();
    store.ingest_metaphors(&batch).unwrap();
    let before = store.snapshot();
    let again = store.ingest_metaphors(&batch).unwrap();
    assert_eq!((again.inserted, again.duplicates), (0, 2));
    assert_eq!(store.snapshot(), before);
}

#[test]
fn store_persists_across_reopen() {
    let (dir, store) = scripted_store(5, 1);
    let before = store.snapshot();
    drop(store);
    let reopened = Store::open(dir.path()).unwrap();
    assert_eq!(reopened.snapshot(), before);
}

#[test]
fn empty_store_stats_and_export() {
    let (_d, store) = fresh_store();
    assert_eq!(store.dataset_stats(&RecordFilter::published()), DatasetStats::from_counts(0, 0));
    let mut out = Vec::new();
    assert_eq!(store.export_jsonl(&mut out, &RecordFilter::published()).unwrap(), 0);
    assert!(out.is_empty());
}

#[test]
fn stats_arithmetic() {
    let s = DatasetStats::from_counts(3, 10);
    assert_eq!((s.n_metaphors, s.n_images), (3, 10));
    assert!((s.avg_images_per_metaphor - 10.0 / 3.0).abs() < 1e-12);
}

fn recount(jsonl: &[u8]) -> (usize, usize) {
    let text = std::str::from_utf8(jsonl).unwrap();
    let mut metaphors = 0;
    let mut images = 0;
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        metaphors += 1;
        images += v["images"].as_array().unwrap().iter().filter(|i| i["status"] == "accepted").count();
    }
    (metaphors, images)
}

#[test]
fn export_schema_order_and_stats_recount() {
    let (_d, store) = scripted_store(30, 4);
    assert!(store.read(invariant_violations).is_empty());
    let mut out = Vec::new();
    let n = store.export_jsonl(&mut out, &RecordFilter::published()).unwrap();
    let stats = store.dataset_stats(&RecordFilter::published());
    assert_eq!(n, stats.n_metaphors);
    assert_eq!(recount(&out), (stats.n_metaphors, stats.n_images));

    let first = std::str::from_utf8(&out).unwrap().lines().next().unwrap();
    let keys = [
        "\"id\"",
        "\"metaphor\"",
        "\"source\"",
        "\"objects\"",
        "\"implicit_meaning\"",
        "\"visual_elaboration\"",
        "\"elaboration_edited\"",
        "\"prompt_strategy\"",
        "\"images\"",
    ];
    let positions: Vec<usize> = keys.iter().map(|k| first.find(k).unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "{first}");

    let ids: Vec<String> = std::str::from_utf8(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["id"].as_str().unwrap().to_owned())
        .collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[test]
fn export_reimport_export_is_byte_identical() {
    let (src_dir, store) = scripted_store(20, 9);
    let mut first = Vec::new();
    store.export_jsonl(&mut first, &RecordFilter::published()).unwrap();

    let (_d2, copy) = fresh_store();
    let report = copy.import_jsonl(first.as_slice(), Some(&src_dir.path().join("blobs"))).unwrap();
    assert!(report.rejected.is_empty(), "{:?}", report.rejected);
    let mut second = Vec::new();
    copy.export_jsonl(&mut second, &RecordFilter::published()).unwrap();
    assert_eq!(first, second);
    assert!(copy.read(invariant_violations).is_empty());

    let again = copy.import_jsonl(first.as_slice(), None).unwrap();
    assert_eq!(again.duplicates, report.inserted);
}

#[test]
fn stored_blobs_are_content_addressed() {
    let (_d, store) = scripted_store(5, 2);
    let refs: Vec<String> = store.read(|d| d.images.values().map(|i| i.image_ref.clone()).collect());
    assert!(!refs.is_empty());
    for r in refs {
        assert!(store.blobs().verify(&r), "{r}");
    }
}

#[test]
fn failing_writer_reports_partial_export() {
    struct Failing(usize);
    impl std::io::Write for Failing {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            if self.0 == 0 {
                return Err(std::io::Error::other("disk full"));
            }
            self.0 -= 1;
            Ok(buf.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }
    let (_d, store) = scripted_store(6, 3);
    let err = store.export_jsonl(Failing(2), &RecordFilter::all()).unwrap_err();
    assert!(err.partial);
    let err = store.export_jsonl(Failing(0), &RecordFilter::all()).unwrap_err();
    assert!(!err.partial);
}
