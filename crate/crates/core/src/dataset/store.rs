use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::dataset::export::{ExportError, ExportRecord};
use crate::dataset::{
    BlobStore, DatasetStats, FilterStatus, GeneratedImage, GenerationParams, Groundedness, ImageFormat,
    LinguisticMetaphor, MetaphorId, PromptStrategy, Provenance, SourceCorpus, VisualElaboration,
};
use crate::error::{Error, Result};
use crate::eval::ExperimentState;
use crate::pipeline::{WorkflowEvent, WorkflowRecord, WorkflowState};
use crate::prompt::build_image_prompt;
use crate::recast::{EntailmentPair, SplitAssignment};

const RECORDS_FILE: &str = "records.json";
const BLOB_DIR: &str = "blobs";
pub(crate) const IMPORT_ACTOR: &str = "import";

/// A metaphor together with its workflow and owned child records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaphorRecord {
    pub metaphor: LinguisticMetaphor,
    pub workflow: WorkflowRecord,
    /// Oldest first; the last one is current.
    pub elaboration_ids: Vec<String>,
    pub image_ids: Vec<String>,
    #[serde(default)]
    pub pair_count: usize,
}

impl MetaphorRecord {
    pub fn new(metaphor: LinguisticMetaphor) -> Self {
        MetaphorRecord {
            workflow: WorkflowRecord::new(metaphor.id.clone()),
            metaphor,
            elaboration_ids: Vec::new(),
            image_ids: Vec::new(),
            pair_count: 0,
        }
    }

    pub fn state(&self) -> WorkflowState {
        self.workflow.state
    }

    pub fn current_elaboration_id(&self) -> Option<&str> {
        self.elaboration_ids.last().map(String::as_str)
    }

    pub(crate) fn next_elaboration_id(&self) -> String {
        format!("{}-e{:03}", self.metaphor.id, self.elaboration_ids.len() + 1)
    }

    pub(crate) fn next_image_id(&self, offset: usize) -> String {
        format!("{}-i{:04}", self.metaphor.id, self.image_ids.len() + offset + 1)
    }

    pub(crate) fn next_pair_id(&mut self) -> String {
        self.pair_count += 1;
        format!("{}-p{:03}", self.metaphor.id, self.pair_count)
    }
}

/// Everything the store persists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreData {
    pub metaphors: BTreeMap<MetaphorId, MetaphorRecord>,
    pub elaborations: BTreeMap<String, VisualElaboration>,
    pub images: BTreeMap<String, GeneratedImage>,
    #[serde(default)]
    pub experiments: BTreeMap<String, ExperimentState>,
    #[serde(default)]
    pub pairs: BTreeMap<String, EntailmentPair>,
    #[serde(default)]
    pub split: Option<SplitAssignment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordFilter {
    pub published_only: bool,
    pub source: Option<SourceCorpus>,
}

impl RecordFilter {
    pub fn published() -> Self {
        RecordFilter { published_only: true, source: None }
    }

    pub fn all() -> Self {
        RecordFilter { published_only: false, source: None }
    }

    pub fn matches(&self, rec: &MetaphorRecord) -> bool {
        (!self.published_only || rec.state() == WorkflowState::Published)
            && self.source.is_none_or(|s| s == rec.metaphor.source_corpus)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub inserted: usize,
    pub duplicates: usize,
    /// (input position, reason)
    pub rejected: Vec<(usize, String)>,
}

impl StoreData {
    pub fn metaphor(&self, id: &MetaphorId) -> Result<&MetaphorRecord> {
        self.metaphors.get(id).ok_or_else(|| Error::not_found("metaphor", id.as_str()))
    }

    pub(crate) fn metaphor_mut(&mut self, id: &MetaphorId) -> Result<&mut MetaphorRecord> {
        self.metaphors.get_mut(id).ok_or_else(|| Error::not_found("metaphor", id.as_str()))
    }

    pub fn elaboration(&self, id: &str) -> Result<&VisualElaboration> {
        self.elaborations.get(id).ok_or_else(|| Error::not_found("elaboration", id))
    }

    pub fn image(&self, id: &str) -> Result<&GeneratedImage> {
        self.images.get(id).ok_or_else(|| Error::not_found("image", id))
    }

    pub fn experiment(&self, id: &str) -> Result<&ExperimentState> {
        self.experiments.get(id).ok_or_else(|| Error::not_found("experiment", id))
    }

    pub fn pair(&self, id: &str) -> Result<&EntailmentPair> {
        self.pairs.get(id).ok_or_else(|| Error::not_found("entailment pair", id))
    }

    pub fn images_of<'a>(&'a self, rec: &'a MetaphorRecord) -> impl Iterator<Item = &'a GeneratedImage> + 'a {
        rec.image_ids.iter().filter_map(|id| self.images.get(id))
    }

    pub fn current_elaboration(&self, rec: &MetaphorRecord) -> Option<&VisualElaboration> {
        rec.current_elaboration_id().and_then(|id| self.elaborations.get(id))
    }

    pub fn in_state(&self, state: WorkflowState) -> impl Iterator<Item = &MetaphorRecord> {
        self.metaphors.values().filter(move |r| r.state() == state)
    }

    pub fn dataset_stats(&self, filter: &RecordFilter) -> DatasetStats {
        let mut n_metaphors = 0;
        let mut n_images = 0;
        for rec in self.metaphors.values().filter(|r| filter.matches(r)) {
            n_metaphors += 1;
            n_images += self
                .images_of(rec)
                .filter(|i| !filter.published_only || i.filter_status == FilterStatus::Accepted)
                .count();
        }
        DatasetStats::from_counts(n_metaphors, n_images)
    }

    fn ingest_one(&mut self, text: &str, source: SourceCorpus, now: DateTime<Utc>) -> Result<bool> {
        let metaphor = LinguisticMetaphor::new(text, source, now)?;
        if self.metaphors.contains_key(&metaphor.id) {
            return Ok(false);
        }
        self.metaphors.insert(metaphor.id.clone(), MetaphorRecord::new(metaphor));
        Ok(true)
    }
}

/// Single-file record store plus a content-addressed blob directory.
///
/// Readers run concurrently; writers are serialized and every successful write is
/// flushed to `records.json` before the lock is released.
#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    blobs: BlobStore,
    data: RwLock<StoreData>,
}

impl Store {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let blobs = BlobStore::open(dir.join(BLOB_DIR))?;
        let path = dir.join(RECORDS_FILE);
        let data = if path.exists() {
            serde_json::from_reader(std::io::BufReader::new(fs::File::open(&path)?))?
        } else {
            StoreData::default()
        };
        Ok(Store { dir, blobs, data: RwLock::new(data) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.blobs
    }

    pub fn read<R>(&self, f: impl FnOnce(&StoreData) -> R) -> R {
        f(&self.data.read())
    }

    pub fn snapshot(&self) -> StoreData {
        self.data.read().clone()
    }

    /// Runs a mutation under the write lock and persists on success.
    ///
    /// `f` must validate before it mutates: an `Err` is expected to leave the data untouched.
    pub(crate) fn write<R>(&self, f: impl FnOnce(&mut StoreData) -> Result<R>) -> Result<R> {
        let mut guard = self.data.write();
        let out = f(&mut guard)?;
        self.persist(&guard)?;
        Ok(out)
    }

    fn persist(&self, data: &StoreData) -> Result<()> {
        let tmp = self.dir.join(format!(".{RECORDS_FILE}.tmp"));
        {
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            serde_json::to_writer(&mut w, data)?;
            w.flush()?;
        }
        fs::rename(&tmp, self.dir.join(RECORDS_FILE))?;
        Ok(())
    }

    pub(crate) fn now() -> DateTime<Utc> {
        Utc::now()
    }

    /// Inserts one record per new normalized text; the first-seen source wins.
    pub fn ingest_metaphors(&self, records: &[(String, SourceCorpus)]) -> Result<IngestReport> {
        let now = Self::now();
        self.write(|data| {
            let mut report = IngestReport::default();
            for (pos, (text, source)) in records.iter().enumerate() {
                match data.ingest_one(text, *source, now) {
                    Ok(true) => report.inserted += 1,
                    Ok(false) => report.duplicates += 1,
                    Err(e) => report.rejected.push((pos, e.to_string())),
                }
            }
            Ok(report)
        })
    }

    pub fn dataset_stats(&self, filter: &RecordFilter) -> DatasetStats {
        self.read(|d| d.dataset_stats(filter))
    }

    pub fn metaphor(&self, id: &MetaphorId) -> Result<MetaphorRecord> {
        self.read(|d| d.metaphor(id).cloned())
    }

    pub fn elaboration(&self, id: &str) -> Result<VisualElaboration> {
        self.read(|d| d.elaboration(id).cloned())
    }

    pub fn image(&self, id: &str) -> Result<GeneratedImage> {
        self.read(|d| d.image(id).cloned())
    }

    /// One JSON line per matching metaphor, ordered by metaphor id.
    pub fn export_jsonl<W: Write>(&self, mut out: W, filter: &RecordFilter) -> Result<usize, ExportError> {
        let records = self.read(|d| ExportRecord::collect(d, filter));
        let mut written = 0;
        for rec in &records {
            let mut line = serde_json::to_vec(rec).map_err(|e| ExportError::new(written, e.into()))?;
            line.push(b'\n');
            out.write_all(&line).map_err(|e| ExportError::new(written, e))?;
            written += 1;
        }
        out.flush().map_err(|e| ExportError::new(written, e))?;
        Ok(written)
    }

    /// Re-ingests an export. Image files are looked up in this store's blob directory,
    /// then copied from `blob_source` when given.
    pub fn import_jsonl<R: BufRead>(&self, input: R, blob_source: Option<&Path>) -> Result<IngestReport> {
        let now = Self::now();
        let mut parsed = Vec::new();
        let mut report = IngestReport::default();
        for (pos, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<ExportRecord>(&line) {
                Ok(rec) => parsed.push((pos, rec)),
                Err(e) => report.rejected.push((pos, e.to_string())),
            }
        }
        // blobs first, outside the lock
        let mut ready = Vec::new();
        for (pos, rec) in parsed {
            let missing = rec.images.iter().find(|img| match blob_source {
                Some(src) => self.blobs.import_from(src, &img.file).is_err(),
                None => !self.blobs.verify(&img.file),
            });
            match missing {
                Some(img) => report.rejected.push((pos, format!("image file `{}` missing or corrupt", img.file))),
                None => ready.push((pos, rec)),
            }
        }
        self.write(|data| {
            for (pos, rec) in ready {
                match import_record(data, rec, now) {
                    Ok(true) => report.inserted += 1,
                    Ok(false) => report.duplicates += 1,
                    Err(e) => report.rejected.push((pos, e.to_string())),
                }
            }
            Ok(report)
        })
    }

    /// Workflow history of every metaphor as JSON lines, ordered by metaphor id then time.
    pub fn export_audit_log<W: Write>(&self, mut out: W) -> Result<usize> {
        #[derive(Serialize)]
        struct AuditLine<'a> {
            metaphor_id: &'a MetaphorId,
            event: crate::pipeline::WorkflowEvent,
            actor: &'a str,
            at: &'a DateTime<Utc>,
            #[serde(skip_serializing_if = "Option::is_none")]
            detail: Option<&'a str>,
        }
        let data = self.data.read();
        let mut n = 0;
        for rec in data.metaphors.values() {
            for h in &rec.workflow.history {
                let line = AuditLine {
                    metaphor_id: &rec.metaphor.id,
                    event: h.event,
                    actor: &h.actor,
                    at: &h.at,
                    detail: h.detail.as_deref(),
                };
                serde_json::to_writer(&mut out, &line)?;
                out.write_all(b"\n")?;
                n += 1;
            }
        }
        Ok(n)
    }
}

fn import_record(data: &mut StoreData, rec: ExportRecord, now: DateTime<Utc>) -> Result<bool> {
    let mut metaphor = LinguisticMetaphor::new(&rec.metaphor, rec.source, now)?;
    if metaphor.id.as_str() != rec.id {
        return Err(Error::Validation(format!(
            "id `{}` does not match metaphor text (expected `{}`)",
            rec.id, metaphor.id
        )));
    }
    if data.metaphors.contains_key(&metaphor.id) {
        return Ok(false);
    }
    let statuses: Vec<FilterStatus> = rec.images.iter().map(|i| i.status.parse()).collect::<Result<_>>()?;

    let elaboration = if rec.visual_elaboration.is_empty() {
        None
    } else {
        Some(VisualElaboration {
            id: String::new(),
            metaphor_id: metaphor.id.clone(),
            objects: rec.objects,
            implicit_meaning: rec.implicit_meaning,
            elaboration_text: rec.visual_elaboration,
            edited: rec.elaboration_edited,
            original_text: None,
            generation_params: GenerationParams::default(),
            prompt_strategy: rec.prompt_strategy.parse::<PromptStrategy>()?,
            validated_by: Some(IMPORT_ACTOR.into()),
            provenance: Provenance::Imported,
        })
    };
    if let Some(e) = &elaboration {
        e.check()?;
    } else if !statuses.is_empty() {
        return Err(Error::Validation("images listed without an elaboration".into()));
    }

    let mut events = Vec::new();
    if elaboration.is_some() {
        events.extend([WorkflowEvent::ScreenVisual, WorkflowEvent::Elaborate, WorkflowEvent::Validate]);
        if !statuses.is_empty() {
            events.push(WorkflowEvent::GenerateImages);
            if statuses.iter().all(|s| *s != FilterStatus::Pending) {
                let accepted = statuses.contains(&FilterStatus::Accepted);
                events.push(if accepted { WorkflowEvent::Publish } else { WorkflowEvent::Abandon });
            }
        }
        metaphor.groundedness = Groundedness::Visual;
    }

    let mut record = MetaphorRecord::new(metaphor);
    for ev in events {
        record.workflow.record(ev, IMPORT_ACTOR, now, None)?;
    }
    if let Some(mut e) = elaboration {
        e.id = record.next_elaboration_id();
        let prompt_text = build_image_prompt(&e.elaboration_text)?;
        let mut new_ids = Vec::new();
        for (offset, (img, status)) in rec.images.iter().zip(&statuses).enumerate() {
            let id = record.next_image_id(offset);
            data.images.insert(
                id.clone(),
                GeneratedImage {
                    id: id.clone(),
                    metaphor_id: record.metaphor.id.clone(),
                    elaboration_id: e.id.clone(),
                    prompt_text: prompt_text.clone(),
                    image_ref: img.file.clone(),
                    format: ImageFormat::from_image_ref(&img.file),
                    generator_id: IMPORT_ACTOR.into(),
                    filter_status: *status,
                    decided_by: (*status != FilterStatus::Pending).then(|| IMPORT_ACTOR.to_owned()),
                },
            );
            new_ids.push(id);
        }
        record.image_ids.extend(new_ids);
        record.elaboration_ids.push(e.id.clone());
        data.elaborations.insert(e.id.clone(), e);
    }
    data.metaphors.insert(record.metaphor.id.clone(), record);
    Ok(true)
}
