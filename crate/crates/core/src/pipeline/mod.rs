//! Human-in-the-loop curation: screening, elaboration, validation, imaging, filtering.

mod workflow;

use std::sync::atomic::{AtomicUsize, Ordering};

use parking_lot::Mutex;
use serde::Serialize;

pub use workflow::{HistoryEntry, WorkflowEvent, WorkflowRecord, WorkflowState};

use crate::dataset::{
    FilterStatus, GeneratedImage, GenerationParams, Groundedness, LinguisticMetaphor, MetaphorId, PromptStrategy,
    Provenance, Store, StoreData, VisualElaboration,
};
use crate::error::{Error, Result};
use crate::gateway::{ElaborationDraft, Gateway, ImageFetch};
use crate::num::Scalar;
use crate::prompt::build_image_prompt;

fn illegal(state: WorkflowState, action: &str) -> Error {
    Error::IllegalTransition { from: state.to_string(), event: action.to_owned() }
}

fn require_state(data: &StoreData, id: &MetaphorId, state: WorkflowState, action: &str) -> Result<()> {
    let current = data.metaphor(id)?.state();
    if current != state {
        return Err(illegal(current, action));
    }
    Ok(())
}

/// Records the visual-groundedness verdict for a sourced metaphor.
pub fn screen_groundedness(
    store: &Store,
    metaphor_id: &MetaphorId,
    verdict: Groundedness,
    actor: &str,
    expected_version: Option<u64>,
) -> Result<WorkflowRecord> {
    let event = match verdict {
        Groundedness::Visual => WorkflowEvent::ScreenVisual,
        Groundedness::NonVisual => WorkflowEvent::ScreenNonVisual,
        Groundedness::Pending => {
            return Err(Error::InvalidInput("screening verdict must be visual or non_visual".into()))
        }
    };
    store.write(|data| {
        let rec = data.metaphor_mut(metaphor_id)?;
        rec.workflow.check_version(expected_version)?;
        rec.workflow.record(event, actor, Store::now(), None)?;
        rec.metaphor.groundedness = verdict;
        Ok(rec.workflow.clone())
    })
}

/// Attaches a model elaboration to a screened metaphor.
pub fn add_elaboration(
    store: &Store,
    metaphor_id: &MetaphorId,
    draft: ElaborationDraft,
    actor: &str,
) -> Result<VisualElaboration> {
    store.write(|data| {
        let rec = data.metaphor_mut(metaphor_id)?;
        rec.workflow.state.apply(WorkflowEvent::Elaborate)?;
        let elaboration = VisualElaboration {
            id: rec.next_elaboration_id(),
            metaphor_id: metaphor_id.clone(),
            objects: draft.fields.objects,
            implicit_meaning: draft.fields.implicit_meaning,
            elaboration_text: draft.fields.elaboration_text,
            edited: false,
            original_text: None,
            generation_params: draft.params,
            prompt_strategy: draft.strategy,
            validated_by: None,
            provenance: Provenance::Generated,
        };
        elaboration.check()?;
        let detail = format!("{} via {} ({} attempts)", elaboration.id, draft.generator_id, draft.attempts);
        rec.workflow.record(WorkflowEvent::Elaborate, actor, Store::now(), Some(detail))?;
        rec.elaboration_ids.push(elaboration.id.clone());
        data.elaborations.insert(elaboration.id.clone(), elaboration.clone());
        Ok(elaboration)
    })
}

/// Prompts the text model for one screened metaphor and stores the result.
pub fn elaborate(
    store: &Store,
    gateway: &Gateway,
    metaphor_id: &MetaphorId,
    strategy: PromptStrategy,
    params: &GenerationParams,
    actor: &str,
) -> Result<VisualElaboration> {
    let text = store.read(|d| {
        require_state(d, metaphor_id, WorkflowState::ScreenedVisual, "elaborate")?;
        Ok::<_, Error>(d.metaphor(metaphor_id)?.metaphor.text.clone())
    })?;
    let draft = gateway.generate_elaboration(&text, strategy, params)?;
    add_elaboration(store, metaphor_id, draft, actor)
}

/// Expert sign-off on the current elaboration, optionally with an edit.
pub fn validate_elaboration(
    store: &Store,
    elaboration_id: &str,
    edited_text: Option<&str>,
    actor: &str,
    expected_version: Option<u64>,
) -> Result<VisualElaboration> {
    if let Some(t) = edited_text {
        if t.trim().is_empty() {
            return Err(Error::Validation("invalid edit: edited text is empty".into()));
        }
    }
    store.write(|data| {
        let mut elab = data.elaboration(elaboration_id)?.clone();
        let rec = data.metaphor_mut(&elab.metaphor_id)?;
        rec.workflow.check_version(expected_version)?;
        if rec.current_elaboration_id() != Some(elaboration_id) {
            return Err(Error::Validation(format!("`{elaboration_id}` is not the current elaboration")));
        }
        rec.workflow.state.apply(WorkflowEvent::Validate)?;
        match edited_text.map(str::trim) {
            Some(t) if t != elab.elaboration_text => {
                elab.original_text = Some(std::mem::replace(&mut elab.elaboration_text, t.to_owned()));
                elab.edited = true;
            }
            _ => {}
        }
        elab.validated_by = Some(actor.to_owned());
        elab.check()?;
        let detail = elab.edited.then(|| "edited".to_owned());
        rec.workflow.record(WorkflowEvent::Validate, actor, Store::now(), detail)?;
        data.elaborations.insert(elab.id.clone(), elab.clone());
        Ok(elab)
    })
}

/// Images added to a metaphor by one generation request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageBatch {
    pub metaphor_id: MetaphorId,
    pub images: Vec<GeneratedImage>,
    /// Requested minus received.
    pub shortfall: usize,
    pub version: u64,
}

fn attach_images(
    store: &Store,
    metaphor_id: &MetaphorId,
    fetch: ImageFetch,
    event: WorkflowEvent,
    actor: &str,
) -> Result<ImageBatch> {
    store.write(|data| {
        let elaboration_id = {
            let rec = data.metaphor(metaphor_id)?;
            rec.workflow.state.apply(event)?;
            rec.current_elaboration_id().ok_or_else(|| Error::Validation("no elaboration".into()))?.to_owned()
        };
        let rec = data.metaphor_mut(metaphor_id)?;
        let images: Vec<GeneratedImage> = fetch
            .blobs
            .iter()
            .enumerate()
            .map(|(offset, (image_ref, format))| GeneratedImage {
                id: rec.next_image_id(offset),
                metaphor_id: metaphor_id.clone(),
                elaboration_id: elaboration_id.clone(),
                prompt_text: fetch.prompt.clone(),
                image_ref: image_ref.clone(),
                format: *format,
                generator_id: fetch.generator_id.clone(),
                filter_status: FilterStatus::Pending,
                decided_by: None,
            })
            .collect();
        let detail = format!("{} images via {}", images.len(), fetch.generator_id);
        rec.workflow.record(event, actor, Store::now(), Some(detail))?;
        rec.image_ids.extend(images.iter().map(|i| i.id.clone()));
        let version = rec.workflow.version;
        for img in &images {
            data.images.insert(img.id.clone(), img.clone());
        }
        Ok(ImageBatch { metaphor_id: metaphor_id.clone(), shortfall: fetch.shortfall(), images, version })
    })
}

fn image_prompt_for(store: &Store, metaphor_id: &MetaphorId, state: WorkflowState, action: &str) -> Result<String> {
    store.read(|d| {
        require_state(d, metaphor_id, state, action)?;
        let rec = d.metaphor(metaphor_id)?;
        let elab = d.current_elaboration(rec).ok_or_else(|| Error::Validation("no elaboration".into()))?;
        build_image_prompt(&elab.elaboration_text)
    })
}

/// First image batch for a validated elaboration.
pub fn generate_images(store: &Store, gateway: &Gateway, metaphor_id: &MetaphorId, actor: &str) -> Result<ImageBatch> {
    let prompt = image_prompt_for(store, metaphor_id, WorkflowState::Validated, "generate_images")?;
    let fetch = gateway.fetch_images(store.blobs(), &prompt)?;
    attach_images(store, metaphor_id, fetch, WorkflowEvent::GenerateImages, actor)
}

/// Human-requested extra batch; earlier images are kept.
pub fn request_regeneration(
    store: &Store,
    gateway: &Gateway,
    metaphor_id: &MetaphorId,
    actor: &str,
) -> Result<ImageBatch> {
    let prompt = image_prompt_for(store, metaphor_id, WorkflowState::Imaged, "regenerate")?;
    let fetch = gateway.fetch_images(store.blobs(), &prompt)?;
    attach_images(store, metaphor_id, fetch, WorkflowEvent::Regenerate, actor)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageDecision {
    pub image: GeneratedImage,
    pub state: WorkflowState,
    pub version: u64,
}

/// Expert accept/reject. Once every image of the metaphor is decided the record
/// is published (at least one accepted) or abandoned.
pub fn decide_image(
    store: &Store,
    image_id: &str,
    decision: FilterStatus,
    actor: &str,
    expected_version: Option<u64>,
) -> Result<ImageDecision> {
    if decision == FilterStatus::Pending {
        return Err(Error::InvalidInput("decision must be accepted or rejected".into()));
    }
    store.write(|data| {
        let image = data.image(image_id)?.clone();
        let rec = data.metaphor(&image.metaphor_id)?;
        rec.workflow.check_version(expected_version)?;
        if image.filter_status == decision {
            return Ok(ImageDecision { image, state: rec.state(), version: rec.workflow.version });
        }
        if image.filter_status != FilterStatus::Pending {
            return Err(Error::AlreadyDecided(image_id.to_owned()));
        }
        if rec.state() != WorkflowState::Imaged {
            return Err(illegal(rec.state(), "decide_image"));
        }
        let mut statuses: Vec<FilterStatus> = data.images_of(rec).map(|i| i.filter_status).collect();
        let pos = rec.image_ids.iter().position(|id| id == image_id).expect("image belongs to its metaphor");
        statuses[pos] = decision;
        let outcome = if statuses.iter().all(|s| *s != FilterStatus::Pending) {
            Some(if statuses.contains(&FilterStatus::Accepted) {
                WorkflowEvent::Publish
            } else {
                WorkflowEvent::Abandon
            })
        } else {
            None
        };

        let img = data.images.get_mut(image_id).expect("checked above");
        img.filter_status = decision;
        img.decided_by = Some(actor.to_owned());
        let image = img.clone();
        let rec = data.metaphor_mut(&image.metaphor_id)?;
        match outcome {
            Some(ev) => rec.workflow.record(ev, actor, Store::now(), None)?,
            None => rec.workflow.touch(),
        }
        Ok(ImageDecision { image, state: rec.state(), version: rec.workflow.version })
    })
}

/// Share of validated elaborations that carry an expert edit.
pub fn edit_rate<T: Scalar>(data: &StoreData) -> Result<T> {
    let validated: Vec<&VisualElaboration> = data.elaborations.values().filter(|e| e.validated_by.is_some()).collect();
    if validated.is_empty() {
        return Err(Error::UndefinedMetric("edit rate with no validated elaborations".into()));
    }
    Ok(T::ratio(validated.iter().filter(|e| e.edited).count(), validated.len()))
}

/// Global scan for records breaking workflow invariants; empty when sound.
pub fn invariant_violations(data: &StoreData) -> Vec<String> {
    let mut out = Vec::new();
    for rec in data.metaphors.values() {
        let id = &rec.metaphor.id;
        match WorkflowRecord::replay(&rec.workflow.history) {
            Ok(s) if s == rec.state() => {}
            Ok(s) => out.push(format!("{id}: history replays to {s}, record says {}", rec.state())),
            Err(e) => out.push(format!("{id}: history does not replay: {e}")),
        }
        if (rec.workflow.version as usize) < rec.workflow.history.len() {
            out.push(format!("{id}: version behind history"));
        }
        if rec.state() == WorkflowState::Published {
            let validated = data.current_elaboration(rec).is_some_and(|e| e.validated_by.is_some());
            let accepted = data.images_of(rec).any(|i| i.filter_status == FilterStatus::Accepted);
            if !validated {
                out.push(format!("{id}: published without a validated elaboration"));
            }
            if !accepted {
                out.push(format!("{id}: published without an accepted image"));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum BatchStage {
    Elaborate { strategy: PromptStrategy, params: GenerationParams },
    Imagine,
}

impl BatchStage {
    fn source_state(&self) -> WorkflowState {
        match self {
            BatchStage::Elaborate { .. } => WorkflowState::ScreenedVisual,
            BatchStage::Imagine => WorkflowState::Validated,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            BatchStage::Elaborate { .. } => "elaborate",
            BatchStage::Imagine => "imagine",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchFailure {
    pub metaphor_id: MetaphorId,
    pub code: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchReport {
    pub stage: String,
    pub selected: usize,
    pub succeeded: Vec<MetaphorId>,
    pub failed: Vec<BatchFailure>,
    /// Total images missing across successful image requests.
    pub image_shortfall: usize,
}

/// Advances up to `limit` records through one model-driven stage, in metaphor id
/// order, with at most `gateway.parallelism()` requests in flight. A failing record
/// is reported and left in its state; the rest of the batch continues.
pub fn run_batch(store: &Store, gateway: &Gateway, stage: &BatchStage, limit: usize, actor: &str) -> BatchReport {
    let ids: Vec<MetaphorId> =
        store.read(|d| d.in_state(stage.source_state()).take(limit).map(|r| r.metaphor.id.clone()).collect());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<usize>)>> = Mutex::new(Vec::with_capacity(ids.len()));
    let workers = gateway.parallelism().min(ids.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(id) = ids.get(i) else { break };
                let outcome = match stage {
                    BatchStage::Elaborate { strategy, params } => {
                        elaborate(store, gateway, id, *strategy, params, actor).map(|_| 0)
                    }
                    BatchStage::Imagine => generate_images(store, gateway, id, actor).map(|b| b.shortfall),
                };
                results.lock().push((i, outcome));
            });
        }
    });
    let mut results = results.into_inner();
    results.sort_by_key(|(i, _)| *i);
    let mut report = BatchReport {
        stage: stage.name().to_owned(),
        selected: ids.len(),
        succeeded: Vec::new(),
        failed: Vec::new(),
        image_shortfall: 0,
    };
    for (i, outcome) in results {
        match outcome {
            Ok(shortfall) => {
                report.succeeded.push(ids[i].clone());
                report.image_shortfall += shortfall;
            }
            Err(e) => report.failed.push(BatchFailure {
                metaphor_id: ids[i].clone(),
                code: e.code().to_owned(),
                error: e.to_string(),
            }),
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreeningTask {
    pub metaphor: LinguisticMetaphor,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationTask {
    pub metaphor_id: MetaphorId,
    pub metaphor: String,
    pub elaboration: VisualElaboration,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageTask {
    pub metaphor_id: MetaphorId,
    pub metaphor: String,
    pub elaboration_text: String,
    pub image: GeneratedImage,
    pub version: u64,
}

/// Metaphors awaiting a groundedness verdict.
pub fn screening_queue(data: &StoreData) -> Vec<ScreeningTask> {
    data.in_state(WorkflowState::Sourced)
        .map(|r| ScreeningTask { metaphor: r.metaphor.clone(), version: r.workflow.version })
        .collect()
}

/// Elaborations awaiting expert validation.
pub fn validation_queue(data: &StoreData) -> Vec<ValidationTask> {
    data.in_state(WorkflowState::Elaborated)
        .filter_map(|r| {
            Some(ValidationTask {
                metaphor_id: r.metaphor.id.clone(),
                metaphor: r.metaphor.text.clone(),
                elaboration: data.current_elaboration(r)?.clone(),
                version: r.workflow.version,
            })
        })
        .collect()
}

/// Pending images on imaged metaphors.
pub fn image_queue(data: &StoreData) -> Vec<ImageTask> {
    data.in_state(WorkflowState::Imaged)
        .flat_map(|r| {
            let text = data.current_elaboration(r).map(|e| e.elaboration_text.clone()).unwrap_or_default();
            data.images_of(r).filter(|i| i.filter_status == FilterStatus::Pending).map(move |i| ImageTask {
                metaphor_id: r.metaphor.id.clone(),
                metaphor: r.metaphor.text.clone(),
                elaboration_text: text.clone(),
                image: i.clone(),
                version: r.workflow.version,
            })
        })
        .collect()
}
