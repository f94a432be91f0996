use std::collections::BTreeMap;

use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, HeaderMap};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Extension, Json, Router};
use chrono::Utc;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use vizmet_core::dataset::{FilterStatus, Groundedness, MetaphorId, RecordFilter, Store};
use vizmet_core::eval::{self, BlindedSlot, ExperimentKind, ImageVerdict};
use vizmet_core::pipeline;
use vizmet_core::recast::{self, Split};

use crate::{ApiError, AppState};

type ApiResult<T> = Result<T, ApiError>;

/// Authenticated rater id, set by the auth layer.
#[derive(Debug, Clone)]
struct Rater(String);

/// JSON body whose decode failures surface as 422 with the standard error shape.
struct Body<T>(T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state).await.map(|Json(v)| Body(v)).map_err(|e| ApiError::Body(e.body_text()))
    }
}

pub fn router(state: AppState) -> Router {
    let protected = Router::new()
        .route("/stats", get(stats))
        .route("/queue/{name}", get(queue))
        .route("/metaphors/{id}/screen", post(screen))
        .route("/elaborations/{id}/validate", post(validate))
        .route("/images/{id}/decision", post(decide))
        .route("/experiments", get(experiments))
        .route("/experiments/{id}/items/{item}", get(experiment_item))
        .route("/experiments/{id}/rankings", post(rankings))
        .route("/experiments/{id}/pairwise", post(pairwise))
        .route("/experiments/{id}/metrics", get(metrics))
        .route("/export/dataset.jsonl", get(export_dataset))
        .route("/export/ve/{file}", get(export_ve))
        .layer(middleware::from_fn_with_state(state.clone(), authenticate));
    Router::new().route("/healthz", get(healthz)).merge(protected).with_state(state)
}

async fn authenticate(State(state): State<AppState>, mut req: Request, next: Next) -> Response {
    let token = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim);
    let Some(token) = token else {
        return ApiError::Unauthorized("missing bearer token".into()).into_response();
    };
    match state.tokens.authenticate(token, Utc::now()) {
        Ok(session) => {
            let rater = Rater(session.rater_id.clone());
            req.extensions_mut().insert(rater);
            next.run(req).await
        }
        Err(e) => e.into_response(),
    }
}

/// Runs a store operation off the async executor.
async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Store) -> vizmet_core::Result<T> + Send + 'static,
{
    let store = state.store.clone();
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| ApiError::Io(std::io::Error::other(e)))?
        .map_err(ApiError::from)
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Deserialize)]
struct StatsQuery {
    #[serde(default = "yes")]
    published_only: bool,
}

fn yes() -> bool {
    true
}

async fn stats(State(state): State<AppState>, Query(q): Query<StatsQuery>) -> ApiResult<impl IntoResponse> {
    let filter = if q.published_only { RecordFilter::published() } else { RecordFilter::all() };
    Ok(Json(blocking(&state, move |s| Ok(s.dataset_stats(&filter))).await?))
}

#[derive(Deserialize)]
struct Page {
    #[serde(default)]
    offset: usize,
    limit: Option<usize>,
}

#[derive(Serialize)]
struct Paged<T> {
    items: Vec<T>,
    total: usize,
}

fn page<T>(all: Vec<T>, p: &Page) -> Paged<T> {
    let total = all.len();
    let items = all.into_iter().skip(p.offset).take(p.limit.unwrap_or(usize::MAX)).collect();
    Paged { items, total }
}

async fn queue(
    State(state): State<AppState>,
    Path(name): Path<String>,
    Query(p): Query<Page>,
) -> ApiResult<impl IntoResponse> {
    let body = blocking(&state, move |s| {
        s.read(|d| match name.as_str() {
            "screening" => Ok(serde_json::to_value(page(pipeline::screening_queue(d), &p))?),
            "elaborations" => Ok(serde_json::to_value(page(pipeline::validation_queue(d), &p))?),
            "images" => Ok(serde_json::to_value(page(pipeline::image_queue(d), &p))?),
            other => Err(vizmet_core::Error::NotFound { kind: "queue", id: other.to_owned() }),
        })
    })
    .await?;
    Ok(Json(body))
}

#[derive(Deserialize)]
struct ScreenBody {
    verdict: Groundedness,
    version: Option<u64>,
}

async fn screen(
    State(state): State<AppState>,
    Extension(Rater(rater)): Extension<Rater>,
    Path(id): Path<String>,
    Body(b): Body<ScreenBody>,
) -> ApiResult<impl IntoResponse> {
    let id = MetaphorId::from(id);
    let record = blocking(&state, move |s| pipeline::screen_groundedness(s, &id, b.verdict, &rater, b.version)).await?;
    Ok(Json(record))
}

#[derive(Deserialize)]
struct ValidateBody {
    edited_text: Option<String>,
    version: Option<u64>,
}

async fn validate(
    State(state): State<AppState>,
    Extension(Rater(rater)): Extension<Rater>,
    Path(id): Path<String>,
    Body(b): Body<ValidateBody>,
) -> ApiResult<impl IntoResponse> {
    let (elaboration, version) = blocking(&state, move |s| {
        let elab = pipeline::validate_elaboration(s, &id, b.edited_text.as_deref(), &rater, b.version)?;
        let version = s.metaphor(&elab.metaphor_id)?.workflow.version;
        Ok((elab, version))
    })
    .await?;
    Ok(Json(json!({ "elaboration": elaboration, "version": version })))
}

#[derive(Deserialize)]
struct DecisionBody {
    decision: FilterStatus,
    version: Option<u64>,
}

async fn decide(
    State(state): State<AppState>,
    Extension(Rater(rater)): Extension<Rater>,
    Path(id): Path<String>,
    Body(b): Body<DecisionBody>,
) -> ApiResult<impl IntoResponse> {
    let decision = blocking(&state, move |s| pipeline::decide_image(s, &id, b.decision, &rater, b.version)).await?;
    Ok(Json(decision))
}

/// Experiment listing without system identifiers.
#[derive(Serialize)]
struct ExperimentSummary {
    id: String,
    kind: ExperimentKind,
    n_systems: usize,
    items: Vec<String>,
    raters: Vec<String>,
    open: bool,
}

async fn experiments(State(state): State<AppState>) -> ApiResult<impl IntoResponse> {
    let list = blocking(&state, |s| Ok(eval::list_experiments(s))).await?;
    let summaries: Vec<ExperimentSummary> = list
        .into_iter()
        .map(|e| ExperimentSummary {
            n_systems: e.systems.len(),
            items: e.items.iter().map(|i| i.item_id.clone()).collect(),
            id: e.id,
            kind: e.kind,
            raters: e.raters,
            open: e.open,
        })
        .collect();
    Ok(Json(summaries))
}

#[derive(Deserialize)]
struct RaterQuery {
    rater: Option<String>,
}

#[derive(Serialize)]
struct ItemView {
    experiment_id: String,
    item_id: String,
    rater_id: String,
    slots: Vec<BlindedSlot>,
    version: u64,
}

fn same_rater(authenticated: &str, requested: Option<&str>) -> ApiResult<()> {
    match requested {
        Some(r) if r != authenticated => {
            Err(ApiError::Forbidden(format!("token belongs to `{authenticated}`, not `{r}`")))
        }
        _ => Ok(()),
    }
}

async fn experiment_item(
    State(state): State<AppState>,
    Extension(Rater(rater)): Extension<Rater>,
    Path((id, item)): Path<(String, String)>,
    Query(q): Query<RaterQuery>,
) -> ApiResult<impl IntoResponse> {
    same_rater(&rater, q.rater.as_deref())?;
    let view = blocking(&state, move |s| {
        s.read(|d| {
            let st = d.experiment(&id)?;
            let slots = eval::presentation_order(&st.experiment, &rater, &item)?;
            let version = match st.experiment.kind {
                ExperimentKind::Ranking => st.rankings.get(&rater).and_then(|m| m.get(&item)).map(|x| x.version),
                ExperimentKind::Pairwise => st.pairwise.get(&rater).and_then(|m| m.get(&item)).map(|x| x.version),
            };
            Ok(ItemView { experiment_id: id, item_id: item, rater_id: rater, slots, version: version.unwrap_or(0) })
        })
    })
    .await?;
    Ok(Json(view))
}

#[derive(Deserialize)]
struct RankingBody {
    item_id: String,
    ranks: BTreeMap<String, u32>,
    verdicts: BTreeMap<String, ImageVerdict>,
    version: Option<u64>,
}

async fn rankings(
    State(state): State<AppState>,
    Extension(Rater(rater)): Extension<Rater>,
    Path(id): Path<String>,
    Body(b): Body<RankingBody>,
) -> ApiResult<impl IntoResponse> {
    let item_id = b.item_id.clone();
    let version = blocking(&state, move |s| {
        let exp = s.read(|d| d.experiment(&id).map(|st| st.experiment.clone()))?;
        let ann = eval::resolve_ranking(&exp, &rater, &b.item_id, &b.ranks, &b.verdicts)?;
        eval::submit_ranking(s, ann, b.version)
    })
    .await?;
    Ok(Json(json!({ "item_id": item_id, "version": version })))
}

#[derive(Deserialize)]
struct PairwiseBody {
    item_id: String,
    preferred: Option<String>,
    verdicts: BTreeMap<String, ImageVerdict>,
    version: Option<u64>,
}

async fn pairwise(
    State(state): State<AppState>,
    Extension(Rater(rater)): Extension<Rater>,
    Path(id): Path<String>,
    Body(b): Body<PairwiseBody>,
) -> ApiResult<impl IntoResponse> {
    let item_id = b.item_id.clone();
    let version = blocking(&state, move |s| {
        let exp = s.read(|d| d.experiment(&id).map(|st| st.experiment.clone()))?;
        let ann = eval::resolve_pairwise(&exp, &rater, &b.item_id, b.preferred.as_deref(), &b.verdicts)?;
        eval::submit_pairwise(s, ann, b.version)
    })
    .await?;
    Ok(Json(json!({ "item_id": item_id, "version": version })))
}

async fn metrics(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&state, move |s| eval::experiment_report(s, &id)).await?))
}

fn jsonl(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/x-ndjson")], bytes).into_response()
}

async fn export_dataset(State(state): State<AppState>, Query(q): Query<StatsQuery>) -> ApiResult<Response> {
    let filter = if q.published_only { RecordFilter::published() } else { RecordFilter::all() };
    let bytes = blocking(&state, move |s| {
        let mut buf = Vec::new();
        s.export_jsonl(&mut buf, &filter).map_err(|e| vizmet_core::Error::Io(e.source))?;
        Ok(buf)
    })
    .await?;
    Ok(jsonl(bytes))
}

async fn export_ve(State(state): State<AppState>, Path(file): Path<String>) -> ApiResult<Response> {
    let name = file.strip_suffix(".jsonl").unwrap_or(&file);
    let split: Split = name.parse()?;
    let (bytes, report) = blocking(&state, move |s| {
        let (records, report) = s.read(|d| recast::export_ve(d, split))?;
        let mut buf = Vec::new();
        recast::write_ve_jsonl(&mut buf, &records)?;
        Ok((buf, report))
    })
    .await?;
    let mut headers = HeaderMap::new();
    headers.insert("x-split-seed", report.seed.into());
    Ok((headers, jsonl(bytes)).into_response())
}
