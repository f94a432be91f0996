use std::collections::BTreeMap;
use std::sync::Arc;

use reqwest::{Client, StatusCode};
use serde_json::{json, Value};
use tempfile::TempDir;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use vizmet_api::{AppState, TokenTable};
use vizmet_core::dataset::{
    FilterStatus, GenerationParams, Groundedness, MetaphorId, PromptStrategy, RecordFilter, SourceCorpus, Store,
};
use vizmet_core::eval::{self, Experiment, ExperimentItem, ExperimentKind};
use vizmet_core::gateway::Gateway;
use vizmet_core::pipeline;

const RANK_SYSTEMS: [&str; 5] = ["system-alpha", "system-beta", "system-gamma", "system-delta", "system-epsilon"];
const TEXTS: [&str; 4] = [
    "Her smile is a sunrise over the harbor",
    "The city is a beehive at noon",
    "His memory is a sieve full of holes",
    "Hope is a candle in the window",
];

struct Server {
    base: String,
    client: Client,
    store: Arc<Store>,
    ids: Vec<MetaphorId>,
    shutdown: Option<oneshot::Sender<()>>,
    handle: Option<JoinHandle<Result<(), vizmet_api::ApiError>>>,
    _dir: TempDir,
}

fn experiment(id: &str, kind: ExperimentKind, systems: &[&str]) -> Experiment {
    Experiment {
        id: id.into(),
        kind,
        systems: systems.iter().map(|s| s.to_string()).collect(),
        items: (1..=2)
            .map(|i| ExperimentItem {
                item_id: format!("item{i}"),
                images: systems.iter().enumerate().map(|(k, s)| (s.to_string(), format!("img{i}-{k}.png"))).collect(),
            })
            .collect(),
        raters: vec!["r1".into(), "r2".into()],
        shuffle_seed: 7,
        open: true,
    }
}

/// m0 Published, m1 Elaborated, m2 Imaged, m3 Sourced; one ranking and one pairwise experiment.
fn populate(store: &Store) -> Vec<MetaphorId> {
    let gw = Gateway::stub(11);
    let rows: Vec<(String, SourceCorpus)> = TEXTS.iter().map(|t| (t.to_string(), SourceCorpus::Flute)).collect();
    store.ingest_metaphors(&rows).unwrap();
    let ids: Vec<MetaphorId> = TEXTS.iter().map(|t| MetaphorId::from_text(t)).collect();
    let params = GenerationParams::default();
    for id in &ids[..3] {
        pipeline::screen_groundedness(store, id, Groundedness::Visual, "seed", None).unwrap();
        pipeline::elaborate(store, &gw, id, PromptStrategy::CoT, &params, "seed").unwrap();
    }
    for id in [&ids[0], &ids[2]] {
        let elab = store.read(|d| d.metaphor(id).unwrap().current_elaboration_id().unwrap().to_owned());
        pipeline::validate_elaboration(store, &elab, None, "seed", None).unwrap();
        pipeline::generate_images(store, &gw, id, "seed").unwrap();
    }
    let images: Vec<String> = store.read(|d| d.metaphor(&ids[0]).unwrap().image_ids.clone());
    for img in images {
        pipeline::decide_image(store, &img, FilterStatus::Accepted, "seed", None).unwrap();
    }
    eval::create_experiment(store, experiment("rank5", ExperimentKind::Ranking, &RANK_SYSTEMS)).unwrap();
    eval::create_experiment(store, experiment("pair", ExperimentKind::Pairwise, &["system-left", "system-right"]))
        .unwrap();
    ids
}

async fn start() -> Server {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let ids = populate(&store);
    let tokens = TokenTable::parse("r1 tok-r1\nr2 tok-r2\nr3 tok-r3 2001-01-01T00:00:00Z\n").unwrap();
    let state = AppState::new(store, tokens);
    let store = state.store.clone();
    let listener = vizmet_api::bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = oneshot::channel();
    let handle = tokio::spawn(vizmet_api::serve_listener(listener, state, async {
        let _ = rx.await;
    }));
    Server { base, client: Client::new(), store, ids, shutdown: Some(tx), handle: Some(handle), _dir: dir }
}

impl Server {
    async fn get(&self, path: &str, token: &str) -> (StatusCode, String) {
        let r = self.client.get(format!("{}{path}", self.base)).bearer_auth(token).send().await.unwrap();
        (r.status(), r.text().await.unwrap())
    }

    async fn get_json(&self, path: &str, token: &str) -> (StatusCode, Value) {
        let (s, body) = self.get(path, token).await;
        (s, serde_json::from_str(&body).unwrap_or(Value::Null))
    }

    async fn post(&self, path: &str, token: &str, body: Value) -> (StatusCode, Value) {
        let r = self.client.post(format!("{}{path}", self.base)).bearer_auth(token).json(&body).send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    async fn stop(mut self) {
        self.shutdown.take().unwrap().send(()).unwrap();
        self.handle.take().unwrap().await.unwrap().unwrap();
    }
}

fn assert_error(status: StatusCode, body: &Value, want_status: StatusCode, code: &str) {
    assert_eq!(status, want_status, "{body}");
    assert_eq!(body["code"], code, "{body}");
    assert!(body["error"].as_str().is_some_and(|e| !e.is_empty()), "{body}");
}

#[tokio::test(flavor = "multi_thread")]
async fn healthz_needs_no_token() {
    let srv = start().await;
    let r = srv.client.get(format!("{}/healthz", srv.base)).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert_eq!(r.json::<Value>().await.unwrap(), json!({"status": "ok"}));
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_tokens_are_unauthorized() {
    let srv = start().await;
    let r = srv.client.get(format!("{}/stats", srv.base)).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::UNAUTHORIZED);
    for token in ["tok-r3", "nope"] {
        let (s, body) =
            srv.post(&format!("/metaphors/{}/screen", srv.ids[3]), token, json!({"verdict": "visual"})).await;
        assert_error(s, &body, StatusCode::UNAUTHORIZED, "unauthorized");
    }
    assert_eq!(srv.store.metaphor(&srv.ids[3]).unwrap().workflow.version, 0);
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn stats_match_the_store() {
    let srv = start().await;
    for (query, filter) in [("", RecordFilter::published()), ("?published_only=false", RecordFilter::all())] {
        let (s, body) = srv.get_json(&format!("/stats{query}"), "tok-r1").await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(body, serde_json::to_value(srv.store.dataset_stats(&filter)).unwrap());
    }
    let (_, published) = srv.get_json("/stats", "tok-r1").await;
    assert_eq!(published["n_metaphors"], 1);
    assert_eq!(published["n_images"], 4);
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn queues_page_with_totals() {
    let srv = start().await;
    let (_, screening) = srv.get_json("/queue/screening", "tok-r1").await;
    assert_eq!(screening["total"], 1);
    assert_eq!(screening["items"][0]["metaphor"]["id"], srv.ids[3].as_str());
    let (_, elabs) = srv.get_json("/queue/elaborations", "tok-r1").await;
    assert_eq!(elabs["total"], 1);
    assert_eq!(elabs["items"][0]["metaphor_id"], srv.ids[1].as_str());
    let (_, images) = srv.get_json("/queue/images?limit=3&offset=2", "tok-r1").await;
    assert_eq!(images["total"], 4);
    assert_eq!(images["items"].as_array().unwrap().len(), 2);
    let (s, body) = srv.get_json("/queue/nothing", "tok-r1").await;
    assert_error(s, &body, StatusCode::NOT_FOUND, "not_found");
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn screening_maps_errors() {
    let srv = start().await;
    let path = format!("/metaphors/{}/screen", srv.ids[3]);
    let (s, body) = srv.post(&path, "tok-r1", json!({"verdict": "visual", "version": 5})).await;
    assert_error(s, &body, StatusCode::CONFLICT, "conflict");
    let (s, body) = srv.post(&path, "tok-r1", json!({"verdict": "glowing"})).await;
    assert_error(s, &body, StatusCode::UNPROCESSABLE_ENTITY, "invalid_body");
    let (s, body) = srv.post(&path, "tok-r1", json!({"verdict": "pending"})).await;
    assert_error(s, &body, StatusCode::UNPROCESSABLE_ENTITY, "invalid_input");
    let (s, body) = srv.post(&path, "tok-r1", json!({"verdict": "visual", "version": 0})).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert_eq!(body["state"], "screened_visual");
    assert_eq!(body["version"], 1);
    assert_eq!(body["history"][0]["actor"], "r1");
    let (s, body) = srv.post(&path, "tok-r1", json!({"verdict": "non_visual"})).await;
    assert_error(s, &body, StatusCode::CONFLICT, "illegal_transition");
    let (s, body) = srv.post("/metaphors/0000/screen", "tok-r1", json!({"verdict": "visual"})).await;
    assert_error(s, &body, StatusCode::NOT_FOUND, "not_found");
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn validation_returns_the_updated_elaboration() {
    let srv = start().await;
    let elab = srv.store.read(|d| d.metaphor(&srv.ids[1]).unwrap().current_elaboration_id().unwrap().to_owned());
    let path = format!("/elaborations/{elab}/validate");
    let (s, body) = srv.post(&path, "tok-r2", json!({"edited_text": "   "})).await;
    assert_error(s, &body, StatusCode::UNPROCESSABLE_ENTITY, "validation");
    let (s, body) = srv.post(&path, "tok-r2", json!({"edited_text": "A beehive shaped skyline at noon."})).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert_eq!(body["elaboration"]["edited"], true);
    assert_eq!(body["elaboration"]["elaboration_text"], "A beehive shaped skyline at noon.");
    assert_eq!(body["elaboration"]["validated_by"], "r2");
    assert_eq!(body["version"], srv.store.metaphor(&srv.ids[1]).unwrap().workflow.version);
    let (s, body) = srv.post(&path, "tok-r2", json!({})).await;
    assert_error(s, &body, StatusCode::CONFLICT, "illegal_transition");
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn image_decisions() {
    let srv = start().await;
    let images = srv.store.read(|d| d.metaphor(&srv.ids[2]).unwrap().image_ids.clone());
    let (s, body) =
        srv.post(&format!("/images/{}/decision", images[0]), "tok-r1", json!({"decision": "pending"})).await;
    assert_error(s, &body, StatusCode::UNPROCESSABLE_ENTITY, "invalid_input");
    for (i, img) in images.iter().enumerate() {
        let decision = if i == 0 { "accepted" } else { "rejected" };
        let (s, body) = srv.post(&format!("/images/{img}/decision"), "tok-r1", json!({"decision": decision})).await;
        assert_eq!(s, StatusCode::OK, "{body}");
        assert_eq!(body["image"]["filter_status"], decision);
    }
    let (_, last) =
        srv.post(&format!("/images/{}/decision", images[0]), "tok-r1", json!({"decision": "rejected"})).await;
    assert_eq!(last["code"], "already_decided");
    assert_eq!(srv.store.metaphor(&srv.ids[2]).unwrap().state().to_string(), "Published");
    let (s, body) = srv.post("/images/missing/decision", "tok-r1", json!({"decision": "accepted"})).await;
    assert_error(s, &body, StatusCode::NOT_FOUND, "not_found");
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn ranking_items_are_blind_and_stable() {
    let srv = start().await;
    let (s, first) = srv.get("/experiments/rank5/items/item1?rater=r1", "tok-r1").await;
    assert_eq!(s, StatusCode::OK, "{first}");
    let (_, second) = srv.get("/experiments/rank5/items/item1?rater=r1", "tok-r1").await;
    assert_eq!(first, second);
    for system in RANK_SYSTEMS {
        assert!(!first.contains(system), "system id leaked: {first}");
    }
    let view: Value = serde_json::from_str(&first).unwrap();
    let exp = srv.store.read(|d| d.experiment("rank5").unwrap().experiment.clone());
    let oracle = eval::presentation_order(&exp, "r1", "item1").unwrap();
    assert_eq!(view["slots"], serde_json::to_value(&oracle).unwrap());
    assert_eq!(view["version"], 0);

    let (s, body) = srv.get_json("/experiments/rank5/items/item1?rater=r2", "tok-r1").await;
    assert_error(s, &body, StatusCode::FORBIDDEN, "forbidden");
    let (s, body) = srv.get_json("/experiments/rank5/items/nope", "tok-r1").await;
    assert_error(s, &body, StatusCode::NOT_FOUND, "not_found");

    let (_, listing) = srv.get("/experiments", "tok-r1").await;
    for system in RANK_SYSTEMS.iter().chain(&["system-left", "system-right"]) {
        assert!(!listing.contains(system), "{listing}");
    }
    srv.stop().await;
}

fn slot_body(item: &str, ranks: &[u32], version: Option<u64>) -> Value {
    let ranks: BTreeMap<String, u32> = ranks.iter().enumerate().map(|(i, r)| (eval::slot_label(i), *r)).collect();
    let verdicts: BTreeMap<String, Value> = ranks.keys().map(|s| (s.clone(), json!({"kind": "perfect"}))).collect();
    json!({"item_id": item, "ranks": ranks, "verdicts": verdicts, "version": version})
}

#[tokio::test(flavor = "multi_thread")]
async fn ranking_submissions() {
    let srv = start().await;
    let (s, body) = srv.post("/experiments/rank5/rankings", "tok-r1", slot_body("item1", &[1, 1, 2, 3, 4], None)).await;
    assert_error(s, &body, StatusCode::UNPROCESSABLE_ENTITY, "validation");
    assert!(body["error"].as_str().unwrap().contains("permutation"), "{body}");

    let (s, body) = srv.post("/experiments/rank5/rankings", "tok-r1", slot_body("item1", &[3, 1, 2, 5, 4], None)).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert_eq!(body["version"], 1);
    let (s, body) =
        srv.post("/experiments/rank5/rankings", "tok-r1", slot_body("item1", &[1, 2, 3, 4, 5], Some(1))).await;
    assert_eq!((s, body["version"].clone()), (StatusCode::OK, json!(2)));
    let (s, body) =
        srv.post("/experiments/rank5/rankings", "tok-r1", slot_body("item1", &[1, 2, 3, 4, 5], Some(1))).await;
    assert_error(s, &body, StatusCode::CONFLICT, "conflict");

    let (_, view) = srv.get_json("/experiments/rank5/items/item1", "tok-r1").await;
    assert_eq!(view["version"], 2);
    let stored = srv.store.read(|d| d.experiment("rank5").unwrap().rankings["r1"]["item1"].current.clone());
    let exp = srv.store.read(|d| d.experiment("rank5").unwrap().experiment.clone());
    for (i, slot) in eval::presentation_order(&exp, "r1", "item1").unwrap().iter().enumerate() {
        let system = exp.items[0].images.iter().find(|(_, img)| **img == slot.image).unwrap().0;
        assert_eq!(stored.ranks[system], i as u32 + 1);
    }

    let (s, body) = srv.get_json("/experiments/rank5/metrics", "tok-r1").await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert_eq!(body["n_annotations"], 1);
    assert_eq!(body, serde_json::to_value(eval::experiment_report(&srv.store, "rank5").unwrap()).unwrap());
    let (s, body) = srv.post("/experiments/pair/rankings", "tok-r1", slot_body("item1", &[1, 2], None)).await;
    assert_error(s, &body, StatusCode::UNPROCESSABLE_ENTITY, "validation");
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn pairwise_submissions_and_metrics() {
    let srv = start().await;
    for token in ["tok-r1", "tok-r2"] {
        for item in ["item1", "item2"] {
            let verdicts = json!({"slot-1": {"kind": "perfect"}, "slot-2": {"kind": "lost_cause"}});
            let body = json!({"item_id": item, "preferred": "slot-1", "verdicts": verdicts});
            let (s, body) = srv.post("/experiments/pair/pairwise", token, body).await;
            assert_eq!(s, StatusCode::OK, "{body}");
        }
    }
    let (s, body) = srv.get_json("/experiments/pair/metrics", "tok-r1").await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert_eq!(body["kind"], "pairwise");
    let state = srv.store.read(|d| d.experiment("pair").unwrap().clone());
    let oracle = eval::ExperimentReport::compute(&state).unwrap();
    assert_eq!(body, serde_json::to_value(oracle).unwrap());

    let bad = json!({"item_id": "item1", "preferred": "slot-9", "verdicts": {}});
    let (s, body) = srv.post("/experiments/pair/pairwise", "tok-r1", bad).await;
    assert_error(s, &body, StatusCode::UNPROCESSABLE_ENTITY, "validation");
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn exports() {
    let srv = start().await;
    let (s, body) = srv.get("/export/dataset.jsonl", "tok-r1").await;
    assert_eq!(s, StatusCode::OK);
    let mut oracle = Vec::new();
    srv.store.export_jsonl(&mut oracle, &RecordFilter::published()).unwrap();
    assert_eq!(body.as_bytes(), oracle.as_slice());
    assert_eq!(body.lines().count(), 1);

    let (s, body) = srv.get_json("/export/ve/train.jsonl", "tok-r1").await;
    assert_error(s, &body, StatusCode::UNPROCESSABLE_ENTITY, "invalid_input");
    let (s, body) = srv.get_json("/export/ve/sideways.jsonl", "tok-r1").await;
    assert_error(s, &body, StatusCode::UNPROCESSABLE_ENTITY, "invalid_input");
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn busy_port_fails_at_startup() {
    let srv = start().await;
    let addr = srv.base.trim_start_matches("http://").parse().unwrap();
    assert!(vizmet_api::bind(addr).await.is_err());
    srv.stop().await;
}
