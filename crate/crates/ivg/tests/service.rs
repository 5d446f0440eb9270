mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use ivg::gateway::{Backend, Gateway, HttpBackend};
use ivg::service::{router, AppState};
use ivg::store::Store;
use ivg_core::BuildParams;
use serde_json::{json, Value};
use tower::ServiceExt;

struct App {
    _dir: tempfile::TempDir,
    store: Arc<Store>,
    router: Router,
}

fn app_with(gateway: Gateway) -> App {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Store::open(dir.path()).unwrap());
    let engine = Arc::new(common::stub_engine(store.clone()));
    let state = AppState::new(engine, gateway, BuildParams::default());
    App {
        _dir: dir,
        store,
        router: router(state),
    }
}

fn app() -> App {
    app_with(Gateway::new(Backend::Stub))
}

impl App {
    async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(uri);
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let resp = self.router.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
    }

    async fn json(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self.call(method, uri, body).await;
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.json(Method::GET, uri, None).await
    }

    fn session_with(&self, prompts: &[&str], per_step: usize) -> String {
        let steps: Vec<_> = prompts
            .iter()
            .enumerate()
            .map(|(k, p)| common::stub_step(p, k as u64, per_step, 16))
            .collect();
        self.store.import_session("t", &steps).unwrap().session.id.clone()
    }

    async fn wait_for_job(&self, id: &str) -> Value {
        for _ in 0..200 {
            let (status, job) = self.get(&format!("/api/v1/jobs/{id}")).await;
            assert_eq!(status, StatusCode::OK);
            if job["status"] != "pending" {
                return job;
            }
            tokio::time::sleep(Duration::from_millis(25)).await;
        }
        panic!("job {id} did not finish");
    }
}

#[tokio::test]
async fn session_lifecycle() {
    let app = app();
    let (status, created) = app.json(Method::POST, "/api/v1/sessions", Some(json!({"title": "moodboard"}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(created["step_count"], 0);
    let id = created["id"].as_str().unwrap();
    let (status, got) = app.get(&format!("/api/v1/sessions/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(got["title"], "moodboard");
    let (_, list) = app.get("/api/v1/sessions").await;
    assert_eq!(list.as_array().unwrap().len(), 1);
    let (status, untitled) = app.json(Method::POST, "/api/v1/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(untitled["title"], ivg::store::DEFAULT_TITLE);
}

#[tokio::test]
async fn unknown_session_is_404_everywhere() {
    let app = app();
    for uri in [
        "/api/v1/sessions/nope",
        "/api/v1/sessions/nope/graph",
        "/api/v1/sessions/nope/history",
        "/api/v1/sessions/nope/stages",
        "/api/v1/sessions/nope/jobs",
        "/api/v1/sessions/nope/assets/abc.png",
        "/api/v1/jobs/nope",
    ] {
        assert_eq!(app.get(uri).await.0, StatusCode::NOT_FOUND, "{uri}");
    }
    let (status, _) = app
        .json(Method::POST, "/api/v1/sessions/nope/generate", Some(json!({"prompt": "x", "n": 1})))
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = app
        .json(Method::PATCH, "/api/v1/sessions/nope/stages", Some(json!({"command": "split", "step": 2})))
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn graph_echoes_parameters_and_caps_bundles() {
    let app = app();
    let prompts = common::synthetic_prompts(8, 3);
    let prompts: Vec<&str> = prompts.iter().map(String::as_str).collect();
    let id = app.session_with(&prompts, 3);
    let (status, doc) = app
        .get(&format!("/api/v1/sessions/{id}/graph?alpha=0.3&s_min=0.4&cluster_distance=0.8&grouping_mode=stage"))
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(doc["params"]["alpha"], 0.3);
    assert_eq!(doc["params"]["s_min"], 0.4);
    assert_eq!(doc["params"]["w_min"], Value::Null);
    assert_eq!(doc["params"]["cluster_distance"], 0.8);
    assert_eq!(doc["params"]["grouping_mode"], "stage");
    assert_eq!(doc["params"]["n_e"], 12);
    assert!(doc["effective_w_min"].is_number());
    assert_eq!(doc["nodes"].as_array().unwrap().len(), 24);
    let visible = doc["bundles"].as_array().unwrap().iter().filter(|b| b["visible"] == true).count();
    assert!(visible <= 12);
    assert!(doc["bubbles"].as_array().unwrap().iter().all(|b| b["kind"] != "cluster"));

    let (_, manual) = app.get(&format!("/api/v1/sessions/{id}/graph?w_min=0")).await;
    assert_eq!(manual["params"]["w_min"], 0.0);
    assert!(manual["bundles"].as_array().unwrap().iter().all(|b| b["visible"] == true));
}

#[tokio::test]
async fn alpha_one_places_nodes_at_text_positions() {
    let app = app();
    let id = app.session_with(&["a cat", "a white cat", "a white cat, hd", "a dog"], 2);
    let (_, doc) = app.get(&format!("/api/v1/sessions/{id}/graph?alpha=1")).await;
    for node in doc["nodes"].as_array().unwrap() {
        assert_eq!(node["combined_xy"], node["text_xy"]);
    }
    let (_, doc) = app.get(&format!("/api/v1/sessions/{id}/graph?alpha=0")).await;
    for node in doc["nodes"].as_array().unwrap() {
        assert_eq!(node["combined_xy"], node["image_xy"]);
    }
}

#[tokio::test]
async fn out_of_range_graph_params_are_422() {
    let app = app();
    let id = app.session_with(&["a cat"], 1);
    for q in [
        "alpha=1.5",
        "alpha=-0.1",
        "alpha=abc",
        "s_min=2",
        "w_min=-1",
        "cluster_distance=0",
        "cluster_distance=-3",
        "grouping_mode=bogus",
        "n_e=0",
        "frobnicate=1",
        "alpha=NaN",
    ] {
        let (status, body) = app.get(&format!("/api/v1/sessions/{id}/graph?{q}")).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{q}");
        assert!(body["error"].is_string());
    }
}

#[tokio::test]
async fn repeated_graph_requests_are_byte_identical_and_side_effect_free() {
    let app = app();
    let id = app.session_with(&["a cat", "a white cat", "a white cat, hd", "a dog", "a red dog", "a red dog, hd"], 3);
    let version = app.store.snapshot(&id).unwrap().version();
    let uri = format!("/api/v1/sessions/{id}/graph?alpha=0.5&s_min=0.5");
    let (_, a) = app.call(Method::GET, &uri, None).await;
    let (_, b) = app.call(Method::GET, &uri, None).await;
    assert_eq!(a, b);
    app.get(&format!("/api/v1/sessions/{id}/history")).await;
    app.get(&format!("/api/v1/sessions/{id}/stages")).await;
    assert_eq!(app.store.snapshot(&id).unwrap().version(), version);

    // A fresh service over the same data produces the same bytes.
    let engine = Arc::new(common::stub_engine(app.store.clone()));
    let other = router(AppState::new(engine, Gateway::new(Backend::Stub), BuildParams::default()));
    let resp = other
        .oneshot(Request::builder().uri(&uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let c = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    assert_eq!(a, c.to_vec());
}

#[tokio::test]
async fn history_attaches_ops_to_similar_consecutive_pairs() {
    let app = app();
    let single = app.session_with(&["1boy, solo, smile"], 1);
    let (_, h) = app.get(&format!("/api/v1/sessions/{single}/history")).await;
    assert_eq!(h["steps"].as_array().unwrap().len(), 1);
    assert!(h["pairs"].as_array().unwrap().is_empty());

    let id = app.session_with(
        &[
            "1boy, solo, smile, outdoors, looking at viewer",
            "1girl, solo, smile, outdoors, looking at viewer",
            "spaceship, stars",
        ],
        1,
    );
    let (status, h) = app.get(&format!("/api/v1/sessions/{id}/history?s_min=0.5")).await;
    assert_eq!(status, StatusCode::OK);
    let pairs = h["pairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 2);
    assert_eq!(pairs[0]["similar"], true);
    let ops: Vec<(String, String)> = pairs[0]["ops"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| (o["word"].as_str().unwrap().to_owned(), o["action"].as_str().unwrap().to_owned()))
        .collect();
    assert_eq!(
        ops,
        vec![("1boy".to_owned(), "remove".to_owned()), ("1girl".to_owned(), "insert".to_owned())]
    );
    assert_eq!(pairs[1]["similar"], false);
    assert!(pairs[1].get("ops").is_none());
    assert_eq!(pairs[1]["similarity"], 0.0);
    assert_eq!(h["steps"][1]["tokens"][0], "1girl");
}

#[tokio::test]
async fn stage_edits_round_trip_and_persist() {
    let app = app();
    let id = app.session_with(&["a, b, c, d", "a, b, c, d, e", "a, b, c, d, e, f", "a, b, c, d, e, f, g"], 1);
    let (_, seg) = app.get(&format!("/api/v1/sessions/{id}/stages")).await;
    assert_eq!(seg["stages"], json!([{"start": 1, "end": 4}]));

    let uri = format!("/api/v1/sessions/{id}/stages");
    let (status, seg) = app.json(Method::PATCH, &uri, Some(json!({"command": "split", "step": 3}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(seg["stages"], json!([{"start": 1, "end": 2}, {"start": 3, "end": 4}]));

    let (_, seg) = app.json(Method::PATCH, &uri, Some(json!({"command": "merge", "step": 3}))).await;
    assert_eq!(seg["stages"], json!([{"start": 1, "end": 4}]));

    for bad in [
        json!({"command": "merge", "step": 2}),
        json!({"command": "merge", "step": 9}),
        json!({"command": "split", "step": 1}),
    ] {
        let (status, _) = app.json(Method::PATCH, &uri, Some(bad.clone())).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
    }
    let (status, _) = app.json(Method::PATCH, &uri, Some(json!({"command": "explode", "step": 2}))).await;
    assert!(status.is_client_error());

    app.json(Method::PATCH, &uri, Some(json!({"command": "split", "step": 2}))).await;
    let reopened = Store::open(app.store.root()).unwrap();
    assert_eq!(reopened.snapshot(&id).unwrap().overrides.len(), 3);
    let (_, doc) = app.get(&format!("/api/v1/sessions/{id}/graph")).await;
    assert_eq!(doc["stages"]["stages"], json!([{"start": 1, "end": 1}, {"start": 2, "end": 4}]));
    assert_eq!(doc["minimap"]["stage_lines"], doc["stages"]["stages"]);
}

#[tokio::test]
async fn stub_generation_appends_a_completed_step() {
    let app = app();
    let id = app.session_with(&["a cat"], 2);
    let (_, before) = app.get(&format!("/api/v1/sessions/{id}/graph")).await;
    assert_eq!(before["nodes"].as_array().unwrap().len(), 2);

    let (status, job) = app
        .json(
            Method::POST,
            &format!("/api/v1/sessions/{id}/generate"),
            Some(json!({"prompt": "a white cat", "n": 2, "seed": 5, "width": 64, "height": 64})),
        )
        .await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(job["status"], "pending");
    let job = app.wait_for_job(job["id"].as_str().unwrap()).await;
    assert_eq!(job["status"], "completed");
    assert_eq!(job["step"]["order"], 2);
    let ids = job["step"]["image_ids"].as_array().unwrap();
    assert_eq!(ids.len(), 2);

    let (status, png) = app
        .call(Method::GET, &format!("/api/v1/sessions/{id}/assets/{}.png", ids[0].as_str().unwrap()), None)
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ivg::store::png_dimensions(&png).unwrap(), (64, 64));

    let (_, after) = app.get(&format!("/api/v1/sessions/{id}/graph")).await;
    assert_eq!(after["nodes"].as_array().unwrap().len(), 4);
    let (_, h) = app.get(&format!("/api/v1/sessions/{id}/history")).await;
    assert_eq!(h["steps"].as_array().unwrap().len(), 2);
    assert_eq!(after["minimap"]["dots"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn generation_jobs_of_one_session_land_in_submission_order() {
    let app = app();
    let id = app.session_with(&["seed prompt"], 1);
    let mut jobs = Vec::new();
    for k in 0..5 {
        let (_, job) = app
            .json(
                Method::POST,
                &format!("/api/v1/sessions/{id}/generate"),
                Some(json!({"prompt": format!("prompt {k}"), "n": 1, "width": 32, "height": 32})),
            )
            .await;
        jobs.push(job["id"].as_str().unwrap().to_owned());
    }
    for (k, job) in jobs.iter().enumerate() {
        let done = app.wait_for_job(job).await;
        assert_eq!(done["step"]["order"], k + 2);
        assert_eq!(done["step"]["prompt"], format!("prompt {k}"));
    }
    let (_, listed) = app.get(&format!("/api/v1/sessions/{id}/jobs")).await;
    assert_eq!(listed.as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn invalid_generation_requests_are_422() {
    let app = app();
    let id = app.session_with(&["a cat"], 1);
    for body in [
        json!({"prompt": "x", "n": 9}),
        json!({"prompt": "x", "n": 0}),
        json!({"prompt": "x", "n": 1, "width": 100}),
    ] {
        let (status, _) = app
            .json(Method::POST, &format!("/api/v1/sessions/{id}/generate"), Some(body.clone()))
            .await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    }
}

#[tokio::test]
async fn backend_failure_marks_the_job_failed_and_keeps_the_session() {
    let down = axum::Router::new().route(
        "/sdapi/v1/txt2img",
        axum::routing::post(|| async {
            let mut h = axum::http::HeaderMap::new();
            h.insert("retry-after", "30".parse().unwrap());
            (StatusCode::SERVICE_UNAVAILABLE, h, "out of memory")
        }),
    );
    let url = common::serve(down).await;
    let app = app_with(Gateway::new(Backend::Http(HttpBackend::new(url, Duration::from_secs(5)))));
    let id = app.session_with(&["a cat", "a white cat"], 2);
    let (_, before) = app.call(Method::GET, &format!("/api/v1/sessions/{id}/graph"), None).await;

    let (_, job) = app
        .json(Method::POST, &format!("/api/v1/sessions/{id}/generate"), Some(json!({"prompt": "a black cat", "n": 2})))
        .await;
    let job = app.wait_for_job(job["id"].as_str().unwrap()).await;
    assert_eq!(job["status"], "failed");
    assert_eq!(job["retry_after_secs"], 30);
    assert!(job["error"].as_str().unwrap().contains("unavailable"));
    assert!(job.get("step").is_none());

    assert_eq!(app.store.snapshot(&id).unwrap().steps.len(), 2);
    let (_, after) = app.call(Method::GET, &format!("/api/v1/sessions/{id}/graph"), None).await;
    assert_eq!(before, after);
}

#[tokio::test]
async fn unreachable_backend_fails_job() {
    let app = app_with(Gateway::new(Backend::Http(HttpBackend::new(
        "http://127.0.0.1:9",
        Duration::from_secs(2),
    ))));
    let id = app.session_with(&["a cat"], 1);
    let (_, job) = app
        .json(Method::POST, &format!("/api/v1/sessions/{id}/generate"), Some(json!({"prompt": "x", "n": 1})))
        .await;
    let job = app.wait_for_job(job["id"].as_str().unwrap()).await;
    assert_eq!(job["status"], "failed");
    assert!(job["retry_after_secs"].is_number());
}

#[tokio::test]
async fn empty_session_graph_is_empty() {
    let app = app();
    let (_, created) = app.json(Method::POST, "/api/v1/sessions", Some(json!({"title": "blank"}))).await;
    let id = created["id"].as_str().unwrap();
    let (status, doc) = app.get(&format!("/api/v1/sessions/{id}/graph")).await;
    assert_eq!(status, StatusCode::OK);
    assert!(doc["nodes"].as_array().unwrap().is_empty());
    assert!(doc["bundles"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn served_over_tcp() {
    let app = app();
    let id = app.session_with(&["a cat"], 1);
    let url = common::serve(app.router.clone()).await;
    let body: Value = reqwest::get(format!("{url}/api/v1/sessions/{id}/graph"))
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(body["schema_version"], 1);
}
