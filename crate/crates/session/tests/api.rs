use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use proptest::prelude::*;
use reversal_core::storage::read_runs;
use reversal_core::RunRecord;
use reversal_session::*;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(cfg: ServiceConfig) -> Router {
    router(AppState::new(cfg))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn create(app: &Router, body: Option<Value>) -> (String, Value) {
    let (status, v) = call(app, Method::POST, "/sessions", body).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    (v["session_id"].as_str().unwrap().to_string(), v)
}

async fn choose(app: &Router, id: &str, label: &str, trial: Option<usize>) -> (StatusCode, Value) {
    let mut body = json!({ "label": label });
    if let Some(t) = trial {
        body["trial"] = json!(t);
    }
    call(app, Method::POST, &format!("/sessions/{id}/choice"), Some(body)).await
}

const FORBIDDEN: [&str; 8] = ["state", "prob", "segment", "switch", "reason", "latent", "optimal", "seed"];

/// Fails if any object key anywhere in `v` looks like latent task structure.
fn assert_no_latent_keys(v: &Value) {
    match v {
        Value::Object(map) => {
            for (k, inner) in map {
                let lower = k.to_ascii_lowercase();
                assert!(!FORBIDDEN.iter().any(|f| lower.contains(f)), "latent key {k:?} in {v}");
                assert_no_latent_keys(inner);
            }
        }
        Value::Array(items) => items.iter().for_each(assert_no_latent_keys),
        _ => {}
    }
}

#[tokio::test]
async fn create_defaults_and_overrides() {
    let app = app(ServiceConfig::default());
    let (_, v) = create(&app, None).await;
    assert_eq!(v["n_trials"], 250);
    assert_eq!(v["labels"], json!(["E", "V"]));
    assert_eq!(v["reward_magnitude"], 100);
    assert_eq!(v["trial"], 0);
    assert_no_latent_keys(&v);

    let (_, v) = create(&app, Some(json!({ "n_trials": 10, "labels": "XY", "schedule": "random" }))).await;
    assert_eq!(v["n_trials"], 10);
    assert_eq!(v["labels"], json!(["X", "Y"]));

    for bad in [json!({ "n_trials": 0 }), json!({ "labels": "EE" }), json!({ "schedule": "weekly" }), json!({ "color": 1 })] {
        let (status, v) = call(&app, Method::POST, "/sessions", Some(bad.clone())).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{bad} -> {v}");
        assert!(v["error"].is_string());
    }
}

#[tokio::test]
async fn ids_are_unguessable_and_distinct() {
    let app = app(ServiceConfig::default());
    let (a, _) = create(&app, None).await;
    let (b, _) = create(&app, None).await;
    assert_ne!(a, b);
    assert_eq!(a.len(), 32);
}

#[tokio::test]
async fn status_codes() {
    let app = app(ServiceConfig::default());
    let (status, _) = call(&app, Method::GET, "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = choose(&app, "nope", "E", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (id, _) = create(&app, Some(json!({ "n_trials": 2 }))).await;
    let (status, _) = choose(&app, &id, "e", None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/choice"), Some(json!({ "choice": "E" }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, fb) = choose(&app, &id, "E", Some(1)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(fb["trial"], 1);
    assert_no_latent_keys(&fb);
    // a second submit for trial 1 is a double-submit
    let (status, _) = choose(&app, &id, "V", Some(1)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, Method::GET, &format!("/sessions/{id}/export"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, fb) = choose(&app, &id, "V", Some(2)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(fb["done"], true);
    let (status, _) = choose(&app, &id, "E", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn full_session_persists_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("human.jsonl");
    let app = app(ServiceConfig {
        out: Some(out.clone()),
        ..Default::default()
    });
    let (id, _) = create(&app, Some(json!({ "participant": "p01" }))).await;
    let mut client_total = 0i64;
    for t in 1..=250usize {
        let label = if t % 3 == 0 { "V" } else { "E" };
        let (status, fb) = choose(&app, &id, label, Some(t)).await;
        assert_eq!(status, StatusCode::OK);
        client_total += fb["coins"].as_i64().unwrap();
        assert_eq!(fb["total"].as_i64().unwrap(), client_total);
        assert_eq!(fb["done"], t == 250);
        if t == 3 {
            let (_, view) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
            assert_eq!(view["history"].as_array().unwrap().len(), 3);
            assert_no_latent_keys(&view);
        }
    }
    let (status, export) = call(&app, Method::GET, &format!("/sessions/{id}/export"), None).await;
    assert_eq!(status, StatusCode::OK);
    let exported: RunRecord = serde_json::from_value(export).unwrap();
    let persisted = read_runs(&out).unwrap();
    assert_eq!(persisted, vec![exported.clone()]);
    assert_eq!(exported.trials.len(), 250);
    assert_eq!(exported.trials.iter().map(|t| t.coins as i64).sum::<i64>(), client_total);
    // finished exports carry the latent metadata for analysis
    assert!(exported.has_task_metadata());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_double_submits_record_one_trial_each() {
    let app = app(ServiceConfig::default());
    let (id, _) = create(&app, Some(json!({ "n_trials": 20 }))).await;
    for t in 1..=20usize {
        let tasks: Vec<_> = (0..4)
            .map(|_| {
                let (app, id) = (app.clone(), id.clone());
                tokio::spawn(async move { choose(&app, &id, "E", Some(t)).await.0 })
            })
            .collect();
        let mut codes = Vec::new();
        for task in tasks {
            codes.push(task.await.unwrap());
        }
        assert_eq!(codes.iter().filter(|&&c| c == StatusCode::OK).count(), 1, "{codes:?}");
        assert_eq!(codes.iter().filter(|&&c| c == StatusCode::CONFLICT).count(), 3);
    }
    let (_, view) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(view["trial"], 20);
    assert_eq!(view["done"], true);
}

#[tokio::test]
async fn cors_toggle() {
    let preflight = || {
        Request::builder()
            .method(Method::OPTIONS)
            .uri("/sessions")
            .header(header::ORIGIN, "http://localhost:5173")
            .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
            .body(Body::empty())
            .unwrap()
    };
    let open = app(ServiceConfig {
        cors: true,
        ..Default::default()
    });
    let resp = open.oneshot(preflight()).await.unwrap();
    assert!(resp.headers().contains_key(header::ACCESS_CONTROL_ALLOW_ORIGIN));
    let closed = app(ServiceConfig::default());
    let resp = closed.oneshot(preflight()).await.unwrap();
    assert!(!resp.headers().contains_key(header::ACCESS_CONTROL_ALLOW_ORIGIN));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn live_payloads_never_leak_latent_fields(choices in prop::collection::vec(prop::sample::select(vec!["E", "V", "x", "EV"]), 1..40),
                                              n_trials in 1usize..30) {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async {
            let app = app(ServiceConfig::default());
            let (id, v) = create(&app, Some(json!({ "n_trials": n_trials }))).await;
            assert_no_latent_keys(&v);
            for c in choices {
                let (_, fb) = choose(&app, &id, c, None).await;
                assert_no_latent_keys(&fb);
                let (_, view) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
                assert_no_latent_keys(&view);
                if view["done"] == true {
                    break;
                }
            }
        });
    }
}

#[test]
fn state_is_shareable() {
    fn assert_send_sync<T: Send + Sync>(_: &T) {}
    let state: Arc<AppState> = AppState::new(ServiceConfig::default());
    assert_send_sync(&state);
}
