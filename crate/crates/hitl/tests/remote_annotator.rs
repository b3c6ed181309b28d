use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use hitl::annotators::{Annotator, ProviderConfig, RemoteClient, ResponseCache};
use hitl::orchestrator::{Pipeline, RunConfig, RunError};
use hitl::synth::{generate, SynthSpec};
use hitl_core::prediction::format_trailer;
use hitl_core::tasking::{PromptText, PromptVariant};
use hitl_core::{GenerationParams, Label, TaskKind};
use serde_json::{json, Value};

/// Canned chat-completions endpoint. Replies are taken from `script` in
/// order; once it runs dry, `fallback` is returned.
#[derive(Default)]
struct Mock {
    script: Mutex<VecDeque<(StatusCode, String)>>,
    fallback: Mutex<Option<(StatusCode, String)>>,
    bodies: Mutex<Vec<Value>>,
    auth: Mutex<Vec<Option<String>>>,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    delay_ms: u64,
}

async fn complete(State(m): State<Arc<Mock>>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let now = m.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    m.peak.fetch_max(now, Ordering::SeqCst);
    if m.delay_ms > 0 {
        tokio::time::sleep(Duration::from_millis(m.delay_ms)).await;
    }
    m.bodies.lock().unwrap().push(body);
    m.auth.lock().unwrap().push(headers.get("authorization").map(|v| v.to_str().unwrap().to_string()));
    let next = m.script.lock().unwrap().pop_front();
    let (status, text) = next
        .or_else(|| m.fallback.lock().unwrap().clone())
        .unwrap_or((StatusCode::INTERNAL_SERVER_ERROR, String::new()));
    m.in_flight.fetch_sub(1, Ordering::SeqCst);
    (status, Json(json!({"choices": [{"message": {"role": "assistant", "content": text}}]})))
}

async fn start(mock: Arc<Mock>) -> SocketAddr {
    let app = Router::new().route("/v1/chat/completions", post(complete)).with_state(mock);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    addr
}

fn provider(addr: SocketAddr, id: &str) -> ProviderConfig {
    serde_json::from_value(json!({
        "id": id,
        "base_url": format!("http://{addr}/v1/chat/completions"),
        "model": "mock-1",
        "rate_per_minute": 0,
        "timeout_ms": 5000,
    }))
    .unwrap()
}

fn prompt(units: &[&str]) -> PromptText {
    PromptText {
        text: "Rate the pane.".into(),
        task: TaskKind::Quality,
        unit_ids: units.iter().map(|s| s.to_string()).collect(),
        variant_id: PromptVariant::baseline().variant_id,
        max_tokens: 250,
    }
}

fn trailer(v: i64, c: f64) -> String {
    format!("Some reasoning.\n{}", format_trailer(Label::new(v).unwrap(), c))
}

#[tokio::test]
async fn request_body_auth_and_parse() {
    let mock = Arc::new(Mock::default());
    mock.script.lock().unwrap().push_back((StatusCode::OK, trailer(4, 81.0)));
    let addr = start(mock.clone()).await;
    std::env::set_var("HITL_TEST_REMOTE_KEY", "k-123");
    let mut cfg = provider(addr, "remote-a");
    cfg.auth_env = Some("HITL_TEST_REMOTE_KEY".into());
    let annotator = Annotator::remote(RemoteClient::new(cfg, None).unwrap());

    let params = GenerationParams { temperature: 0.5, max_tokens: 250 };
    let preds = annotator.annotate(&prompt(&["p1"]), params).await.unwrap();
    assert_eq!(preds.len(), 1);
    assert_eq!(preds[0].annotator_id, "remote-a");
    assert_eq!(preds[0].unit_id, "p1");
    assert_eq!(preds[0].label, Label::new(4).unwrap());
    assert_eq!(preds[0].confidence, 81.0);
    assert!(preds[0].raw_response.starts_with("Some reasoning."));

    let bodies = mock.bodies.lock().unwrap();
    assert_eq!(bodies.len(), 1);
    assert_eq!(bodies[0]["model"], "mock-1");
    assert_eq!(bodies[0]["messages"][0]["content"], "Rate the pane.");
    assert_eq!(bodies[0]["temperature"], json!(0.5));
    assert_eq!(bodies[0]["max_tokens"], json!(250));
    assert_eq!(mock.auth.lock().unwrap()[0].as_deref(), Some("Bearer k-123"));
}

#[tokio::test]
async fn missing_credential_is_reported() {
    let mut cfg = provider("127.0.0.1:9".parse().unwrap(), "remote-x");
    cfg.auth_env = Some("HITL_TEST_KEY_THAT_IS_NEVER_SET".into());
    assert!(matches!(
        RemoteClient::new(cfg, None),
        Err(hitl::annotators::AnnotateError::MissingCredential(_))
    ));
}

#[tokio::test]
async fn unparseable_reply_is_retried_once() {
    let mock = Arc::new(Mock::default());
    mock.script.lock().unwrap().extend([
        (StatusCode::OK, "I think it is fairly good.".to_string()),
        (StatusCode::OK, trailer(3, 70.0)),
    ]);
    let addr = start(mock.clone()).await;
    let annotator = Annotator::remote(RemoteClient::new(provider(addr, "r"), None).unwrap());
    let preds = annotator.annotate(&prompt(&["p1"]), GenerationParams::default()).await.unwrap();
    assert_eq!(preds[0].label, Label::new(3).unwrap());
    assert_eq!(mock.bodies.lock().unwrap().len(), 2);
}

#[tokio::test]
async fn persistent_failure_becomes_missing_prediction() {
    let mock = Arc::new(Mock::default());
    let addr = start(mock.clone()).await;
    let annotator = Annotator::remote(RemoteClient::new(provider(addr, "down"), None).unwrap());
    let out = annotator.annotate_or_missing(&prompt(&["p1", "p2"]), GenerationParams::default()).await;
    assert_eq!(out.len(), 2);
    let missing: Vec<_> = out.into_iter().map(|r| r.unwrap_err()).collect();
    assert_eq!(missing[0].unit_id, "p1");
    assert_eq!(missing[1].unit_id, "p2");
    assert_eq!(missing[0].annotator_id, "down");
    assert!(missing[0].reason.contains("500"), "{}", missing[0].reason);
    assert_eq!(mock.bodies.lock().unwrap().len(), 2);

    // two trailers for a three-pane prompt is a count mismatch, not a guess
    let short = Arc::new(Mock::default());
    *short.fallback.lock().unwrap() = Some((StatusCode::OK, format!("{}\n{}", trailer(3, 60.0), trailer(4, 60.0))));
    let addr = start(short).await;
    let annotator = Annotator::remote(RemoteClient::new(provider(addr, "short"), None).unwrap());
    let out = annotator.annotate_or_missing(&prompt(&["a", "b", "c"]), GenerationParams::default()).await;
    assert!(out.iter().all(Result::is_err));
}

#[tokio::test]
async fn cache_hit_skips_the_network() {
    let dir = tempfile::tempdir().unwrap();
    let cache = Arc::new(ResponseCache::new(dir.path()).unwrap());
    let mock = Arc::new(Mock::default());
    *mock.fallback.lock().unwrap() = Some((StatusCode::OK, trailer(5, 90.0)));
    let addr = start(mock.clone()).await;

    let first = Annotator::remote(RemoteClient::new(provider(addr, "c"), Some(cache.clone())).unwrap());
    let a = first.annotate(&prompt(&["p1"]), GenerationParams::default()).await.unwrap();
    let second = Annotator::remote(RemoteClient::new(provider(addr, "c"), Some(cache.clone())).unwrap());
    let b = second.annotate(&prompt(&["p1"]), GenerationParams::default()).await.unwrap();
    assert_eq!(a, b);
    assert_eq!(mock.bodies.lock().unwrap().len(), 1);

    // a different temperature is a different key
    let hot = GenerationParams { temperature: 1.0, ..GenerationParams::default() };
    second.annotate(&prompt(&["p1"]), hot).await.unwrap();
    assert_eq!(mock.bodies.lock().unwrap().len(), 2);
}

#[tokio::test]
async fn concurrency_cap_is_respected() {
    let mock = Arc::new(Mock { delay_ms: 30, ..Mock::default() });
    *mock.fallback.lock().unwrap() = Some((StatusCode::OK, trailer(3, 75.0)));
    let addr = start(mock.clone()).await;
    let mut cfg = provider(addr, "capped");
    cfg.max_concurrency = 2;
    let annotator = Arc::new(Annotator::remote(RemoteClient::new(cfg, None).unwrap()));
    let jobs = (0..8).map(|i| {
        let a = annotator.clone();
        async move { a.annotate(&prompt(&[&format!("p{i}")]), GenerationParams::default()).await }
    });
    let results = futures::future::join_all(jobs).await;
    assert!(results.iter().all(Result::is_ok));
    assert_eq!(mock.bodies.lock().unwrap().len(), 8);
    assert!(mock.peak.load(Ordering::SeqCst) <= 2, "peak {}", mock.peak.load(Ordering::SeqCst));
}

#[tokio::test]
async fn custom_template_and_response_path() {
    let mock = Arc::new(Mock::default());
    *mock.fallback.lock().unwrap() = Some((StatusCode::OK, trailer(2, 55.0)));
    let addr = start(mock.clone()).await;
    let mut cfg = provider(addr, "custom");
    cfg.request_template = Some(json!({
        "engine": "{model}",
        "input": "[{model}] {prompt}",
        "options": {"temp": "{temperature}", "limit": "{max_tokens}"},
    }));
    cfg.response_path = "choices.0.message.content".into();
    let annotator = Annotator::remote(RemoteClient::new(cfg, None).unwrap());
    annotator.annotate(&prompt(&["p1"]), GenerationParams { temperature: 0.0, max_tokens: 2000 }).await.unwrap();
    let body = mock.bodies.lock().unwrap()[0].clone();
    assert_eq!(body, json!({
        "engine": "mock-1",
        "input": "[mock-1] Rate the pane.",
        "options": {"temp": 0.0, "limit": 2000},
    }));
}

#[tokio::test]
async fn dead_annotator_fails_the_run() {
    let mock = Arc::new(Mock::default());
    let addr = start(mock).await;
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate(&SynthSpec::new(40, vec![TaskKind::Quality], 3));
    let toml = format!(
        r#"
corpus = "unused.jsonl"
tasks = ["quality"]
output_dir = "out"

[cache]
enabled = false

[[annotator]]
kind = "simulated"
id = "sim"
hit_rate = 0.8
conf_correct_mean = 90.0
conf_wrong_mean = 70.0
conf_sd = 5.0
seed = 1

[[annotator]]
kind = "remote"
id = "dead"
base_url = "http://{addr}/v1/chat/completions"
model = "mock-1"
rate_per_minute = 0
"#
    );
    let path = dir.path().join("run.toml");
    std::fs::write(&path, toml).unwrap();
    let cfg = RunConfig::load(&path).unwrap();
    let pipeline = Pipeline::from_corpus(cfg, corpus, true).unwrap();
    let err = pipeline.calibrate().await.unwrap_err();
    assert!(matches!(err, RunError::Annotator(_)), "{err}");
    assert_eq!(err.exit_code(), 4);
}
