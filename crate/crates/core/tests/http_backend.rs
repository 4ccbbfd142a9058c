use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use dforge::bank::Language;
use dforge::llm::{
    complete, complete_batch, HttpBackend, LlmError, LlmRequest, RequestSettings, RetryPolicy,
};
use dforge::{Prompt, Strategy};

#[derive(Default)]
struct Fake {
    in_flight: AtomicUsize,
    high_water: AtomicUsize,
    hits: Mutex<HashMap<String, usize>>,
    order: Mutex<Vec<String>>,
}

async fn chat(State(fake): State<Arc<Fake>>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let prompt = body["messages"][0]["content"].as_str().unwrap_or("").to_string();
    let auth = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .unwrap_or("");
    let hit = {
        let mut hits = fake.hits.lock().unwrap();
        let n = hits.entry(prompt.clone()).or_insert(0);
        *n += 1;
        *n
    };
    fake.order.lock().unwrap().push(format!("start {prompt}"));
    let now = fake.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    fake.high_water.fetch_max(now, Ordering::SeqCst);
    tokio::time::sleep(Duration::from_millis(30)).await;
    fake.in_flight.fetch_sub(1, Ordering::SeqCst);
    fake.order.lock().unwrap().push(format!("end {prompt}"));

    if auth != "Bearer sk-test" {
        return StatusCode::UNAUTHORIZED.into_response();
    }
    if prompt.starts_with("flaky") && hit == 1 {
        return (StatusCode::TOO_MANY_REQUESTS, [("retry-after", "0")], "slow down").into_response();
    }
    if prompt.starts_with("broken") {
        return (StatusCode::BAD_REQUEST, "bad request").into_response();
    }
    if prompt.starts_with("garbled") {
        return "not json".into_response();
    }
    if prompt.starts_with("down") {
        return StatusCode::SERVICE_UNAVAILABLE.into_response();
    }
    Json(json!({"choices": [{"message": {"role": "assistant", "content": format!("1. re {prompt}")}}]}))
        .into_response()
}

async fn serve() -> (String, Arc<Fake>) {
    let fake = Arc::new(Fake::default());
    let app = Router::new()
        .route("/v1/chat", post(chat))
        .with_state(fake.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1/chat"), fake)
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_retries: 2,
        base_delay: Duration::from_millis(5),
        max_delay: Duration::from_millis(20),
    }
}

fn request(text: &str) -> LlmRequest {
    let prompt = Prompt {
        text: text.to_string(),
        strategy: Strategy::Zero,
        target_id: text.to_string(),
        example_ids: vec![],
        n_distractors: 10,
        language: Language::En,
    };
    LlmRequest::with_id(prompt, &RequestSettings::default(), format!("req-{text}"))
}

fn backend(url: &str, key: &str) -> HttpBackend {
    HttpBackend::new(url, key, Duration::from_secs(5), fast_retry()).unwrap()
}

#[tokio::test]
async fn rate_limit_then_success_is_retried() {
    let (url, fake) = serve().await;
    let b = backend(&url, "sk-test");
    let resp = complete(&request("flaky one"), &b).await.unwrap();
    assert_eq!(resp.raw_text, "1. re flaky one");
    assert_eq!(resp.attempts, 2);
    assert_eq!(resp.retries(), 1);
    assert_eq!(resp.request_id, "req-flaky one");
    assert_eq!(fake.hits.lock().unwrap()["flaky one"], 2);
}

#[tokio::test]
async fn auth_failure_is_not_retried() {
    let (url, fake) = serve().await;
    let b = backend(&url, "wrong");
    let err = complete(&request("hello"), &b).await.unwrap_err();
    assert!(matches!(err, LlmError::Auth { status: 401 }), "{err:?}");
    assert_eq!(fake.hits.lock().unwrap()["hello"], 1);
}

#[tokio::test]
async fn server_errors_exhaust_retries() {
    let (url, fake) = serve().await;
    let err = complete(&request("down"), &backend(&url, "sk-test")).await.unwrap_err();
    assert!(
        matches!(err, LlmError::Status { status: 503, attempts: 3, .. }),
        "{err:?}"
    );
    assert_eq!(fake.hits.lock().unwrap()["down"], 3);
}

#[tokio::test]
async fn client_errors_and_malformed_bodies() {
    let (url, _) = serve().await;
    let b = backend(&url, "sk-test");
    assert!(matches!(
        complete(&request("broken"), &b).await,
        Err(LlmError::Status { status: 400, attempts: 1, .. })
    ));
    assert!(matches!(
        complete(&request("garbled"), &b).await,
        Err(LlmError::Malformed(_))
    ));
}

#[tokio::test]
async fn unreachable_endpoint_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let b = backend(&format!("http://{addr}/v1/chat"), "sk-test");
    assert!(matches!(
        complete(&request("x"), &b).await,
        Err(LlmError::Transport { attempts: 3, .. })
    ));
}

#[tokio::test]
async fn parallelism_is_bounded() {
    let (url, fake) = serve().await;
    let b = backend(&url, "sk-test");
    let reqs: Vec<_> = (0..10).map(|i| request(&format!("p{i}"))).collect();
    let out = complete_batch(&reqs, &b, 4).await;
    assert_eq!(out.len(), 10);
    for (i, r) in out.iter().enumerate() {
        assert_eq!(r.as_ref().unwrap().raw_text, format!("1. re p{i}"));
    }
    let hw = fake.high_water.load(Ordering::SeqCst);
    assert!((2..=4).contains(&hw), "high water {hw}");
}

#[tokio::test]
async fn parallelism_one_is_sequential() {
    let (url, fake) = serve().await;
    let b = backend(&url, "sk-test");
    let reqs: Vec<_> = (0..4).map(|i| request(&format!("s{i}"))).collect();
    complete_batch(&reqs, &b, 1).await;
    assert_eq!(fake.high_water.load(Ordering::SeqCst), 1);
    let order = fake.order.lock().unwrap().clone();
    let expected: Vec<String> = (0..4)
        .flat_map(|i| [format!("start s{i}"), format!("end s{i}")])
        .collect();
    assert_eq!(order, expected);
}

#[tokio::test]
async fn one_failure_in_a_batch_keeps_its_index() {
    let (url, _) = serve().await;
    let b = backend(&url, "sk-test");
    let reqs: Vec<_> = (0..10)
        .map(|i| request(&if i == 6 { "broken".to_string() } else { format!("b{i}") }))
        .collect();
    let out = complete_batch(&reqs, &b, 3).await;
    for (i, r) in out.iter().enumerate() {
        assert_eq!(r.is_err(), i == 6, "index {i}");
    }
}

#[test]
fn missing_credential_is_reported() {
    std::env::remove_var(dforge::llm::API_KEY_ENV);
    assert!(matches!(
        HttpBackend::from_env("http://127.0.0.1:1", Duration::from_secs(1), fast_retry()),
        Err(LlmError::MissingCredential)
    ));
}
