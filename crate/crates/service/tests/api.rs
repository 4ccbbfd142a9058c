use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Value};

use dforge::bank::{Language, QuestionItem, Source};
use dforge::parser::DistractorSet;
use dforge::session::{create_session, AnnotationSession, SessionOptions};
use dforge_service::{router, SessionStore};

const TAGS: [&str; 3] = ["mt5", "zero", "dynamic"];

fn item(id: &str) -> QuestionItem {
    QuestionItem {
        id: id.into(),
        stem: format!("Which city is meant in {id}?"),
        answer: "Brussels".into(),
        distractors: vec![],
        language: Language::En,
        subject: "Geography".into(),
        source: Source::Test,
    }
}

/// 3 models x 10 distractors on one question, 4 strings shared: 26 pairs.
fn session() -> AnnotationSession {
    let mk = |p: &str| (0..10).map(|i| format!("{p} city {i}")).collect::<Vec<_>>();
    let a = mk("north");
    let mut b = mk("south");
    let mut c = mk("east");
    b[0] = a[0].clone();
    b[1] = a[1].clone();
    c[0] = a[2].clone();
    c[1] = b[5].clone();
    let sets = [(TAGS[0], a), (TAGS[1], b), (TAGS[2], c)]
        .into_iter()
        .map(|(tag, ds)| DistractorSet {
            question_id: "q1".into(),
            model_tag: tag.into(),
            requested_n: 10,
            distractors: ds,
            parse_warnings: vec![],
        })
        .collect::<Vec<_>>();
    let opts = SessionOptions {
        session_id: Some("t1-geo".into()),
        ..Default::default()
    };
    create_session(&[item("q1")], &sets, "t1", 11, &opts).unwrap()
}

struct Server {
    base: String,
    token: String,
    client: reqwest::Client,
    handle: tokio::task::JoinHandle<()>,
}

async fn start(dir: &Path, token: &str) -> Server {
    dforge::llm::install_crypto_provider();
    let store = Arc::new(SessionStore::open(dir).unwrap());
    let app = router(store, None);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    Server {
        base: format!("http://{addr}/sessions/t1-geo"),
        token: token.to_string(),
        client: reqwest::Client::new(),
        handle,
    }
}

impl Server {
    fn url(&self, path: &str) -> String {
        format!("{}/{path}?token={}", self.base, self.token)
    }

    async fn get(&self, path: &str) -> (u16, String) {
        let r = self.client.get(self.url(path)).send().await.unwrap();
        (r.status().as_u16(), r.text().await.unwrap())
    }

    async fn post(&self, body: Value) -> (u16, Value) {
        let r = self
            .client
            .post(self.url("ratings"))
            .json(&body)
            .send()
            .await
            .unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    async fn stop(self) {
        // graceful shutdown would wait on idle keep-alive connections
        self.handle.abort();
        let _ = self.handle.await;
    }
}

fn setup() -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let s = session();
    SessionStore::open(dir.path()).unwrap().create(&s).unwrap();
    (dir, s.token)
}

fn assert_blind(body: &str) {
    for tag in TAGS {
        assert!(!body.contains(tag), "payload leaks {tag}: {body}");
    }
}

#[tokio::test]
async fn rating_flow_and_cursor() {
    let (dir, token) = setup();
    let srv = start(dir.path(), &token).await;

    let (status, body) = srv.get("next").await;
    assert_eq!(status, 200);
    assert_blind(&body);
    let first: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(first["position"], 0);
    assert_eq!(first["progress"], json!({"rated": 0, "total": 26}));
    assert_eq!(first["answer"], "Brussels");

    let (status, ack) = srv
        .post(json!({"question_id": "q1", "distractor": first["distractor"], "label": "Good"}))
        .await;
    assert_eq!(status, 200);
    assert_eq!(ack["progress"]["rated"], 1);

    let (_, body) = srv.get("next").await;
    let second: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(second["position"], 1);
    assert_ne!(second["distractor"], first["distractor"]);

    let (status, body) = srv.get("summary").await;
    assert_eq!(status, 200);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["rated"], 1);
    assert!(!body.contains("histogram"));
    srv.stop().await;
}

#[tokio::test]
async fn errors_map_to_status_codes() {
    let (dir, token) = setup();
    let srv = start(dir.path(), &token).await;
    let (status, _) = srv
        .post(json!({"question_id": "q1", "distractor": "north city 3", "label": "EXCELLENT"}))
        .await;
    assert_eq!(status, 400);
    let (status, _) = srv
        .post(json!({"question_id": "q1", "distractor": "west city 3", "label": "GOOD"}))
        .await;
    assert_eq!(status, 404);
    let (status, _) = srv
        .post(json!({"question_id": "q1", "distractor": "north city 3", "label": "GOOD", "base_version": 5}))
        .await;
    assert_eq!(status, 409);

    let wrong = Server {
        token: "nope".into(),
        ..start(dir.path(), &token).await
    };
    assert_eq!(wrong.get("next").await.0, 404);
    wrong.stop().await;

    let other = reqwest::get(srv.url("next").replace("t1-geo", "t9-geo")).await.unwrap();
    assert_eq!(other.status().as_u16(), 404);
    assert_eq!(srv.get("export").await.0, 409);
    srv.stop().await;
}

#[tokio::test]
async fn replay_does_not_double_count() {
    let (dir, token) = setup();
    let srv = start(dir.path(), &token).await;
    let body = json!({
        "question_id": "q1", "distractor": "north city 4", "label": "POOR",
        "idempotency_key": "k-1", "base_version": 0
    });
    let (s1, a1) = srv.post(body.clone()).await;
    let (s2, a2) = srv.post(body.clone()).await;
    assert_eq!((s1, s2), (200, 200));
    assert_eq!(a1["progress"]["rated"], 1);
    assert_eq!(a2["progress"]["rated"], 1);
    assert_eq!(a2["status"], "replayed");

    let stored = AnnotationSession::load(dir.path().join("t1-geo.json")).unwrap();
    assert_eq!(stored.audit.len(), 1);

    let mut changed = body.clone();
    changed["label"] = json!("GOOD");
    assert_eq!(srv.post(changed).await.0, 409);
    srv.stop().await;
}

#[tokio::test]
async fn acked_ratings_survive_restart() {
    let (dir, token) = setup();
    let srv = start(dir.path(), &token).await;
    let mut acked = Vec::new();
    for _ in 0..10 {
        let (_, body) = srv.get("next").await;
        let next: Value = serde_json::from_str(&body).unwrap();
        let (status, _) = srv
            .post(json!({"question_id": "q1", "distractor": next["distractor"], "label": "NONSENSE"}))
            .await;
        assert_eq!(status, 200);
        acked.push(next["distractor"].as_str().unwrap().to_string());
    }
    // no graceful flush: the task is aborted outright
    srv.handle.abort();

    let srv = start(dir.path(), &token).await;
    let (_, body) = srv.get("summary").await;
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap(), json!({"rated": 10, "total": 26, "complete": false}));
    let stored = AnnotationSession::load(dir.path().join("t1-geo.json")).unwrap();
    for d in &acked {
        assert!(stored.label_of("q1", d).is_some(), "{d}");
    }
    srv.stop().await;
}

#[tokio::test]
async fn blinded_until_complete_then_export() {
    let (dir, token) = setup();
    let srv = start(dir.path(), &token).await;
    loop {
        let (_, body) = srv.get("next").await;
        assert_blind(&body);
        let (_, summary) = srv.get("summary").await;
        assert_blind(&summary);
        let next: Value = serde_json::from_str(&body).unwrap();
        if next["status"] == "complete" {
            break;
        }
        let (status, ack) = srv
            .post(json!({"question_id": "q1", "distractor": next["distractor"], "label": "good"}))
            .await;
        assert_eq!(status, 200);
        assert_blind(&ack.to_string());
    }
    let (_, summary) = srv.get("summary").await;
    let summary: Value = serde_json::from_str(&summary).unwrap();
    let hist: u64 = summary["histogram"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(hist, 26);

    let (status, csv) = srv.get("export").await;
    assert_eq!(status, 200);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("question_id,distractor,model_tags,annotator_id,label"));
    assert_eq!(lines.count(), 26);
    assert!(csv.contains("mt5|zero"));
    srv.stop().await;
}
