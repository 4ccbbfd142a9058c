use std::time::Duration;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use dforge::bank::{Language, QuestionBank, QuestionItem, Source};
use dforge::retrieval::{rank, ExternalScorer, RankOptions, ScoreError, SimilarityScorer};

async fn score(Json(body): Json<Value>) -> Response {
    let stem = body["candidate"]["stem"].as_str().unwrap_or("");
    match stem {
        "status" => StatusCode::INTERNAL_SERVER_ERROR.into_response(),
        "garbled" => "{\"nope\": 1}".into_response(),
        "negative" => Json(json!({"score": -1.0})).into_response(),
        "slow" => {
            tokio::time::sleep(Duration::from_millis(500)).await;
            Json(json!({"score": 1.0})).into_response()
        }
        // deterministic similarity: the stem length
        s => Json(json!({"score": s.len() as f64})).into_response(),
    }
}

/// Runs the fake scorer on its own thread and runtime, since the scorer
/// client is blocking.
fn serve() -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, Router::new().route("/score", post(score)))
                .await
                .unwrap();
        });
    });
    format!("http://{}/score", rx.recv().unwrap())
}

fn item(id: &str, stem: &str) -> QuestionItem {
    QuestionItem {
        id: id.into(),
        stem: stem.into(),
        answer: "a".into(),
        distractors: vec!["x".into()],
        language: Language::En,
        subject: "History".into(),
        source: Source::Bank,
    }
}

#[test]
fn scorer_errors_are_typed() {
    let url = serve();
    let s = ExternalScorer::new(&url, Duration::from_millis(200)).unwrap();
    let q = item("q", "query");
    assert_eq!(s.score(&q, &item("c", "four")).unwrap(), 4.0);
    assert!(matches!(
        s.score(&q, &item("c", "status")),
        Err(ScoreError::Status { status: 500 })
    ));
    assert!(matches!(s.score(&q, &item("c", "garbled")), Err(ScoreError::Malformed(_))));
    assert!(matches!(s.score(&q, &item("c", "negative")), Err(ScoreError::InvalidScore(_))));
    assert!(matches!(s.score(&q, &item("c", "slow")), Err(ScoreError::Timeout)));
}

#[test]
fn ranking_uses_external_scores() {
    let url = serve();
    let s = ExternalScorer::new(&url, Duration::from_secs(2)).unwrap();
    let bank = QuestionBank::new(
        "b",
        vec![item("c1", "ab"), item("c2", "abcd"), item("c3", "abc"), item("c4", "abcd")],
    )
    .unwrap();
    let q = item("q", "query");
    let opts = RankOptions { k: 3, ..Default::default() };
    let ranked = rank(&q, &bank, &opts, &s).unwrap();
    assert_eq!(ranked.ids().collect::<Vec<_>>(), ["c2", "c4", "c3"]);

    let bad = QuestionBank::new("b", vec![item("c1", "ab"), item("c9", "status")]).unwrap();
    assert!(rank(&q, &bad, &opts, &s).is_err());
}
