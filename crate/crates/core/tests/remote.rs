//! RemoteBackend against an in-process fake model server.

use std::net::SocketAddr;
use std::thread;

use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use bookend_core::backends::remote::RemoteBackend;
use bookend_core::backends::{BackendError, ErrorCategory, GenerationParams, GenerationRequest};
use bookend_core::{
    ChatGenerator, PositionScorer, Sentence, SentenceEmbedder, SyntaxParser, TextGenerator, TokenEmbedder,
};

fn fake_server(app: Router) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

fn healthy() -> Router {
    Router::new()
        .route(
            "/generate",
            post(|Json(b): Json<Value>| async move {
                Json(json!({"text": format!("echo {} <stop> tail", b["prompt"].as_str().unwrap())}))
            }),
        )
        .route(
            "/chat",
            post(|Json(b): Json<Value>| async move {
                Json(json!({"text": format!("{} / {}", b["system"].as_str().unwrap(), b["user"].as_str().unwrap())}))
            }),
        )
        .route(
            "/embed-tokens",
            post(|Json(b): Json<Value>| async move {
                let tokens = b["tokens"].as_array().unwrap().clone();
                let embeddings: Vec<Value> = tokens
                    .iter()
                    .map(|t| json!({"token": t, "vector": [t.as_str().unwrap().len() as f64, 1.0]}))
                    .collect();
                Json(json!({ "embeddings": embeddings }))
            }),
        )
        .route(
            "/embed-sentence",
            post(|| async { Json(json!({"vector": [0.5, 0.5]})) }),
        )
        .route(
            "/score-position",
            post(|Json(b): Json<Value>| async move {
                let text = b["text"].as_str().unwrap();
                Json(json!({"probability": if text.starts_with("<mask>") { 0.25 } else { 0.75 }}))
            }),
        )
        .route("/parse", post(|| async { Json(json!({"tree": "(S (NP DT NN) VBD)"})) }))
}

fn s(t: &str) -> Sentence {
    Sentence::new(t).unwrap()
}

#[test]
fn every_contract_round_trips() {
    let addr = fake_server(healthy());
    let r = RemoteBackend::new(&format!("http://{addr}/"), "<mask>");
    assert_eq!(r.base_url(), format!("http://{addr}"));

    let params = GenerationParams::default().with_stop_markers(["<stop>"]);
    let text = r.generate(&GenerationRequest::new("hi", params.clone())).unwrap();
    assert_eq!(text, "echo hi ");
    assert_eq!(r.chat("sys", "usr", &params).unwrap(), "sys / usr");

    let e = r.embed_tokens(&s("The dog ran.")).unwrap();
    assert_eq!(e.len(), 3);
    assert_eq!(e[1].token, "dog");
    assert_eq!(r.embed_sentence(&s("x")).unwrap().vector, vec![0.5, 0.5]);
    assert_eq!(r.score_position("A. <mask> B.").unwrap(), 0.75);
    assert_eq!(r.parse(&s("The dog ran.")).unwrap().to_string(), "(S (NP DT NN) VBD)");
}

#[test]
fn scorer_checks_marker_locally() {
    let addr = fake_server(healthy());
    let r = RemoteBackend::new(&format!("http://{addr}"), "<mask>");
    let err = r.score_position("A. B.").unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Contract);
}

#[test]
fn status_and_body_errors_are_categorized() {
    let app = Router::new()
        .route(
            "/generate",
            post(|| async { (StatusCode::BAD_REQUEST, "prompt too long") }),
        )
        .route("/chat", post(|| async { StatusCode::SERVICE_UNAVAILABLE }))
        .route("/embed-sentence", post(|| async { "not json" }))
        .route("/score-position", post(|| async { Json(json!({"probability": 1.5})) }))
        .route("/embed-tokens", post(|| async { Json(json!({"embeddings": []})) }))
        .route("/parse", post(|| async { Json(json!({"tree": "(S (NP"})) }));
    let addr = fake_server(app);
    let r = RemoteBackend::new(&format!("http://{addr}"), "<mask>");
    let p = GenerationParams::default();

    let e = r.generate(&GenerationRequest::new("x", p.clone())).unwrap_err();
    assert!(
        matches!(e, BackendError::InvalidRequest(ref m) if m.contains("prompt too long")),
        "{e}"
    );
    assert_eq!(r.chat("a", "b", &p).unwrap_err().category(), ErrorCategory::Transport);
    assert_eq!(
        r.embed_sentence(&s("x")).unwrap_err().category(),
        ErrorCategory::Transport
    );
    assert_eq!(
        r.score_position("<mask> A.").unwrap_err().category(),
        ErrorCategory::Generation
    );
    assert_eq!(
        r.embed_tokens(&s("a b")).unwrap_err().category(),
        ErrorCategory::Generation
    );
    assert_eq!(r.parse(&s("a b")).unwrap_err().category(), ErrorCategory::Generation);
}

#[test]
fn unreachable_server_is_transport() {
    // bind then drop to get a port nobody listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let r = RemoteBackend::new(&format!("http://127.0.0.1:{port}"), "<mask>");
    let e = r.embed_sentence(&s("x")).unwrap_err();
    assert_eq!(e.category(), ErrorCategory::Transport);
}
