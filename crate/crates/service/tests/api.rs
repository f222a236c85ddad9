//! Contract tests over real TCP against stub backends.

use std::path::Path;
use std::sync::Arc;

use bookend_core::session::{Session, SessionStore};
use bookend_core::BackendSuite;
use bookend_service::{router, ServiceOptions};
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

const START: &str = "A husband and his wife are looking for a new home.";

struct Server {
    base: String,
    client: Client,
}

impl Server {
    async fn start(dir: &Path, options: ServiceOptions) -> Self {
        let store = Arc::new(SessionStore::open(dir, BackendSuite::stubs("<mask>")).unwrap());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let app = router(store, &options);
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        Self {
            base: format!("http://{addr}"),
            client: Client::new(),
        }
    }

    async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let r = self
            .client
            .post(format!("{}{path}", self.base))
            .json(&body)
            .send()
            .await
            .unwrap();
        (r.status(), r.json().await.unwrap())
    }

    async fn post_empty(&self, path: &str) -> (StatusCode, Value) {
        let r = self.client.post(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status(), r.json().await.unwrap())
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status(), r.json().await.unwrap())
    }

    async fn create(&self) -> String {
        let (status, body) = self
            .post("/sessions", json!({"start": START, "config": {"seed": 7}}))
            .await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        body["id"].as_str().unwrap().to_string()
    }
}

fn assert_error(status: StatusCode, body: &Value, want_status: StatusCode, code: &str) {
    assert_eq!(status, want_status, "{body}");
    assert_eq!(body["code"], code, "{body}");
    assert!(body["message"].as_str().is_some_and(|m| !m.is_empty()));
    assert!(body.get("detail").is_some());
}

#[tokio::test]
async fn health() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(dir.path(), ServiceOptions::default()).await;
    let (status, body) = srv.get("/healthz").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert!(body["backends"]["scorer"].as_str().unwrap().starts_with("stub:"));
}

#[tokio::test]
async fn full_flow_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(dir.path(), ServiceOptions::default()).await;
    let id = srv.create().await;

    let (status, session) = srv.get(&format!("/sessions/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(session["scheme"], "lm");
    assert_eq!(session["attempts"].as_array().unwrap().len(), 1);
    assert_eq!(session["attempts"][0]["phrase_list_source"], "generated");

    let (status, edited) = srv
        .post(
            &format!("/sessions/{id}/phrase-list"),
            json!({"tokens": ["dog", "park"]}),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(edited["index"], 1);
    assert_eq!(edited["attempt"]["phrase_list"], json!(["dog", "park"]));
    assert_eq!(edited["attempt"]["phrase_list_source"], "user-edited");

    let (status, attempt) = srv.post_empty(&format!("/sessions/{id}/attempts/1/stop")).await;
    assert_eq!(status, StatusCode::OK, "{attempt}");
    assert!(attempt["stop"].is_string());

    for remaining in [2, 1, 0] {
        let (status, step) = srv.post_empty(&format!("/sessions/{id}/attempts/1/infill-step")).await;
        assert_eq!(status, StatusCode::OK, "{step}");
        assert_eq!(step["remaining"], remaining);
        assert!(step["entry"]["gap"].is_u64());
        assert_eq!(step["entry"]["scores"].as_array().unwrap().len(), 3 - remaining);
        assert_eq!(step["sentences"].as_array().unwrap().len(), 5 - remaining);
    }
    let (status, body) = srv.post_empty(&format!("/sessions/{id}/attempts/1/infill-step")).await;
    assert_error(status, &body, StatusCode::CONFLICT, "conflict");

    let (status, scores) = srv.post_empty(&format!("/sessions/{id}/attempts/1/score")).await;
    assert_eq!(status, StatusCode::OK, "{scores}");
    let overlap = scores["relatedness"]["lexical_overlap"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&overlap));

    let (_, live) = srv.get(&format!("/sessions/{id}")).await;
    assert_eq!(live["attempts"][0], session["attempts"][0], "earlier attempt changed");
    assert_eq!(
        live["attempts"][1]["final_story"]["sentences"]
            .as_array()
            .unwrap()
            .len(),
        5
    );
    assert_eq!(live["attempts"][1]["scores"], scores);

    // a fresh store replays the event log into the same JSON
    let reopened = SessionStore::open(dir.path(), BackendSuite::stubs("<mask>")).unwrap();
    let replayed: Session = reopened.get(&id).unwrap();
    assert_eq!(serde_json::to_value(&replayed).unwrap(), live);
    let rebuilt = Session::replay(&reopened.events(&id).unwrap()).unwrap();
    assert_eq!(serde_json::to_value(&rebuilt).unwrap(), live);
}

#[tokio::test]
async fn stepwise_equals_complete() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(dir.path(), ServiceOptions::default()).await;
    let (a, b) = (srv.create().await, srv.create().await);
    for id in [&a, &b] {
        srv.post_empty(&format!("/sessions/{id}/attempts/0/stop")).await;
    }
    for _ in 0..3 {
        srv.post_empty(&format!("/sessions/{a}/attempts/0/infill-step")).await;
    }
    srv.post_empty(&format!("/sessions/{b}/attempts/0/infill-step")).await;
    let (status, done) = srv
        .post_empty(&format!("/sessions/{b}/attempts/0/infill-complete"))
        .await;
    assert_eq!(status, StatusCode::OK, "{done}");

    let (_, sa) = srv.get(&format!("/sessions/{a}")).await;
    let (_, sb) = srv.get(&format!("/sessions/{b}")).await;
    assert_eq!(sa["attempts"][0]["final_story"], done["story"]);
    assert_eq!(sa["attempts"][0]["infill"], sb["attempts"][0]["infill"]);
}

#[tokio::test]
async fn error_bodies() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(dir.path(), ServiceOptions::default()).await;

    let (s, b) = srv.get("/sessions/nope").await;
    assert_error(s, &b, StatusCode::NOT_FOUND, "not_found");
    let (s, b) = srv.post("/sessions", json!({"start": "One. Two."})).await;
    assert_error(s, &b, StatusCode::BAD_REQUEST, "invalid_input");
    let (s, b) = srv.post("/sessions", json!({"begin": START})).await;
    assert_error(s, &b, StatusCode::BAD_REQUEST, "invalid_input");
    let (s, b) = srv
        .post("/sessions", json!({"start": START, "scheme": "llm-method-9"}))
        .await;
    assert_error(s, &b, StatusCode::BAD_REQUEST, "invalid_input");

    let id = srv.create().await;
    let (s, b) = srv.post_empty(&format!("/sessions/{id}/attempts/0/infill-step")).await;
    assert_error(s, &b, StatusCode::CONFLICT, "conflict");
    let (s, b) = srv.post_empty(&format!("/sessions/{id}/attempts/0/score")).await;
    assert_error(s, &b, StatusCode::CONFLICT, "conflict");
    let (s, b) = srv.post_empty(&format!("/sessions/{id}/attempts/4/stop")).await;
    assert_error(s, &b, StatusCode::NOT_FOUND, "not_found");
    let (s, b) = srv.post_empty(&format!("/sessions/{id}/attempts/x/stop")).await;
    assert_error(s, &b, StatusCode::BAD_REQUEST, "invalid_input");
    let (s, b) = srv.post_empty(&format!("/sessions/{id}/phrase-list")).await;
    assert_error(s, &b, StatusCode::BAD_REQUEST, "invalid_input");
    let (s, b) = srv.get("/nowhere").await;
    assert_error(s, &b, StatusCode::NOT_FOUND, "not_found");
}

#[tokio::test]
async fn llm_scheme_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(dir.path(), ServiceOptions::default()).await;
    let (status, session) = srv
        .post(
            "/sessions",
            json!({"start": START, "scheme": "llm-method-2", "config": {"seed": 1}}),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED, "{session}");
    let id = session["id"].as_str().unwrap();
    let (s, b) = srv.post_empty(&format!("/sessions/{id}/attempts/0/stop")).await;
    assert_eq!(s, StatusCode::OK, "{b}");
    let (s, b) = srv.post_empty(&format!("/sessions/{id}/attempts/0/infill-step")).await;
    assert_error(s, &b, StatusCode::BAD_REQUEST, "unsupported");
    let (s, b) = srv
        .post_empty(&format!("/sessions/{id}/attempts/0/infill-complete"))
        .await;
    assert_eq!(s, StatusCode::OK, "{b}");
    assert_eq!(b["story"]["sentences"].as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn static_files_and_cors() {
    let dir = tempfile::tempdir().unwrap();
    let web = tempfile::tempdir().unwrap();
    std::fs::write(web.path().join("index.html"), "<h1>ui</h1>").unwrap();
    let srv = Server::start(
        dir.path(),
        ServiceOptions {
            static_dir: Some(web.path().to_path_buf()),
            cors: true,
            ..Default::default()
        },
    )
    .await;
    let r = srv
        .client
        .get(format!("{}/index.html", srv.base))
        .header("Origin", "http://example.test")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert!(r.headers().contains_key("access-control-allow-origin"));
    assert_eq!(r.text().await.unwrap(), "<h1>ui</h1>");
}

#[tokio::test]
async fn server_defaults_fill_missing_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut options = ServiceOptions::default();
    options.default_config.seed = Some(42);
    options.default_config.n = 7;
    let srv = Server::start(dir.path(), options).await;
    let (_, a) = srv.post("/sessions", json!({"start": START})).await;
    assert_eq!(a["config"]["seed"], 42);
    assert_eq!(a["config"]["n"], 7);
    let (_, b) = srv
        .post(
            "/sessions",
            json!({"start": START, "config": {"n": 3, "params": {"temperature": 0.5}}}),
        )
        .await;
    assert_eq!(b["config"]["seed"], 42);
    assert_eq!(b["config"]["n"], 3);
    assert_eq!(b["config"]["params"]["temperature"], 0.5);
    assert_eq!(b["config"]["params"]["max_new_tokens"], 64);
    let (s, e) = srv
        .post("/sessions", json!({"start": START, "config": {"n": "x"}}))
        .await;
    assert_error(s, &e, StatusCode::BAD_REQUEST, "invalid_input");
}
