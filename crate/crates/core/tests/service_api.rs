use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use sketchfill::inference::{FillMode, GenerationConfig};
use sketchfill::model::Variant;
use sketchfill::service::{router, AppState, LoadedModel, ServiceConfig};

mod common;

fn loaded(variant: Variant) -> LoadedModel {
    let (model, data) = common::small_model(variant, 12, 3);
    let lm = variant.rerank().then(|| common::small_lm(&model, 4));
    let mut pool: Vec<Vec<String>> =
        data.iter().map(|ex| ex.personas.iter().map(|p| p.text.clone()).collect()).collect();
    pool.dedup();
    LoadedModel { name: "tiny.ck".into(), model, lm, persona_pool: pool }
}

fn app_with(variant: Variant, static_dir: Option<std::path::PathBuf>) -> Router {
    let config = ServiceConfig {
        generation: GenerationConfig {
            beam_size: 10,
            max_len: 12,
            fill_mode: FillMode::for_variant(variant),
            ..GenerationConfig::default()
        },
        static_dir,
        seed: 0,
    };
    router(AppState::new(Some(loaded(variant)), config))
}

fn app() -> Router {
    app_with(Variant::SfAR, None)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header(header::CONTENT_TYPE, "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn new_session(app: &Router, body: Value) -> String {
    let (status, v) = call(app, "POST", "/api/session", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    v["id"].as_str().unwrap().to_string()
}

async fn say(app: &Router, id: &str, text: &str) -> Value {
    let (status, v) = call(app, "POST", &format!("/api/session/{id}/message"), Some(json!({ "text": text }))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    v
}

const PERSONA: [&str; 5] = [
    "i have a pet turtle .",
    "my favorite food is pasta .",
    "i work as a dentist .",
    "i live in boston .",
    "my favorite color is orange .",
];

#[tokio::test]
async fn health_reports_checkpoint() {
    let (status, v) = call(&app(), "GET", "/api/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v, json!({ "status": "ok", "checkpoint": "tiny.ck" }));
}

#[tokio::test]
async fn without_a_model_sessions_are_unavailable() {
    let app = router(AppState::new(None, ServiceConfig::default()));
    let (status, v) = call(&app, "GET", "/api/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "no_model");
    let (status, v) = call(&app, "POST", "/api/session", Some(json!({}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["code"], "model_unavailable");
    assert!(v["error"].is_string());
}

#[tokio::test]
async fn sessions_get_distinct_ids_and_personas() {
    let app = app();
    let a = new_session(&app, json!({})).await;
    let b = new_session(&app, json!({})).await;
    assert_ne!(a, b);
    let (_, v) = call(&app, "POST", "/api/session", Some(json!({ "persona": PERSONA }))).await;
    assert_eq!(v["persona"], json!(PERSONA));
    for _ in 0..10 {
        let (_, v) = call(&app, "POST", "/api/session", Some(json!({}))).await;
        let n = v["persona"].as_array().unwrap().len();
        assert!((4..=5).contains(&n), "{n} traits");
    }
    let (status, _) = call(&app, "POST", "/api/session", None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn invalid_personas_are_rejected() {
    let app = app();
    for bad in [json!([]), json!(["i like cats .", "  "])] {
        let (status, v) = call(&app, "POST", "/api/session", Some(json!({ "persona": bad }))).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(v["code"], "validation_error");
    }
}

#[tokio::test]
async fn messages_extend_history_by_two_turns() {
    let app = app();
    let id = new_session(&app, json!({ "persona": PERSONA })).await;
    for (i, text) in ["hi what's up", "do you have any pets ?", "what do you do for work ?"].iter().enumerate() {
        let v = say(&app, &id, text).await;
        let reply = v["reply"].as_str().unwrap();
        assert!(!reply.trim().is_empty());
        assert!(!reply.contains("<eos>") && !reply.contains("@persona"), "{reply}");
        assert!(v.get("debug").is_none());
        let (status, s) = call(&app, "GET", &format!("/api/session/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        let history = s["history"].as_array().unwrap();
        assert_eq!(history.len(), 2 * (i + 1));
        assert_eq!(history[2 * i], json!({ "speaker": "human", "text": text }));
        assert_eq!(history[2 * i + 1], json!({ "speaker": "model", "text": reply }));
        assert_eq!(s["persona"], json!(PERSONA));
    }
}

#[tokio::test]
async fn message_errors() {
    let app = app();
    let (status, v) = call(&app, "POST", "/api/session/nope/message", Some(json!({ "text": "hi" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "session_not_found");
    let (status, _) = call(&app, "GET", "/api/session/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let id = new_session(&app, json!({})).await;
    for text in ["", "   "] {
        let (status, v) = call(&app, "POST", &format!("/api/session/{id}/message"), Some(json!({ "text": text }))).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(v["code"], "validation_error");
    }
    let (_, s) = call(&app, "GET", &format!("/api/session/{id}"), None).await;
    assert_eq!(s["history"], json!([]));
}

#[tokio::test]
async fn debug_sessions_return_sketch_persona_and_scores() {
    let app = app();
    let id = new_session(&app, json!({ "persona": PERSONA, "debug": true })).await;
    let v = say(&app, &id, "what is your favorite food ?").await;
    let d = &v["debug"];
    assert!(d["sketch"].is_string());
    let candidates = d["candidates"].as_array().unwrap();
    assert!(!candidates.is_empty());
    let scores: Vec<f64> = candidates.iter().map(|c| c["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] <= w[1]), "{scores:?}");
    let best: Vec<&str> = candidates[0]["tokens"].as_array().unwrap().iter().map(|t| t.as_str().unwrap()).collect();
    assert_eq!(sketchfill::corpus::detokenize(&best), v["reply"].as_str().unwrap());
    match d["persona"].as_u64() {
        Some(i) => assert_eq!(d["persona_text"], json!(PERSONA[i as usize])),
        None => assert!(d["persona_text"].is_null()),
    }
}

#[tokio::test]
async fn pointer_variant_serves_without_language_model() {
    let app = app_with(Variant::SfA, None);
    let id = new_session(&app, json!({ "persona": PERSONA })).await;
    let v = say(&app, &id, "do you have any pets ?").await;
    assert!(!v["reply"].as_str().unwrap().is_empty());
}

#[tokio::test]
async fn replayed_transcripts_give_identical_replies() {
    let app = app();
    let lines = ["hi", "what is your job ?", "where do you live ?", "do you remember where i went ?"];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let id = new_session(&app, json!({ "persona": PERSONA })).await;
        let mut replies = Vec::new();
        for l in lines {
            replies.push(say(&app, &id, l).await["reply"].clone());
        }
        runs.push(replies);
    }
    assert_eq!(runs[0], runs[1]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn interleaved_sessions_match_serial_runs() {
    let app = app();
    let scripts: [(&[&str], [&str; 5]); 2] = [
        (&["hi", "what do you eat ?", "any pets ?"], PERSONA),
        (
            &["hello there", "what color do you like ?", "where are you from ?"],
            ["i like knitting .", "i live in denver .", "my dog is named rex .", "i drive a truck .", "i am tall ."],
        ),
    ];
    let mut serial = Vec::new();
    for (lines, persona) in &scripts {
        let id = new_session(&app, json!({ "persona": persona })).await;
        let mut out = Vec::new();
        for l in lines.iter() {
            out.push(say(&app, &id, l).await["reply"].clone());
        }
        serial.push(out);
    }
    let mut ids = Vec::new();
    for (_, persona) in &scripts {
        ids.push(new_session(&app, json!({ "persona": persona })).await);
    }
    let tasks: Vec<_> = scripts
        .iter()
        .zip(ids)
        .map(|((lines, _), id)| {
            let app = app.clone();
            let lines: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
            tokio::spawn(async move {
                let mut out = Vec::new();
                for l in &lines {
                    out.push(say(&app, &id, l).await["reply"].clone());
                    tokio::task::yield_now().await;
                }
                out
            })
        })
        .collect();
    let mut interleaved = Vec::new();
    for t in tasks {
        interleaved.push(t.await.unwrap());
    }
    assert_eq!(interleaved, serial);
}

#[tokio::test]
async fn cors_and_static_hosting() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>chat</html>").unwrap();
    let app = app_with(Variant::SfAR, Some(dir.path().to_path_buf()));
    let resp = app
        .clone()
        .oneshot(Request::get("/index.html").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let body = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&body[..], b"<html>chat</html>");
    let resp = app
        .oneshot(
            Request::get("/api/health")
                .header(header::ORIGIN, "http://localhost:5173")
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    assert_eq!(resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");
}
