#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use cia_core::llm::{ChatModel, LlmResponse, ToolCall};
use cia_core::scripted::{LookupEntry, ScriptedLlm};
use cia_service::{router, AppState, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

/// Two buses joined by one lossless line; 100 MW at bus 2 sags below the band.
pub const WEAK_RADIAL: &str = "mpc.baseMVA = 100;
mpc.bus = [
1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
2 1 100 0 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [1 0 0 999 -999 1 100 1 999 0];
mpc.branch = [
1 2 0 0.15 0 0 0 0 0 0 1;
];";

pub const REJECTED_ASK: &str = "Assess a 100 MW load at bus 2 on radial";

/// Answers the rejected-connection question with one assessment call.
pub fn radial_llm() -> Arc<dyn ChatModel> {
    let call = LlmResponse::calls(vec![ToolCall {
        id: "c1".into(),
        name: "run_cia".into(),
        arguments: json!({"case_path": "radial", "connection": {"bus": 2, "capacity_mw": 100, "type": "load"}}),
    }]);
    Arc::new(ScriptedLlm::lookup(vec![
        LookupEntry {
            user: REJECTED_ASK.into(),
            round: 0,
            system_contains: None,
            response: call,
        },
        LookupEntry {
            user: REJECTED_ASK.into(),
            round: 1,
            system_contains: None,
            response: LlmResponse::text("The connection is {{/decision}}. The steady-state stage failed."),
        },
    ]))
}

pub fn config(dir: &Path) -> ServiceConfig {
    std::fs::write(dir.join("radial.m"), WEAK_RADIAL).unwrap();
    ServiceConfig {
        case_dir: Some(dir.to_path_buf()),
        memory_path: Some(dir.join("memory.jsonl")),
        ledger_path: Some(dir.join("ledger.md")),
        artifact_dir: dir.join("artifacts"),
        ..ServiceConfig::default()
    }
}

pub fn state(cfg: ServiceConfig, llm: Option<Arc<dyn ChatModel>>) -> Arc<AppState> {
    let agent = cfg.agent(llm.clone()).unwrap();
    Arc::new(AppState::new(agent, llm, cfg))
}

pub async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, v)
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn post(app: &Router, uri: &str, body: impl Into<Body>) -> (StatusCode, Value) {
    let req = Request::post(uri).header("content-type", "application/json").body(body.into()).unwrap();
    send(app, req).await
}

pub async fn chat(app: &Router, session: &str, message: &str) -> (StatusCode, Value) {
    post(app, "/chat", json!({"session_id": session, "message": message}).to_string()).await
}

pub fn app(state: &Arc<AppState>) -> Router {
    router(state.clone())
}
