use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cia_core::agent::{Agent, SessionContext, TurnOutput};
use cia_core::bench::{run_benchmark, write_artifact, BenchmarkMetrics, Suite, DEFAULT_THRESHOLD};
use cia_core::lessons::LessonStore;
use cia_core::llm::{ChatModel, Message};
use cia_core::memory::{Recall, StudyMemory, StudyRecord};
use cia_core::scenarios::{benchmark_suite, oracle_script, regression_suite, BENCHMARK_NAME, REGRESSION_NAME};
use cia_core::scripted::ScriptedLlm;
use cia_grid::BusId;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{scripted_llm, ServiceConfig};
use crate::health::{self, HealthStatus};

struct Slot {
    ctx: Arc<Mutex<SessionContext>>,
    last_used: Instant,
}

/// Shared by every request. Sessions live in memory only and expire after
/// the configured idle time.
pub struct AppState {
    agent: Arc<Agent>,
    llm: Option<Arc<dyn ChatModel>>,
    cfg: ServiceConfig,
    sessions: Mutex<HashMap<String, Slot>>,
    idle: Duration,
}

impl AppState {
    pub fn new(agent: Agent, llm: Option<Arc<dyn ChatModel>>, cfg: ServiceConfig) -> Self {
        Self {
            agent: Arc::new(agent),
            llm,
            idle: Duration::from_secs(cfg.session_idle_s),
            cfg,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn agent(&self) -> &Arc<Agent> {
        &self.agent
    }

    fn memory(&self) -> &Arc<StudyMemory> {
        self.agent.tools().memory()
    }

    fn session(&self, id: &str) -> Arc<Mutex<SessionContext>> {
        let now = Instant::now();
        let mut map = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
        map.retain(|_, s| now.duration_since(s.last_used) <= self.idle);
        let slot = map.entry(id.to_string()).or_insert_with(|| Slot {
            ctx: Arc::new(Mutex::new(SessionContext::new(id))),
            last_used: now,
        });
        slot.last_used = now;
        slot.ctx.clone()
    }

    /// Drops sessions idle for longer than the limit as of `now`.
    pub fn expire_idle(&self, now: Instant) -> usize {
        let mut map = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
        let before = map.len();
        map.retain(|_, s| now.saturating_duration_since(s.last_used) <= self.idle);
        before - map.len()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn session_history(&self, id: &str) -> Option<Vec<Message>> {
        let map = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
        let ctx = map.get(id)?.ctx.clone();
        drop(map);
        let h = ctx.lock().unwrap_or_else(|e| e.into_inner()).history.clone();
        Some(h)
    }

    /// Blocking. Turns in one session run one at a time.
    pub fn respond(&self, session_id: &str, message: &str) -> Result<TurnOutput, ApiError> {
        let ctx = self.session(session_id);
        let mut ctx = ctx.lock().unwrap_or_else(|e| e.into_inner());
        ctx.push_user(message);
        self.agent.respond(&mut ctx).map_err(|e| ApiError::internal("agent_error", e))
    }

    /// Blocking.
    pub fn health(&self) -> HealthStatus {
        health::check(self.memory(), self.llm.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub fields: Vec<FieldError>,
}

impl ApiError {
    pub fn bad_request(fields: Vec<FieldError>) -> Self {
        let message = fields.iter().map(|f| format!("{}: {}", f.field, f.message)).collect::<Vec<_>>().join("; ");
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "bad_request".into(),
            message,
            fields,
        }
    }

    pub fn internal(code: &str, e: impl std::fmt::Display) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: code.into(),
            message: e.to_string(),
            fields: vec![],
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message, "fields": self.fields}});
        (self.status, Json(body)).into_response()
    }
}

fn field_error(field: &str, message: &str) -> FieldError {
    FieldError {
        field: field.into(),
        message: message.into(),
    }
}

fn parse_object(body: &[u8]) -> Result<serde_json::Map<String, Value>, ApiError> {
    match serde_json::from_slice::<Value>(body) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(ApiError::bad_request(vec![field_error("", "body must be a JSON object")])),
        Err(e) => Err(ApiError::bad_request(vec![field_error("", &format!("invalid JSON: {e}"))])),
    }
}

fn required_string(m: &serde_json::Map<String, Value>, key: &str, errors: &mut Vec<FieldError>) -> String {
    match m.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
        Some(Value::String(_)) => {
            errors.push(field_error(key, "must not be empty"));
            String::new()
        }
        Some(_) => {
            errors.push(field_error(key, "must be a string"));
            String::new()
        }
        None => {
            errors.push(field_error(key, "is required"));
            String::new()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub session_id: String,
    pub message: String,
}

impl ChatRequest {
    pub fn parse(body: &[u8]) -> Result<Self, ApiError> {
        let m = parse_object(body)?;
        let mut errors = Vec::new();
        let session_id = required_string(&m, "session_id", &mut errors);
        let message = required_string(&m, "message", &mut errors);
        if errors.is_empty() {
            Ok(Self { session_id, message })
        } else {
            Err(ApiError::bad_request(errors))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub session_id: String,
    #[serde(flatten)]
    pub turn: TurnOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryResponse {
    pub records: Vec<StudyRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResponse {
    pub suite: String,
    pub artifact: PathBuf,
    pub metrics: BenchmarkMetrics,
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/chat", post(chat))
        .route("/health", get(health))
        .route("/memory", get(memory))
        .route("/ledger", get(ledger))
        .route("/tools", get(tools))
        .route("/benchmark/run", post(benchmark))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal("internal", e))?
}

async fn chat(State(st): State<Shared>, body: Bytes) -> Result<Json<ChatResponse>, ApiError> {
    let req = ChatRequest::parse(&body)?;
    let id = req.session_id.clone();
    let turn = blocking(move || st.respond(&req.session_id, &req.message)).await?;
    Ok(Json(ChatResponse { session_id: id, turn }))
}

async fn health(State(st): State<Shared>) -> Result<Json<HealthStatus>, ApiError> {
    Ok(Json(blocking(move || Ok(st.health())).await?))
}

async fn memory(State(st): State<Shared>, Query(q): Query<HashMap<String, String>>) -> Result<Json<MemoryResponse>, ApiError> {
    let case = q.get("case").filter(|c| !c.is_empty()).cloned();
    let bus = match q.get("bus").filter(|b| !b.is_empty()) {
        Some(b) => Some(
            b.parse::<u32>()
                .map_err(|_| ApiError::bad_request(vec![field_error("bus", "must be a positive integer")]))?,
        ),
        None => None,
    };
    let query = match (case, bus, q.get("keyword").filter(|k| !k.is_empty())) {
        (Some(case), Some(bus), _) => Some(Recall::ByBus { case, bus: BusId(bus) }),
        (None, Some(_), _) => return Err(ApiError::bad_request(vec![field_error("case", "is required with bus")])),
        (Some(case), None, _) => Some(Recall::ByCase { case }),
        (None, None, Some(k)) => Some(Recall::Keyword { keyword: k.clone() }),
        (None, None, None) => None,
    };
    let records = match query {
        Some(q) => st.memory().recall(&q),
        None => st.memory().all(),
    };
    Ok(Json(MemoryResponse { records }))
}

async fn ledger(State(st): State<Shared>) -> Response {
    ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], st.memory().ledger_text()).into_response()
}

async fn tools(State(st): State<Shared>) -> Response {
    Json(st.agent.tools().specs().to_vec()).into_response()
}

enum ScriptChoice {
    Live,
    Oracle,
    File(PathBuf),
}

/// A suite file path, or the name of a bundled suite.
pub fn resolve_suite(name: &str) -> Result<Suite, ApiError> {
    let path = std::path::Path::new(name);
    if path.is_file() {
        return Suite::load(path).map_err(|e| ApiError::bad_request(vec![field_error("suite", &e.to_string())]));
    }
    match name.trim_end_matches(".json") {
        BENCHMARK_NAME => Ok(benchmark_suite()),
        REGRESSION_NAME => Ok(regression_suite()),
        _ => Err(ApiError::bad_request(vec![field_error(
            "suite",
            &format!("no suite file or bundled suite named {name:?} (bundled: {BENCHMARK_NAME}, {REGRESSION_NAME})"),
        )])),
    }
}

async fn benchmark(State(st): State<Shared>, body: Bytes) -> Result<Json<BenchmarkResponse>, ApiError> {
    let m = parse_object(&body)?;
    let mut errors = Vec::new();
    let suite_name = required_string(&m, "suite", &mut errors);
    let script = match m.get("scripted") {
        None | Some(Value::Null) | Some(Value::Bool(false)) => ScriptChoice::Live,
        Some(Value::Bool(true)) => ScriptChoice::Oracle,
        Some(Value::String(p)) if !p.is_empty() => ScriptChoice::File(p.into()),
        Some(_) => {
            errors.push(field_error("scripted", "must be a script path or a boolean"));
            ScriptChoice::Live
        }
    };
    let threshold = match m.get("threshold") {
        None => DEFAULT_THRESHOLD,
        Some(v) => match v.as_f64() {
            Some(t) if (0.0..=100.0).contains(&t) => t,
            _ => {
                errors.push(field_error("threshold", "must be a number between 0 and 100"));
                DEFAULT_THRESHOLD
            }
        },
    };
    if !errors.is_empty() {
        return Err(ApiError::bad_request(errors));
    }
    let suite = resolve_suite(&suite_name)?;
    let llm: Option<Arc<dyn ChatModel>> = match script {
        ScriptChoice::Live => st.llm.clone(),
        ScriptChoice::Oracle => Some(Arc::new(ScriptedLlm::new(oracle_script(&suite)).lenient())),
        ScriptChoice::File(p) => {
            Some(scripted_llm(&p).map_err(|e| ApiError::bad_request(vec![field_error("scripted", &format!("{e:#}"))]))?)
        }
    };
    let out = blocking(move || {
        // benchmark studies stay out of the operator's memory
        let registry = st.cfg.registry(Arc::new(StudyMemory::in_memory()));
        let agent = Agent::new(Arc::new(registry), llm, Arc::new(LessonStore::in_memory()), st.cfg.agent.clone());
        let run = run_benchmark(&suite.name, &suite.scenarios, &agent, threshold, 1)
            .map_err(|e| ApiError::internal("benchmark_error", e))?;
        let artifact =
            write_artifact(&run, &st.cfg.artifact_dir).map_err(|e| ApiError::internal("artifact_error", e))?;
        Ok(BenchmarkResponse {
            suite: run.suite.clone(),
            artifact,
            metrics: run.metrics,
        })
    })
    .await?;
    Ok(Json(out))
}
