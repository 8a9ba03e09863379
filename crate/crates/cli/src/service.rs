//! HTTP/JSON API over one loaded artifact set.

use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::info;
use oppchain::distal::DEFAULT_N_MAX;
use oppchain::envs::EnvKind;
use oppchain::explain::{Explanation, QuestionType, EXPLANATION_SCHEMA};
use oppchain::mdp::{Environment, StateVector};
use oppchain::pipeline::{Artifacts, Ask};
use oppchain::Error;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;

pub const SESSION_TTL: Duration = Duration::from_secs(3600);

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn unprocessable(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::StepAfterDone => StatusCode::CONFLICT,
            Error::MissingArtifact(_) | Error::Io(_) | Error::Json(_) | Error::UntrainedSlot { .. } => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

struct Session {
    env: Box<dyn Environment>,
    state: StateVector,
    done: bool,
    trace: VecDeque<(StateVector, usize)>,
    last_used: Instant,
}

/// Shared service state. Each session sits behind its own lock.
#[derive(Clone)]
pub struct AppState {
    artifacts: Arc<Artifacts>,
    sessions: Arc<Mutex<HashMap<String, Arc<Mutex<Session>>>>>,
    ttl: Duration,
    trace_len: usize,
}

impl AppState {
    pub fn new(artifacts: Artifacts) -> Self {
        Self::with_ttl(artifacts, SESSION_TTL)
    }

    pub fn with_ttl(artifacts: Artifacts, ttl: Duration) -> Self {
        let trace_len = artifacts.distal.as_ref().map_or(DEFAULT_N_MAX, |d| d.config.n_max);
        Self { artifacts: Arc::new(artifacts), sessions: Arc::default(), ttl, trace_len }
    }

    fn purge(&self) {
        let now = Instant::now();
        let mut sessions = self.sessions.lock().expect("session table lock");
        sessions.retain(|_, s| s.lock().is_ok_and(|s| now.duration_since(s.last_used) < self.ttl));
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.purge();
        let sessions = self.sessions.lock().expect("session table lock");
        sessions
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownSession", format!("no session `{id}`")))
    }

    fn agent_action(&self, state: &StateVector) -> Result<usize, ApiError> {
        match (&self.artifacts.policy, &self.artifacts.tree) {
            (Some(p), _) => Ok(p.action(state)),
            (None, Some(t)) => Ok(t.predict(state)),
            (None, None) => Err(Error::MissingArtifact("policy.json or tree.json".into()).into()),
        }
    }

    fn action_name(&self, action: usize) -> String {
        self.artifacts.spec.actions[action].clone()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/step", post(step))
        .route("/sessions/{id}/ask", post(ask))
        .route("/sessions/{id}/graph", get(graph))
        .route("/sessions/{id}/tree", get(tree))
        .route("/schema", get(schema))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

pub async fn serve(artifacts: Artifacts, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(artifacts))).await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub env: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub env: String,
    pub state: StateVector,
    pub variables: Vec<String>,
    pub actions: Vec<String>,
    pub agent_action: String,
    pub done: bool,
}

async fn create_session(State(app): State<AppState>, Json(req): Json<CreateSession>) -> ApiResult<SessionCreated> {
    app.purge();
    let kind: EnvKind = req.env.parse().map_err(ApiError::from)?;
    if kind != app.artifacts.env {
        return Err(ApiError::unprocessable(
            "UnknownEnvironment",
            format!("loaded artifacts are for `{}`, not `{}`", app.artifacts.env, req.env),
        ));
    }
    let mut env = kind.make();
    let state = env.reset(req.seed.unwrap_or_else(rand::random));
    let agent_action = app.agent_action(&state)?;
    let id = uuid::Uuid::new_v4().to_string();
    let session = Session { env, state: state.clone(), done: false, trace: VecDeque::new(), last_used: Instant::now() };
    app.sessions.lock().expect("session table lock").insert(id.clone(), Arc::new(Mutex::new(session)));
    Ok(Json(SessionCreated {
        session_id: id,
        env: kind.name().into(),
        state,
        variables: app.artifacts.spec.variable_names(),
        actions: app.artifacts.spec.actions.clone(),
        agent_action: app.action_name(agent_action),
        done: false,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    Agent,
    Action,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRequest {
    pub mode: StepMode,
    #[serde(default)]
    pub action: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct StepResponse {
    pub state: StateVector,
    /// What the agent would do in the state the step started from.
    pub agent_action: String,
    pub action: String,
    pub reward: f64,
    pub done: bool,
}

async fn step(State(app): State<AppState>, Path(id): Path<String>, Json(req): Json<StepRequest>) -> ApiResult<StepResponse> {
    let session = app.session(&id)?;
    let mut s = session.lock().expect("session lock");
    s.last_used = Instant::now();
    if s.done {
        return Err(Error::StepAfterDone.into());
    }
    let agent_action = app.agent_action(&s.state)?;
    let action = match (req.mode, req.action.as_deref()) {
        (StepMode::Agent, _) => agent_action,
        (StepMode::Action, Some(name)) => app.artifacts.resolve_action(name)?,
        (StepMode::Action, None) => {
            return Err(ApiError::unprocessable("InvalidArgument", "mode `action` needs an `action` field"))
        }
    };
    let t = s.env.step(action)?;
    let previous = std::mem::replace(&mut s.state, t.next.clone());
    s.trace.push_back((previous, action));
    while s.trace.len() > app.trace_len {
        s.trace.pop_front();
    }
    s.done = t.done;
    Ok(Json(StepResponse {
        state: t.next,
        agent_action: app.action_name(agent_action),
        action: app.action_name(action),
        reward: t.reward,
        done: t.done,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AskRequest {
    #[serde(rename = "type")]
    pub question: String,
    pub action: String,
    #[serde(default)]
    pub distal: bool,
    #[serde(default)]
    pub delta: Option<f64>,
}

async fn ask(State(app): State<AppState>, Path(id): Path<String>, Json(req): Json<AskRequest>) -> ApiResult<Explanation> {
    let session = app.session(&id)?;
    let mut s = session.lock().expect("session lock");
    s.last_used = Instant::now();
    let question: QuestionType = req.question.parse()?;
    let action = app.artifacts.resolve_action(&req.action)?;
    if question == QuestionType::WhyNot {
        let agent = app.agent_action(&s.state)?;
        let predicted = app.artifacts.tree()?.predict(&s.state);
        if action == agent || action == predicted {
            return Err(ApiError::unprocessable(
                "InvalidAction",
                format!("`{}` is the action taken; ask why instead", app.action_name(action)),
            ));
        }
    }
    let mut ask = Ask::new(question, action);
    ask.distal = req.distal;
    if let Some(d) = req.delta {
        if !(d > 0.0 && d.is_finite()) {
            return Err(ApiError::unprocessable("InvalidArgument", format!("delta must be positive, got {d}")));
        }
        ask.moves = oppchain::counterfactual::MoveConfig::with_delta(d);
    }
    let history: Vec<(StateVector, usize)> = s.trace.iter().cloned().collect();
    Ok(Json(app.artifacts.explain(&s.state, &ask, &history)?))
}

async fn graph(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Value> {
    let session = app.session(&id)?;
    let mut s = session.lock().expect("session lock");
    s.last_used = Instant::now();
    let a = &app.artifacts;
    let inst = a.graph.actual_instantiation(&s.state)?;
    let values: serde_json::Map<String, Value> = inst.named(&a.graph).into_iter().map(|(n, v)| (n, json!(v))).collect();
    let rewards: Vec<&str> = a.graph.reward_nodes().iter().map(|&r| a.graph.name(r)).collect();
    Ok(Json(json!({
        "graph": a.graph.to_document(),
        "reward_nodes": rewards,
        "values": values,
        "state": s.state,
    })))
}

async fn tree(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Value> {
    let session = app.session(&id)?;
    let mut s = session.lock().expect("session lock");
    s.last_used = Instant::now();
    let tree = app.artifacts.tree()?;
    let path = tree.decision_path(&s.state);
    Ok(Json(json!({
        "tree": tree,
        "decision_path": path,
        "predicted_action": app.action_name(tree.predict(&s.state)),
        "state": s.state,
    })))
}

async fn schema() -> Response {
    ([(axum::http::header::CONTENT_TYPE, "application/schema+json")], EXPLANATION_SCHEMA).into_response()
}
