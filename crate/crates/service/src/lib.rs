//! HTTP+JSON session API: a person takes the simulated user's place in the
//! interactive retrieval loop.
//!
//! Routes: `POST /sessions`, `POST /sessions/{id}/step`, `GET /sessions/{id}`,
//! `GET /policies`, `GET /docs/{id}`. Every error body is `{"error": "..."}`.

mod wire;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response as HttpResponse};
use axum::routing::{get, post};
use axum::{Json, Router};
use irdqn_core::baselines::{HandcraftedPolicy, RandomPolicy};
use irdqn_core::dqn::{DqnModel, DqnPolicy};
use irdqn_core::env::{ActionId, Payload, Response};
use irdqn_core::{Environment, Error, FeatureConfig, JudgmentSet, Policy, Query, SessionState};
use serde::Deserialize;
use serde_json::{json, Value};

pub use wire::{expected_key, parse_response, payload_json, response_json, snippet, DocEntry, PayloadLimits};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::EmptyQuery(_)
            | Error::UnknownDocument(_)
            | Error::UnknownTopic(_)
            | Error::ResponseMismatch { .. }
            | Error::InvalidParameter(_) => StatusCode::BAD_REQUEST,
            Error::Terminal => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> HttpResponse {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// A policy the service can instantiate per session.
#[derive(Debug, Clone)]
pub enum PolicySpec {
    /// Uniform random; seeded per session.
    Random,
    Dqn { model: DqnModel, features: FeatureConfig },
    Handcrafted { policy: HandcraftedPolicy, features: FeatureConfig },
}

impl PolicySpec {
    fn features(&self) -> FeatureConfig {
        match self {
            PolicySpec::Random => FeatureConfig {
                n_raw: 1,
                handcrafted: false,
                ..FeatureConfig::default()
            },
            PolicySpec::Dqn { features, .. } | PolicySpec::Handcrafted { features, .. } => *features,
        }
    }

    fn instantiate(&self, seed: u64) -> Box<dyn Policy + Send> {
        match self {
            PolicySpec::Random => Box::new(RandomPolicy::new(seed)),
            PolicySpec::Dqn { model, .. } => Box::new(DqnPolicy { model: model.clone() }),
            PolicySpec::Handcrafted { policy, .. } => Box::new(policy.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub idle_timeout: Duration,
    pub limits: PayloadLimits,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            idle_timeout: Duration::from_secs(30 * 60),
            limits: PayloadLimits::default(),
        }
    }
}

#[derive(Debug, Clone)]
struct TranscriptEntry {
    turn: usize,
    action: ActionId,
    payload: Value,
    response: Option<Value>,
    reward: Option<f64>,
}

impl TranscriptEntry {
    fn to_json(&self) -> Value {
        json!({
            "turn": self.turn,
            "action": self.action.name(),
            "payload": self.payload,
            "response": self.response,
            "reward": self.reward,
        })
    }
}

struct Session {
    id: String,
    query: String,
    policy_name: String,
    policy: Box<dyn Policy + Send>,
    features: FeatureConfig,
    state: SessionState,
    relevant: Option<BTreeSet<usize>>,
    /// Action awaiting the user's response, with the topics it offered.
    pending: Option<(ActionId, Vec<usize>)>,
    transcript: Vec<TranscriptEntry>,
    last_access: Instant,
}

pub struct AppState {
    env: Environment,
    judgments: Option<Arc<JudgmentSet>>,
    policies: BTreeMap<String, PolicySpec>,
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

impl AppState {
    pub fn new(
        env: Environment,
        judgments: Option<Arc<JudgmentSet>>,
        policies: BTreeMap<String, PolicySpec>,
        config: ServiceConfig,
    ) -> Self {
        AppState {
            env,
            judgments,
            policies,
            config,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    fn sweep(&self) {
        let idle = self.config.idle_timeout;
        self.sessions
            .lock()
            .unwrap()
            .retain(|_, s| match s.try_lock() {
                Ok(s) => s.last_access.elapsed() < idle,
                Err(std::sync::TryLockError::WouldBlock) => true,
                Err(std::sync::TryLockError::Poisoned(_)) => false,
            });
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        self.sweep();
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session `{id}`")))
    }

    fn payload(&self, p: &Payload) -> Value {
        let corpus = self.env.retriever().corpus();
        payload_json(p, corpus, self.env.topics(), &self.config.limits)
    }

    /// Lets the policy act until a response is needed or the session ends.
    /// Show List needs no answer and is applied at once.
    fn advance(&self, s: &mut Session) -> ApiResult<()> {
        s.pending = None;
        if s.state.terminal {
            return Ok(());
        }
        let obs = self.env.features(&s.state, &s.features)?;
        let chosen = s.policy.act(&obs)?;
        let action = self.env.effective_action(&s.state, chosen);
        let payload = self.env.propose(&s.state, action)?;
        s.transcript.push(TranscriptEntry {
            turn: s.state.turn,
            action,
            payload: self.payload(&payload),
            response: None,
            reward: None,
        });
        if action == ActionId::ShowList {
            let step = self
                .env
                .transition(&s.state, action, &Response::Acknowledge, s.relevant.as_ref())?;
            s.transcript.last_mut().unwrap().reward = step.reward;
            s.state = step.next;
        } else {
            let offered = match &payload {
                Payload::Topics { topics } => topics.clone(),
                _ => Vec::new(),
            };
            s.pending = Some((action, offered));
        }
        Ok(())
    }

    fn view(&self, s: &Session) -> Value {
        let last = s.transcript.last();
        json!({
            "session_id": s.id,
            "turn": s.state.turn,
            "terminal": s.state.terminal,
            "action": last.map(|e| e.payload.clone()),
            "reward": last.and_then(|e| e.reward),
        })
    }
}

#[derive(Debug, Deserialize)]
struct CreateBody {
    query: String,
    #[serde(default = "default_policy")]
    policy: String,
    /// Query id in the loaded judgments; enables rewards.
    qid: Option<String>,
    /// Seed of stochastic policies.
    seed: Option<u64>,
}

fn default_policy() -> String {
    "dqn".into()
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateBody = parse_body(&body)?;
    let spec = app.policies.get(&req.policy).ok_or_else(|| {
        ApiError::not_found(format!(
            "unknown policy `{}`; available: {}",
            req.policy,
            app.policies.keys().cloned().collect::<Vec<_>>().join(", ")
        ))
    })?;
    if req.query.trim().is_empty() {
        return Err(ApiError::bad_request("query must not be empty"));
    }
    let relevant = match &req.qid {
        Some(qid) => {
            let rel = app
                .judgments
                .as_ref()
                .and_then(|j| j.relevant(qid))
                .ok_or_else(|| ApiError::bad_request(format!("no relevance judgments for query `{qid}`")))?;
            Some(rel.clone())
        }
        None => None,
    };
    app.sweep();
    let id = {
        let map = app.sessions.lock().unwrap();
        loop {
            let id = format!("{:016x}", rand::random::<u64>());
            if !map.contains_key(&id) {
                break id;
            }
        }
    };
    let query = Query {
        qid: req.qid.clone().unwrap_or_else(|| id.clone()),
        text: req.query.clone(),
    };
    let state = app.env.start(&query)?;
    let mut session = Session {
        id: id.clone(),
        query: req.query,
        policy_name: req.policy.clone(),
        policy: spec.instantiate(req.seed.unwrap_or_else(rand::random)),
        features: spec.features(),
        state,
        relevant,
        pending: None,
        transcript: Vec::new(),
        last_access: Instant::now(),
    };
    app.advance(&mut session)?;
    let body = app.view(&session);
    app.sessions
        .lock()
        .unwrap()
        .insert(id.clone(), Arc::new(Mutex::new(session)));
    tracing::info!(session = %id, policy = %req.policy, "session created");
    Ok((StatusCode::CREATED, Json(body)))
}

async fn step_session(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let session = app.session(&id)?;
    let mut s = session.lock().unwrap();
    s.last_access = Instant::now();
    let Some((action, offered)) = s.pending.clone() else {
        return Err(ApiError::new(StatusCode::CONFLICT, "session already ended"));
    };
    let value: Value = parse_body(&body)?;
    let corpus = app.env.retriever().corpus();
    let response = parse_response(&value, action, corpus, &offered)?;
    let step = app.env.transition(&s.state, action, &response, s.relevant.as_ref())?;
    let entry = s.transcript.last_mut().unwrap();
    entry.response = Some(response_json(&response, corpus));
    entry.reward = step.reward;
    s.state = step.next;
    app.advance(&mut s)?;
    let mut body = app.view(&s);
    // reward of the step just answered, not of a Show List applied after it
    body["reward"] = json!(step.reward);
    body["final_reward"] = if s.state.terminal {
        json!(s.transcript.last().and_then(|e| e.reward))
    } else {
        Value::Null
    };
    Ok(Json(body))
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let session = app.session(&id)?;
    let mut s = session.lock().unwrap();
    s.last_access = Instant::now();
    let mut body = json!({
        "session_id": s.id,
        "query": s.query,
        "policy": s.policy_name,
        "turn": s.state.turn,
        "terminal": s.state.terminal,
        "pending": s.pending.as_ref().map(|(a, _)| json!({ "action": a.name(), "expects": expected_key(*a) })),
        "transcript": s.transcript.iter().map(TranscriptEntry::to_json).collect::<Vec<_>>(),
    });
    if s.relevant.is_some() {
        let total: f64 = s.transcript.iter().filter_map(|e| e.reward).sum();
        body["return"] = json!(total);
    }
    let obs = app.env.features(&s.state, &s.features)?;
    if let Some(q) = s.policy.q_values(&obs) {
        body["q_values"] = json!(q);
    }
    Ok(Json(body))
}

async fn list_policies(State(app): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "policies": app.policies.keys().collect::<Vec<_>>() }))
}

async fn get_doc(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let corpus = app.env.retriever().corpus();
    let d = corpus
        .doc_index(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown document `{id}`")))?;
    Ok(Json(json!({ "id": corpus.docs[d].id, "text": corpus.docs[d].text })))
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such route")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/step", post(step_session))
        .route("/policies", get(list_policies))
        .route("/docs/{id}", get(get_doc))
        .fallback(fallback)
        .with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: std::net::SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state)).await
}
