//! HTTP session service: create a market, then validate, estimate and play
//! actions one week at a time.
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | `/sessions` | [`CreateRequest`] | `{session_id, state, ...}` |
//! | POST | `/sessions/{id}/validate` | action | `{verdict, repair}` |
//! | POST | `/sessions/{id}/estimate` | action | estimate + `long_term_value` |
//! | POST | `/sessions/{id}/act` | [`ActRequest`] | [`ActResponse`] |
//! | GET | `/sessions/{id}/history` | | episode log |
//! | GET | `/sessions/{id}/metrics` | | metrics summary or `null` |
//!
//! Actions are `{"price_change_pct": .., "ad_spend": ..}`; `price_change`
//! is accepted as an alias. Errors are `{code, message}`.

mod error;
mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chimera_core::bench::compute_metrics;
use chimera_core::causal::{long_term_value, CausalEngine, CausalEstimate};
use chimera_core::guardian::{repair_action, validate_action, Repair, Verdict};
use chimera_core::sim::{Action, MarketState};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/service.md")]
mod book {}

pub use error::{ApiError, ServiceError};
pub use session::{
    journal_path, replay, ActMode, ActRequest, ActResponse, CreateRequest, Session,
    DEFAULT_HORIZON, DEFAULT_TRUST_MULTIPLIER,
};

pub const DEFAULT_TTL: Duration = Duration::from_secs(24 * 60 * 60);

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// Pre-fitted engine artifact; without it `/estimate` answers 409.
    pub engine_path: Option<PathBuf>,
    /// Idle time after which a session is dropped.
    pub ttl: Duration,
    /// Directory for per-session journals; `None` keeps sessions in memory.
    pub persist_dir: Option<PathBuf>,
    /// When set, every request must carry `Authorization: Bearer <token>`.
    pub token: Option<String>,
    /// Allowed browser origin; `None` allows any.
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            engine_path: None,
            ttl: DEFAULT_TTL,
            persist_dir: None,
            token: None,
            cors_origin: None,
        }
    }
}

struct Slot {
    session: RwLock<Session>,
    touched: Mutex<Instant>,
}

impl Slot {
    fn new(session: Session) -> Arc<Self> {
        Arc::new(Self {
            session: RwLock::new(session),
            touched: Mutex::new(Instant::now()),
        })
    }

    fn touch(&self) {
        *self.touched.lock().unwrap_or_else(|e| e.into_inner()) = Instant::now();
    }

    fn idle(&self) -> Duration {
        self.touched
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .elapsed()
    }
}

/// Shared service state. Cloning is cheap.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
    engine: Option<Arc<CausalEngine>>,
    ttl: Duration,
    persist_dir: Option<PathBuf>,
    token: Option<String>,
}

impl AppState {
    /// Load the engine artifact and replay any persisted sessions.
    pub fn new(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        let engine = match &cfg.engine_path {
            Some(p) => Some(Arc::new(CausalEngine::load(p)?)),
            None => None,
        };
        let state = Self::with_engine(cfg, engine);
        if let Some(dir) = &cfg.persist_dir {
            std::fs::create_dir_all(dir)?;
            let mut sessions = state.inner.sessions.write().unwrap_or_else(|e| e.into_inner());
            for entry in std::fs::read_dir(dir)? {
                let path = entry?.path();
                if path.extension().is_some_and(|e| e == "jsonl") {
                    let s = replay(&path)?;
                    sessions.insert(s.id.clone(), Slot::new(s));
                }
            }
        }
        Ok(state)
    }

    /// State with an already loaded engine. Persisted sessions are not
    /// replayed.
    pub fn with_engine(cfg: &ServiceConfig, engine: Option<Arc<CausalEngine>>) -> Self {
        Self {
            inner: Arc::new(Inner {
                sessions: RwLock::new(HashMap::new()),
                engine,
                ttl: cfg.ttl,
                persist_dir: cfg.persist_dir.clone(),
                token: cfg.token.clone(),
            }),
        }
    }

    pub fn session_count(&self) -> usize {
        self.inner.sessions.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    /// Drop sessions idle for longer than the TTL, journals included.
    /// Returns how many were removed.
    pub fn expire_idle(&self) -> usize {
        let mut sessions = self.inner.sessions.write().unwrap_or_else(|e| e.into_inner());
        let ttl = self.inner.ttl;
        let expired: Vec<String> = sessions
            .iter()
            .filter(|(_, slot)| slot.idle() > ttl)
            .map(|(id, _)| id.clone())
            .collect();
        for id in &expired {
            if let Some(slot) = sessions.remove(id) {
                let s = slot.session.read().unwrap_or_else(|e| e.into_inner());
                if let Some(p) = s.journal_path() {
                    let _ = std::fs::remove_file(p);
                }
            }
        }
        expired.len()
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.expire_idle();
        let slot = self
            .inner
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::unknown_session(id))?;
        slot.touch();
        Ok(slot)
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("invalid_body", e.to_string()))
}

fn parse_action(body: &Bytes) -> Result<Action, ApiError> {
    let a: Action = parse_body(body)?;
    if !a.is_finite() {
        return Err(ApiError::bad_request("invalid_body", "action fields must be finite"));
    }
    Ok(a)
}

#[derive(Serialize)]
struct Created {
    session_id: String,
    state: MarketState,
    horizon: u32,
    trust_multiplier: f64,
    engine: bool,
}

async fn create(State(app): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let request: CreateRequest = if body.iter().all(u8::is_ascii_whitespace) {
        CreateRequest::default()
    } else {
        parse_body(&body)?
    };
    app.expire_idle();
    let id = uuid::Uuid::new_v4().simple().to_string();
    let mut session = Session::new(id.clone(), request)?;
    if let Some(dir) = &app.inner.persist_dir {
        session
            .persist_to(dir)
            .map_err(|e| ApiError::internal(e.to_string()))?;
    }
    let reply = Created {
        session_id: id.clone(),
        state: session.state,
        horizon: session.horizon,
        trust_multiplier: session.trust_multiplier,
        engine: app.inner.engine.is_some(),
    };
    app.inner
        .sessions
        .write()
        .unwrap_or_else(|e| e.into_inner())
        .insert(id, Slot::new(session));
    Ok((StatusCode::CREATED, Json(reply)).into_response())
}

#[derive(Serialize)]
struct Validated {
    verdict: Verdict,
    repair: Repair,
}

async fn validate(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Validated>, ApiError> {
    let slot = app.slot(&id)?;
    let action = parse_action(&body)?;
    let s = slot.session.read().unwrap_or_else(|e| e.into_inner());
    let cs = &s.market.constraints;
    Ok(Json(Validated {
        verdict: validate_action(&action, &s.state, cs),
        repair: repair_action(&action, &s.state, cs),
    }))
}

#[derive(Serialize)]
struct Estimated {
    #[serde(flatten)]
    estimate: CausalEstimate,
    long_term_value: f64,
}

async fn estimate(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Estimated>, ApiError> {
    let slot = app.slot(&id)?;
    let action = parse_action(&body)?;
    let engine = app.inner.engine.as_ref().ok_or_else(|| {
        ApiError::conflict("engine_unavailable", "the service was started without an engine artifact")
    })?;
    let s = slot.session.read().unwrap_or_else(|e| e.into_inner());
    let estimate = engine.estimate(&s.state, &action);
    Ok(Json(Estimated {
        estimate,
        long_term_value: long_term_value(&estimate, s.trust_multiplier),
    }))
}

async fn act(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<ActResponse>, ApiError> {
    let slot = app.slot(&id)?;
    let req: ActRequest = parse_body(&body)?;
    if !req.action.is_finite() {
        return Err(ApiError::bad_request("invalid_body", "action fields must be finite"));
    }
    let mut s = slot.session.write().unwrap_or_else(|e| e.into_inner());
    if let Some(week) = req.week {
        if week != s.state.week {
            return Err(ApiError::conflict(
                "week_mismatch",
                format!("session is at week {}, request was for week {week}", s.state.week),
            ));
        }
    }
    s.act(req.action, req.mode).map(Json)
}

async fn history(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let slot = app.slot(&id)?;
    let s = slot.session.read().unwrap_or_else(|e| e.into_inner());
    Ok(Json(&s.log).into_response())
}

async fn metrics(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let slot = app.slot(&id)?;
    let s = slot.session.read().unwrap_or_else(|e| e.into_inner());
    Ok(match compute_metrics(&s.log) {
        Ok(m) => Json(m).into_response(),
        Err(_) => Json(Value::Null).into_response(),
    })
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn require_token(State(app): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &app.inner.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(req).await
}

fn cors(origin: Option<&str>) -> CorsLayer {
    let allow = match origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::any(),
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers(Any)
}

/// All routes with token checking and CORS applied.
pub fn router(app: AppState, cors_origin: Option<&str>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/validate", post(validate))
        .route("/sessions/{id}/estimate", post(estimate))
        .route("/sessions/{id}/act", post(act))
        .route("/sessions/{id}/history", get(history))
        .route("/sessions/{id}/metrics", get(metrics))
        .fallback(fallback)
        .layer(middleware::from_fn_with_state(app.clone(), require_token))
        .layer(cors(cors_origin))
        .with_state(app)
}

/// Bind and serve until Ctrl-C.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let app = AppState::new(&cfg)?;
    let listener = tokio::net::TcpListener::bind(cfg.bind).await?;
    let sweeper = app.clone();
    let period = (cfg.ttl / 4).clamp(Duration::from_secs(1), Duration::from_secs(60));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            sweeper.expire_idle();
        }
    });
    axum::serve(listener, router(app, cfg.cors_origin.as_deref()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
