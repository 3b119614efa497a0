//! JSON-over-HTTP front end. Every route except `/health` requires a bearer
//! token that maps to a configured principal.

use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use congait_core::audit::AuditError;
use congait_core::cas::Ratings;
use congait_core::contest::{ArgumentType, ContestError, Decision, Verdict};
use congait_core::trend::MedicationEvent;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::config::Principal;
use crate::service::{IngestRequest, Service, ServiceError};

pub type SharedService = Arc<Mutex<Service>>;

pub const DEFAULT_HORIZON: usize = 3;

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        use ServiceError as E;
        match self {
            E::Unauthenticated | E::UnknownPrincipal(_) => StatusCode::UNAUTHORIZED,
            E::Forbidden { .. } => StatusCode::FORBIDDEN,
            E::UnknownSession(_)
            | E::UnknownPrediction(_)
            | E::UnknownCase(_)
            | E::UnknownPatient(_)
            | E::WindowOutOfRange { .. } => StatusCode::NOT_FOUND,
            E::SessionExists(_) => StatusCode::CONFLICT,
            E::InvalidId(_) => StatusCode::BAD_REQUEST,
            E::Ingest(_) | E::Cas(_) | E::Trend(_) => StatusCode::UNPROCESSABLE_ENTITY,
            E::Contest(e) => match e {
                ContestError::ForbiddenRole { .. } => StatusCode::FORBIDDEN,
                ContestError::UnknownPrediction(_) => StatusCode::NOT_FOUND,
                ContestError::EmptyNote | ContestError::InvalidMaxRounds => StatusCode::UNPROCESSABLE_ENTITY,
                ContestError::CorruptHistory => StatusCode::INTERNAL_SERVER_ERROR,
                ContestError::IllegalTransition { .. }
                | ContestError::RoundMismatch { .. }
                | ContestError::PredictionMismatch { .. }
                | ContestError::StaleCase { .. } => StatusCode::CONFLICT,
            },
            E::Audit(AuditError::RangeOutOfBounds { .. }) => StatusCode::BAD_REQUEST,
            E::Model(_)
            | E::Explain(_)
            | E::Justify(_)
            | E::Audit(_)
            | E::StoreCorrupt(_)
            | E::Config(_)
            | E::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

fn bearer(headers: &HeaderMap) -> Option<String> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let token = value.strip_prefix("Bearer ")?.trim();
    (!token.is_empty()).then(|| token.to_string())
}

/// Authenticates, then runs `f` on a blocking thread with the service locked.
async fn call<T, F>(state: SharedService, headers: HeaderMap, status: StatusCode, f: F) -> Response
where
    T: Serialize + Send + 'static,
    F: FnOnce(&mut Service, &Principal) -> Result<T, ServiceError> + Send + 'static,
{
    let token = bearer(&headers);
    let joined = tokio::task::spawn_blocking(move || {
        let mut service = state.lock().unwrap_or_else(|poisoned| poisoned.into_inner());
        let who = service.authenticate(token.as_deref().ok_or(ServiceError::Unauthenticated)?)?;
        f(&mut service, &who)
    })
    .await;
    match joined {
        Ok(Ok(body)) => (status, Json(body)).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => {
            tracing::error!(error = %e, "handler panicked");
            (StatusCode::INTERNAL_SERVER_ERROR, Json(ErrorBody { error: "internal error".into() })).into_response()
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct ContestBody {
    pub argument_type: String,
    pub note: String,
}

#[derive(Debug, Deserialize)]
pub struct DecisionBody {
    #[serde(flatten)]
    pub decision: Decision,
    pub expected_version: u64,
}

#[derive(Debug, Deserialize)]
pub struct ResolveBody {
    #[serde(flatten)]
    pub verdict: Verdict,
    #[serde(default)]
    pub expected_version: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct RelevanceQuery {
    #[serde(default)]
    matrix: bool,
}

#[derive(Debug, Deserialize)]
struct TrendQuery {
    horizon: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    from: u64,
    to: u64,
}

pub fn router(state: SharedService) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(ingest))
        .route("/sessions/{id}/features", get(features))
        .route("/sessions/{id}/windows/{k}", get(window))
        .route("/sessions/{id}/run", post(run))
        .route("/predictions/{id}", get(prediction))
        .route("/predictions/{id}/relevance", get(relevance))
        .route("/predictions/{id}/contests", post(open_contest))
        .route("/contests/{id}", get(contest))
        .route("/contests/{id}/decision", post(decide))
        .route("/contests/{id}/resolve", post(resolve))
        .route("/patients/{id}/trend", get(trend))
        .route("/patients/{id}/medications", post(medication))
        .route("/cas/compute", post(cas))
        .route("/audit/verify", get(audit_verify))
        .route("/audit/export", get(audit_export))
        .with_state(state)
}

async fn health(State(state): State<SharedService>) -> Response {
    let health = state.lock().unwrap_or_else(|p| p.into_inner()).health();
    Json(health).into_response()
}

async fn ingest(State(s): State<SharedService>, h: HeaderMap, Json(req): Json<IngestRequest>) -> Response {
    call(s, h, StatusCode::CREATED, move |svc, who| svc.ingest_session(who, req)).await
}

async fn features(State(s): State<SharedService>, h: HeaderMap, Path(id): Path<String>) -> Response {
    call(s, h, StatusCode::OK, move |svc, who| svc.session_features(who, &id)).await
}

async fn window(State(s): State<SharedService>, h: HeaderMap, Path((id, k)): Path<(String, usize)>) -> Response {
    call(s, h, StatusCode::OK, move |svc, who| svc.session_window(who, &id, k)).await
}

async fn run(State(s): State<SharedService>, h: HeaderMap, Path(id): Path<String>) -> Response {
    call(s, h, StatusCode::OK, move |svc, who| svc.run_session(who, &id)).await
}

async fn prediction(State(s): State<SharedService>, h: HeaderMap, Path(id): Path<String>) -> Response {
    call(s, h, StatusCode::OK, move |svc, who| svc.get_prediction(who, &id)).await
}

async fn relevance(
    State(s): State<SharedService>,
    h: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<RelevanceQuery>,
) -> Response {
    call(s, h, StatusCode::OK, move |svc, who| svc.get_relevance(who, &id, q.matrix)).await
}

async fn open_contest(
    State(s): State<SharedService>,
    h: HeaderMap,
    Path(id): Path<String>,
    Json(body): Json<ContestBody>,
) -> Response {
    let argument_type = match body.argument_type.parse::<ArgumentType>() {
        Ok(a) => a,
        Err(e) => return (StatusCode::UNPROCESSABLE_ENTITY, Json(ErrorBody { error: e })).into_response(),
    };
    call(s, h, StatusCode::CREATED, move |svc, who| svc.open_contest(who, &id, argument_type, &body.note)).await
}

async fn contest(State(s): State<SharedService>, h: HeaderMap, Path(id): Path<String>) -> Response {
    call(s, h, StatusCode::OK, move |svc, who| svc.get_contest(who, &id)).await
}

async fn decide(
    State(s): State<SharedService>,
    h: HeaderMap,
    Path(id): Path<String>,
    Json(body): Json<DecisionBody>,
) -> Response {
    call(s, h, StatusCode::OK, move |svc, who| svc.decide(who, &id, body.decision, body.expected_version)).await
}

async fn resolve(
    State(s): State<SharedService>,
    h: HeaderMap,
    Path(id): Path<String>,
    Json(body): Json<ResolveBody>,
) -> Response {
    call(s, h, StatusCode::OK, move |svc, who| svc.resolve(who, &id, body.verdict, body.expected_version)).await
}

async fn trend(
    State(s): State<SharedService>,
    h: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<TrendQuery>,
) -> Response {
    let horizon = q.horizon.unwrap_or(DEFAULT_HORIZON);
    call(s, h, StatusCode::OK, move |svc, who| svc.trend(who, &id, horizon)).await
}

async fn medication(
    State(s): State<SharedService>,
    h: HeaderMap,
    Path(id): Path<String>,
    Json(event): Json<MedicationEvent>,
) -> Response {
    call(s, h, StatusCode::CREATED, move |svc, who| svc.add_medication(who, &id, event)).await
}

async fn cas(State(s): State<SharedService>, h: HeaderMap, Json(ratings): Json<Ratings>) -> Response {
    call(s, h, StatusCode::OK, move |svc, who| svc.compute_cas(who, &ratings)).await
}

async fn audit_verify(State(s): State<SharedService>, h: HeaderMap) -> Response {
    call(s, h, StatusCode::OK, move |svc, who| svc.audit_verify(who)).await
}

async fn audit_export(State(s): State<SharedService>, h: HeaderMap, Query(q): Query<ExportQuery>) -> Response {
    call(s, h, StatusCode::OK, move |svc, who| svc.audit_export(who, q.from, q.to)).await
}

/// Serves until ctrl-c.
pub async fn serve(listener: TcpListener, service: Service) -> std::io::Result<()> {
    let app = router(Arc::new(Mutex::new(service)));
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
