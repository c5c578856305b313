//! HTTP and WebSocket surface of a running show.
//!
//! Errors are always `{error_code, message}` JSON. Operator actions check the
//! static bearer token when one is configured; audience submissions and all
//! reads are open.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::broadcast::error::RecvError;

use shrine_core::ingest::{IngestError, Round, SubmissionEnvelope};
use shrine_core::moderation::{Decision, ModerationError, TicketState};
use shrine_core::oracle::{OracleError, PoseSequence};
use shrine_core::orchestrator::OrchestratorError;
use shrine_core::show::ShowError;
use shrine_core::sink::{ManifestEntry, SinkError};

use crate::live::LiveShow;

/// Sketches are small, but leave room for a phone camera PNG.
const BODY_LIMIT: usize = 32 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    pub live: LiveShow,
    pub operator_token: Option<Arc<str>>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({"error_code": self.code, "message": self.message})),
        )
            .into_response()
    }
}

impl From<ShowError> for ApiError {
    fn from(e: ShowError) -> Self {
        use StatusCode as S;
        let message = e.to_string();
        let (status, code) = match &e {
            ShowError::Ingest(i) => (
                match i {
                    IngestError::RoundClosed { .. } => S::CONFLICT,
                    IngestError::MalformedPayload(_) => S::BAD_REQUEST,
                    IngestError::ImageTooLarge { .. } => S::PAYLOAD_TOO_LARGE,
                    IngestError::ShowFull { .. } => S::CONFLICT,
                    IngestError::QueueRefused(_) => S::SERVICE_UNAVAILABLE,
                },
                i.code(),
            ),
            ShowError::Moderation(m) => match m {
                ModerationError::UnknownTicket(_) => (S::NOT_FOUND, "UnknownTicket"),
                ModerationError::AlreadyDecided(_) => (S::CONFLICT, "AlreadyDecided"),
                _ => (S::CONFLICT, "ModerationConflict"),
            },
            ShowError::Orchestrator(o) => match o {
                OrchestratorError::NoCompletedJobs => (S::NOT_FOUND, "NoCompletedJobs"),
                OrchestratorError::UnknownJob(_) => (S::NOT_FOUND, "UnknownJob"),
                OrchestratorError::QueueClosed => (S::SERVICE_UNAVAILABLE, "QueueClosed"),
                _ => (S::CONFLICT, "OrchestratorConflict"),
            },
            ShowError::Sink(s) => match s {
                SinkError::ShowClosed(_) => (S::CONFLICT, "ShowClosed"),
                SinkError::ShowOpen(_) => (S::CONFLICT, "ShowOpen"),
                SinkError::GateViolation { .. } => (S::INTERNAL_SERVER_ERROR, "GateViolation"),
                SinkError::Io(_) => (S::INTERNAL_SERVER_ERROR, "ManifestIo"),
            },
            ShowError::Oracle(OracleError::Poem(_)) => (S::BAD_GATEWAY, "PoemBackend"),
            ShowError::Oracle(_) => (S::BAD_REQUEST, "InvalidRecording"),
            ShowError::NoCue => (S::CONFLICT, "NoCue"),
            ShowError::UnknownJob(_) => (S::NOT_FOUND, "UnknownJob"),
            ShowError::UnknownAsset(_) => (S::NOT_FOUND, "UnknownAsset"),
            ShowError::Config(_) | ShowError::MalformedRecording(_) => {
                (S::BAD_REQUEST, "BadRequest")
            }
            ShowError::Pipeline(_) => (S::INTERNAL_SERVER_ERROR, "Pipeline"),
        };
        Self::new(status, code, message)
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        ShowError::from(e).into()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/shows/{show_id}", get(status))
        .route("/shows/{show_id}/devices", post(assign_device))
        .route("/shows/{show_id}/rounds/open", post(open_round))
        .route("/shows/{show_id}/rounds/close", post(close_round))
        .route("/shows/{show_id}/close", post(close_show))
        .route("/shows/{show_id}/submissions", post(submit))
        .route("/shows/{show_id}/latency", get(latency))
        .route("/shows/{show_id}/jobs", get(list_jobs))
        .route("/shows/{show_id}/jobs/{job_id}", get(job))
        .route("/shows/{show_id}/review", get(review))
        .route("/tickets/{ticket_id}/decision", post(decide))
        .route("/shows/{show_id}/audit", get(audit))
        .route("/assets/{asset_id}/preview", get(preview))
        .route("/shows/{show_id}/oracle/score", post(oracle_score))
        .route("/shows/{show_id}/oracle/cue", post(oracle_cue))
        .route("/shows/{show_id}/oracle/override", post(oracle_override))
        .route("/shows/{show_id}/stream", get(stream))
        .route("/shows/{show_id}/manifest", get(manifest))
        .route("/shows/{show_id}/fingerprint", get(fingerprint))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

fn check_show(st: &AppState, show_id: &str) -> ApiResult<()> {
    if st.live.lock().show_id() == show_id {
        Ok(())
    } else {
        Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "UnknownShow",
            format!("no show {show_id:?} here"),
        ))
    }
}

fn check_operator(st: &AppState, headers: &HeaderMap) -> ApiResult<()> {
    let Some(expected) = &st.operator_token else {
        return Ok(());
    };
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if given == Some(expected.as_ref()) {
        Ok(())
    } else {
        Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "Unauthorized",
            "operator token required",
        ))
    }
}

fn parse_json<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))
}

fn jsonl_response(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

async fn status(State(st): State<AppState>, Path(show_id): Path<String>) -> ApiResult<Json<Value>> {
    check_show(&st, &show_id)?;
    let show = st.live.lock();
    Ok(Json(json!({
        "show_id": show.show_id(),
        "round": show.current_round(),
        "closed": show.is_closed(),
        "jobs": show.jobs().count(),
        "published": show.sink().entries().len(),
        "pending_reviews": show.tickets_in(TicketState::Pending).len(),
        "dwell_limit_ms": show.config().moderation.dwell_limit_ms,
        "cue": show.cue(),
    })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceBody {
    device_id: String,
}

async fn assign_device(
    State(st): State<AppState>,
    Path(show_id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    check_show(&st, &show_id)?;
    let body: DeviceBody = parse_json(&body)?;
    let a = st.live.lock().assign_group(&body.device_id)?;
    Ok(Json(json!(a)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RoundBody {
    round: Round,
}

async fn open_round(
    State(st): State<AppState>,
    Path(show_id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    check_show(&st, &show_id)?;
    check_operator(&st, &headers)?;
    let body: RoundBody = parse_json(&body)?;
    st.live.lock().open_round(body.round);
    Ok(Json(json!({"round": body.round})))
}

async fn close_round(
    State(st): State<AppState>,
    Path(show_id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<Value>> {
    check_show(&st, &show_id)?;
    check_operator(&st, &headers)?;
    let closed = st.live.lock().close_round();
    Ok(Json(json!({"closed": closed})))
}

async fn close_show(
    State(st): State<AppState>,
    Path(show_id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<Value>> {
    check_show(&st, &show_id)?;
    check_operator(&st, &headers)?;
    let fp = st.live.with(|s, now| {
        s.close(now);
        s.fingerprint()
    })?;
    Ok(Json(json!({"fingerprint": fp})))
}

async fn submit(
    State(st): State<AppState>,
    Path(show_id): Path<String>,
    mut multipart: Multipart,
) -> ApiResult<Json<Value>> {
    check_show(&st, &show_id)?;
    let malformed = |m: String| ApiError::from(ShowError::Ingest(IngestError::MalformedPayload(m)));
    let (mut meta, mut sketch) = (None, None);
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| malformed(e.to_string()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(|e| malformed(e.to_string()))?;
        match name.as_str() {
            "meta" => meta = Some(bytes.to_vec()),
            "sketch" => sketch = Some(bytes.to_vec()),
            other => return Err(malformed(format!("unexpected part {other:?}"))),
        }
    }
    let envelope = SubmissionEnvelope {
        show_id,
        meta_json: meta.ok_or_else(|| malformed("missing meta part".into()))?,
        sketch_png: sketch.ok_or_else(|| malformed("missing sketch part".into()))?,
    };
    let receipt = st.live.with(|s, now| s.submit(&envelope, now))?;
    st.live.pump();
    Ok(Json(json!(receipt)))
}

async fn latency(
    State(st): State<AppState>,
    Path(show_id): Path<String>,
) -> ApiResult<Json<Value>> {
    check_show(&st, &show_id)?;
    let report = st.live.lock().latency_report()?;
    Ok(Json(json!(report)))
}

async fn list_jobs(
    State(st): State<AppState>,
    Path(show_id): Path<String>,
) -> ApiResult<Json<Value>> {
    check_show(&st, &show_id)?;
    let show = st.live.lock();
    let jobs: Vec<Value> = show.jobs().map(|j| json!(j)).collect();
    Ok(Json(Value::Array(jobs)))
}

async fn job(
    State(st): State<AppState>,
    Path((show_id, job_id)): Path<(String, String)>,
) -> ApiResult<Json<Value>> {
    check_show(&st, &show_id)?;
    let show = st.live.lock();
    let job = show
        .job(&job_id)
        .ok_or_else(|| ShowError::UnknownJob(job_id.clone()))?;
    let info = show.job_info(&job_id);
    Ok(Json(json!({
        "job": job,
        "submission": info.map(|i| json!({
            "submission_id": i.submission.submission_id,
            "client_token": i.submission.client_token,
            "device_id": i.submission.device_id,
            "muse_id": i.submission.muse_id,
            "round": i.submission.round,
            "received_at": i.submission.received_at,
        })),
        "ticket": show.ticket_for_job(&job_id),
        "substitution": show.desk().substitution_for_job(&job_id),
    })))
}

#[derive(Deserialize)]
struct ReviewQuery {
    state: Option<String>,
}

async fn review(
    State(st): State<AppState>,
    Path(show_id): Path<String>,
    Query(q): Query<ReviewQuery>,
) -> ApiResult<Json<Value>> {
    check_show(&st, &show_id)?;
    let state: TicketState = match q.state.as_deref() {
        None => TicketState::Pending,
        Some(s) => serde_json::from_value(json!(s.to_ascii_uppercase()))
            .map_err(|_| ApiError::bad_request(format!("unknown ticket state {s:?}")))?,
    };
    let (show, now) = (st.live.lock(), st.live.now());
    let limit = show.config().moderation.dwell_limit_ms;
    let list: Vec<Value> = show
        .tickets_in(state)
        .into_iter()
        .map(|t| {
            let mut v = json!(t);
            let age = now.saturating_sub(t.created_at);
            v["preview_url"] = json!(format!("/assets/{}/preview", t.asset_id));
            v["age_ms"] = json!(age);
            v["auto_decide_in_ms"] = json!(limit.saturating_sub(age));
            v
        })
        .collect();
    Ok(Json(Value::Array(list)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBody {
    decision: String,
    operator: String,
}

async fn decide(
    State(st): State<AppState>,
    Path(ticket_id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    check_operator(&st, &headers)?;
    let body: DecisionBody = parse_json(&body)?;
    let decision = Decision::parse(&body.decision).ok_or_else(|| {
        ApiError::bad_request(format!(
            "decision must be APPROVE or REJECT, got {:?}",
            body.decision
        ))
    })?;
    if body.operator.trim().is_empty() {
        return Err(ApiError::bad_request("operator must be named"));
    }
    let outcome = st
        .live
        .with(|s, now| s.decide(&ticket_id, decision, &body.operator, now))?;
    Ok(Json(json!(outcome)))
}

async fn audit(State(st): State<AppState>, Path(show_id): Path<String>) -> ApiResult<Response> {
    check_show(&st, &show_id)?;
    let body = st.live.lock().audit().to_jsonl();
    Ok(jsonl_response(body))
}

async fn preview(State(st): State<AppState>, Path(asset_id): Path<String>) -> ApiResult<Response> {
    let png = st
        .live
        .lock()
        .preview_png(&asset_id)
        .ok_or_else(|| ShowError::UnknownAsset(asset_id))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

/// A pose recording as JSON lines or as one JSON array of frames.
fn parse_recording(body: &[u8]) -> ApiResult<PoseSequence> {
    let text = std::str::from_utf8(body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let parsed = if text.trim_start().starts_with('[') {
        serde_json::from_str::<PoseSequence>(text).map_err(|e| OracleError::Parse(e.to_string()))
    } else {
        PoseSequence::from_jsonl(text)
    };
    parsed.map_err(|e| ShowError::Oracle(e).into())
}

async fn oracle_score(
    State(st): State<AppState>,
    Path(show_id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    check_show(&st, &show_id)?;
    check_operator(&st, &headers)?;
    let recording = parse_recording(&body)?;
    let report = st.live.with(|s, now| s.score(&recording, now))?;
    Ok(Json(json!(report)))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CueBody {
    seed: Option<u64>,
}

async fn oracle_cue(
    State(st): State<AppState>,
    Path(show_id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    check_show(&st, &show_id)?;
    check_operator(&st, &headers)?;
    let body: CueBody = if body.iter().all(u8::is_ascii_whitespace) {
        CueBody::default()
    } else {
        parse_json(&body)?
    };
    let live = st.live.clone();
    // the poem backend may be remote and blocking
    let cue =
        tokio::task::spawn_blocking(move || live.with(|s, now| s.trigger_cue(body.seed, now)))
            .await
            .map_err(|e| {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string())
            })??;
    Ok(Json(json!(cue)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OverrideBody {
    composite: f64,
}

async fn oracle_override(
    State(st): State<AppState>,
    Path(show_id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    check_show(&st, &show_id)?;
    check_operator(&st, &headers)?;
    let body: OverrideBody = parse_json(&body)?;
    let level = st
        .live
        .with(|s, now| s.override_feedback(body.composite, now))?;
    Ok(Json(json!(level)))
}

#[derive(Deserialize)]
struct StreamQuery {
    from_seq: Option<u64>,
}

async fn stream(
    State(st): State<AppState>,
    Path(show_id): Path<String>,
    Query(q): Query<StreamQuery>,
    ws: WebSocketUpgrade,
) -> ApiResult<Response> {
    check_show(&st, &show_id)?;
    let from = q.from_seq.unwrap_or(0);
    Ok(ws.on_upgrade(move |socket| feed(socket, st.live, from)))
}

async fn send_entries(
    socket: &mut WebSocket,
    entries: &[ManifestEntry],
    next: &mut u64,
) -> Result<(), axum::Error> {
    for e in entries {
        if e.seq < *next {
            continue;
        }
        socket.send(Message::Text(e.stream_line().into())).await?;
        *next = e.seq + 1;
    }
    Ok(())
}

/// Backfill from `from`, then live entries. The receiver is taken under the
/// same lock as the backfill, so nothing falls between them; if the receiver
/// lags or skips ahead the gap is refilled from the manifest.
async fn feed(mut socket: WebSocket, live: LiveShow, from: u64) {
    let (backfill, mut rx) = live.lock().subscribe(from);
    let mut next = from;
    if send_entries(&mut socket, &backfill, &mut next)
        .await
        .is_err()
    {
        return;
    }
    loop {
        tokio::select! {
            msg = rx.recv() => {
                let batch = match msg {
                    Ok(e) if e.seq <= next => vec![e],
                    Ok(_) | Err(RecvError::Lagged(_)) => live.lock().sink().backfill(next),
                    Err(RecvError::Closed) => break,
                };
                if send_entries(&mut socket, &batch, &mut next).await.is_err() {
                    break;
                }
            }
            incoming = socket.recv() => match incoming {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}

async fn manifest(State(st): State<AppState>, Path(show_id): Path<String>) -> ApiResult<Response> {
    check_show(&st, &show_id)?;
    let body = st.live.lock().manifest().to_jsonl();
    Ok(jsonl_response(body))
}

async fn fingerprint(
    State(st): State<AppState>,
    Path(show_id): Path<String>,
) -> ApiResult<Json<Value>> {
    check_show(&st, &show_id)?;
    let fp = st.live.lock().fingerprint()?;
    Ok(Json(json!({"fingerprint": fp})))
}
