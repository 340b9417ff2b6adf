//! JSON over HTTP.
//!
//! | method | path | body / query | reply |
//! |---|---|---|---|
//! | POST | `/session` | optional `{"demographics": {...}}` | session |
//! | GET | `/session/{id}` | | session |
//! | POST | `/demographics` | `{"session_id", "demographics"}` | session |
//! | GET | `/pair?session=ID` | | pair or `{"status": "complete"}` |
//! | POST | `/vote` | `{"session_id", "pair_token", "choice", "client_ts"?}` | `{"vote_id", "replayed"}` |
//! | GET | `/admin/stats` | | counts |
//! | GET | `/admin/export/votes`, `/admin/export/sessions` | | CSV |
//! | GET | `/images/{image_id}` | | image bytes |

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use streetpulse::votes::{format_ts, Choice, Demographics, Rater};

use crate::error::SurveyError;
use crate::service::{PairReply, Service};

#[derive(Clone)]
pub struct AppState {
    pub service: Arc<Mutex<Service>>,
    pub images_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(service: Service, images_dir: Option<PathBuf>) -> AppState {
        AppState {
            service: Arc::new(Mutex::new(service)),
            images_dir,
        }
    }
}

pub struct ApiError(SurveyError);

impl From<SurveyError> for ApiError {
    fn from(e: SurveyError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            SurveyError::UnknownSession(_) => StatusCode::NOT_FOUND,
            SurveyError::StaleToken(_) | SurveyError::DemographicsSet(_) => StatusCode::CONFLICT,
            SurveyError::Invalid(_) => StatusCode::BAD_REQUEST,
            SurveyError::Corrupt(_) | SurveyError::Io(_) | SurveyError::Core(_) => {
                log::error!("{}", self.0);
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs a service call off the async workers, since appends wait on fsync.
async fn with_service<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut Service) -> Result<T, SurveyError> + Send + 'static,
{
    let service = Arc::clone(&state.service);
    tokio::task::spawn_blocking(move || {
        let mut guard = service.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut guard)
    })
    .await
    .map_err(|e| ApiError(SurveyError::Invalid(format!("request aborted: {e}"))))?
    .map_err(ApiError)
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError(SurveyError::Invalid(format!("bad request body: {e}"))))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub created_at: String,
    pub demographics: Option<Demographics>,
}

impl From<&Rater> for SessionView {
    fn from(r: &Rater) -> Self {
        SessionView {
            session_id: r.session_id.clone(),
            created_at: format_ts(&r.created_at),
            demographics: r.demographics,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    #[serde(default)]
    demographics: Option<Demographics>,
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession { demographics: None }
    } else {
        parse_body(&body)?
    };
    let rater = with_service(&state, move |s| s.create_session(req.demographics)).await?;
    Ok((StatusCode::CREATED, Json(SessionView::from(&rater))))
}

async fn read_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let rater = with_service(&state, move |s| s.survey().rater(&id).cloned()).await?;
    Ok(Json(SessionView::from(&rater)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SetDemographics {
    session_id: String,
    demographics: Demographics,
}

async fn set_demographics(State(state): State<AppState>, body: Bytes) -> ApiResult<Json<SessionView>> {
    let req: SetDemographics = parse_body(&body)?;
    let rater = with_service(&state, move |s| s.set_demographics(&req.session_id, req.demographics)).await?;
    Ok(Json(SessionView::from(&rater)))
}

#[derive(Deserialize)]
struct PairQuery {
    session: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImageView {
    pub image_id: String,
    pub url: String,
}

impl ImageView {
    fn new(id: &str) -> Self {
        ImageView {
            image_id: id.to_string(),
            url: format!("/images/{id}"),
        }
    }
}

async fn get_pair(State(state): State<AppState>, Query(q): Query<PairQuery>) -> ApiResult<Json<serde_json::Value>> {
    let reply = with_service(&state, move |s| s.get_pair(&q.session)).await?;
    Ok(Json(match reply {
        PairReply::Complete => json!({ "status": "complete" }),
        PairReply::Pair(o) => json!({
            "status": "pair",
            "left": ImageView::new(&o.left),
            "right": ImageView::new(&o.right),
            "pair_token": o.token,
        }),
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PostVote {
    session_id: String,
    pair_token: String,
    choice: Choice,
    #[serde(default)]
    client_ts: Option<DateTime<Utc>>,
}

async fn post_vote(State(state): State<AppState>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let req: PostVote = parse_body(&body)?;
    let ack = with_service(&state, move |s| {
        s.post_vote(&req.session_id, &req.pair_token, req.choice, req.client_ts)
    })
    .await?;
    Ok(Json(json!({ "vote_id": ack.vote_id, "replayed": ack.replayed })))
}

async fn stats(State(state): State<AppState>) -> ApiResult<Json<serde_json::Value>> {
    let stats = with_service(&state, |s| Ok(s.stats())).await?;
    Ok(Json(serde_json::to_value(stats).expect("stats serialize")))
}

fn csv_response(body: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response()
}

async fn export_votes(State(state): State<AppState>) -> ApiResult<Response> {
    let body = with_service(&state, |s| {
        let mut buf = Vec::new();
        s.export_votes(&mut buf)?;
        Ok(buf)
    })
    .await?;
    Ok(csv_response(body))
}

async fn export_sessions(State(state): State<AppState>) -> ApiResult<Response> {
    let body = with_service(&state, |s| {
        let mut buf = Vec::new();
        s.export_sessions(&mut buf)?;
        Ok(buf)
    })
    .await?;
    Ok(csv_response(body))
}

const IMAGE_TYPES: [(&str, &str); 4] = [
    ("jpg", "image/jpeg"),
    ("jpeg", "image/jpeg"),
    ("png", "image/png"),
    ("webp", "image/webp"),
];

async fn image(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    let not_found = || (StatusCode::NOT_FOUND, Json(json!({ "error": "no such image" }))).into_response();
    let Some(dir) = &state.images_dir else {
        return not_found();
    };
    if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
        return not_found();
    }
    for (ext, mime) in IMAGE_TYPES {
        if let Ok(bytes) = tokio::fs::read(dir.join(format!("{id}.{ext}"))).await {
            return ([(header::CONTENT_TYPE, mime)], bytes).into_response();
        }
    }
    not_found()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}", get(read_session))
        .route("/demographics", post(set_demographics))
        .route("/pair", get(get_pair))
        .route("/vote", post(post_vote))
        .route("/admin/stats", get(stats))
        .route("/admin/export/votes", get(export_votes))
        .route("/admin/export/sessions", get(export_sessions))
        .route("/images/{id}", get(image))
        .with_state(state)
}

/// Serves until Ctrl-C. The first stdout line names the bound address so
/// wrappers and tests know where to connect.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    println!("listening on http://{}", listener.local_addr()?);
    std::io::Write::flush(&mut std::io::stdout())?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
