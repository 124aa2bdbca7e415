//! HTTP API for the rating client.

use std::io::SeekFrom;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use tokio::io::{AsyncReadExt, AsyncSeekExt};
use tokio_util::io::ReaderStream;

use crate::mos::write_mos_csv;
use crate::store::{NextItem, SessionStore};
use crate::SubjectiveError;

pub const MEDIA_TYPE: &str = "video/x-yuv4mpeg";

#[derive(Debug, Deserialize)]
pub struct CreateSessionRequest {
    pub participant: String,
    #[serde(default)]
    pub videos: Option<Vec<String>>,
    #[serde(default)]
    pub conditions: Option<Vec<String>>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize)]
struct CreateSessionResponse {
    session_id: String,
    playlist_length: usize,
    seed: u64,
}

#[derive(Debug, Serialize)]
struct NextResponse {
    done: bool,
    playlist_length: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    video_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    media_token: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct RatingRequest {
    pub index: usize,
    pub rating: i64,
}

struct ApiError(SubjectiveError);

impl From<SubjectiveError> for ApiError {
    fn from(e: SubjectiveError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        use SubjectiveError::*;
        let status = match &self.0 {
            Selection(_) | MediaMissing { .. } => StatusCode::BAD_REQUEST,
            UnknownSession(_) | UnknownToken | NoRatings => StatusCode::NOT_FOUND,
            OutOfOrder { .. } | SessionComplete => StatusCode::CONFLICT,
            RatingRange(_) => StatusCode::UNPROCESSABLE_ENTITY,
            TokenExpired => StatusCode::GONE,
            Io { .. } | Csv(_) | CsvFormat(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            warn!("{}", self.0);
        }
        let body = serde_json::json!({ "error": self.0.to_string() });
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/next", get(next_item))
        .route("/api/sessions/{id}/ratings", post(submit_rating))
        .route("/api/media/{token}", get(media))
        .route("/api/report", get(report))
        .with_state(store)
}

async fn create_session(
    State(store): State<Arc<SessionStore>>,
    Json(req): Json<CreateSessionRequest>,
) -> ApiResult<(StatusCode, Json<CreateSessionResponse>)> {
    let c = store.create(&req.participant, req.videos, req.conditions, req.seed)?;
    Ok((
        StatusCode::CREATED,
        Json(CreateSessionResponse {
            session_id: c.session_id,
            playlist_length: c.playlist_length,
            seed: c.seed,
        }),
    ))
}

async fn next_item(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Json<NextResponse>> {
    Ok(Json(match store.next(&id)? {
        NextItem::Item {
            index,
            video_id,
            media_token,
            playlist_length,
        } => NextResponse {
            done: false,
            playlist_length,
            index: Some(index),
            video_id: Some(video_id),
            media_token: Some(media_token),
        },
        NextItem::Done { playlist_length } => NextResponse {
            done: true,
            playlist_length,
            index: None,
            video_id: None,
            media_token: None,
        },
    }))
}

async fn submit_rating(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    Json(req): Json<RatingRequest>,
) -> ApiResult<impl IntoResponse> {
    let store2 = Arc::clone(&store);
    // finalization writes files; keep it off the async workers
    let ack = tokio::task::spawn_blocking(move || store2.rate(&id, req.index, req.rating))
        .await
        .expect("rating task panicked")?;
    Ok(Json(ack))
}

async fn report(State(store): State<Arc<SessionStore>>) -> ApiResult<Response> {
    let report = store.report()?;
    let mut buf = Vec::new();
    write_mos_csv(&mut buf, &report)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], buf).into_response())
}

/// A satisfiable single byte range, inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteRange {
    Full,
    Partial { start: u64, end: u64 },
    Unsatisfiable,
}

/// Resolve a `Range` header against a resource of `len` bytes. Anything
/// other than a single `bytes=` range is answered with the full body.
pub fn parse_range(value: Option<&str>, len: u64) -> ByteRange {
    let Some(spec) = value.and_then(|v| v.trim().strip_prefix("bytes=")) else {
        return ByteRange::Full;
    };
    if spec.contains(',') {
        return ByteRange::Full;
    }
    let Some((a, b)) = spec.split_once('-') else {
        return ByteRange::Full;
    };
    let (a, b) = (a.trim(), b.trim());
    let parsed = match (a.is_empty(), b.is_empty()) {
        (false, _) => {
            let Ok(start) = a.parse::<u64>() else {
                return ByteRange::Full;
            };
            let end = if b.is_empty() {
                Some(u64::MAX)
            } else {
                match b.parse::<u64>() {
                    Ok(e) if e >= start => Some(e),
                    _ => return ByteRange::Full,
                }
            };
            (start, end)
        }
        (true, false) => {
            let Ok(suffix) = b.parse::<u64>() else {
                return ByteRange::Full;
            };
            if suffix == 0 {
                return ByteRange::Unsatisfiable;
            }
            (len.saturating_sub(suffix), Some(u64::MAX))
        }
        (true, true) => return ByteRange::Full,
    };
    let (start, end) = (parsed.0, parsed.1.unwrap_or(u64::MAX));
    if start >= len {
        return ByteRange::Unsatisfiable;
    }
    ByteRange::Partial {
        start,
        end: end.min(len - 1),
    }
}

async fn media(
    State(store): State<Arc<SessionStore>>,
    Path(token): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let path = store.media(&token)?;
    let io_err = |source| SubjectiveError::Io {
        path: path.clone(),
        source,
    };
    let mut file = tokio::fs::File::open(&path).await.map_err(io_err)?;
    let len = file.metadata().await.map_err(io_err)?.len();
    let range = parse_range(headers.get(header::RANGE).and_then(|v| v.to_str().ok()), len);
    let mut resp = match range {
        ByteRange::Unsatisfiable => {
            let mut r = StatusCode::RANGE_NOT_SATISFIABLE.into_response();
            r.headers_mut().insert(
                header::CONTENT_RANGE,
                HeaderValue::from_str(&format!("bytes */{len}")).unwrap(),
            );
            return Ok(r);
        }
        ByteRange::Full => {
            let mut r = Response::new(Body::from_stream(ReaderStream::new(file)));
            r.headers_mut().insert(header::CONTENT_LENGTH, HeaderValue::from(len));
            r
        }
        ByteRange::Partial { start, end } => {
            file.seek(SeekFrom::Start(start)).await.map_err(io_err)?;
            let n = end - start + 1;
            let mut r = Response::new(Body::from_stream(ReaderStream::new(file.take(n))));
            *r.status_mut() = StatusCode::PARTIAL_CONTENT;
            let h = r.headers_mut();
            h.insert(header::CONTENT_LENGTH, HeaderValue::from(n));
            h.insert(
                header::CONTENT_RANGE,
                HeaderValue::from_str(&format!("bytes {start}-{end}/{len}")).unwrap(),
            );
            r
        }
    };
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static(MEDIA_TYPE));
    h.insert(header::ACCEPT_RANGES, HeaderValue::from_static("bytes"));
    h.insert(header::CACHE_CONTROL, HeaderValue::from_static("no-store"));
    Ok(resp)
}

/// Bind `addr` and serve until the process is stopped.
pub async fn serve(store: Arc<SessionStore>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store)).await
}
