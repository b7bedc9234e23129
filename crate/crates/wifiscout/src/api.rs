//! HTTP/JSON interface under `/api/v1`.
//!
//! Bodies are decoded by hand from raw bytes so that every failure, a JSON
//! syntax error included, comes back as the same `{code, message, details?}`
//! envelope.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use wifiscout_core::ingest::{self, ApDraft, ReviewSubmission};
use wifiscout_core::model::Violation;
use wifiscout_core::reward::RewardError;
use wifiscout_core::spatial::{self, SpatialError};
use wifiscout_core::{
    AdvisoryState, AdvisoryStore, ApSummary, Bbox, GeoPoint, NetMetrics, PlaceTag, Review, StoreError, Timestamp,
    UserAccount,
};

pub const DEFAULT_LEADERBOARD_SIZE: usize = 10;
pub const MAX_LEADERBOARD_SIZE: usize = 1_000;

/// Wall-clock source in seconds since the Unix epoch.
pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs() as Timestamp)
            .unwrap_or(0)
    })
}

/// Decides whether a request may act as the `user_id` named in its body.
/// There is no authentication protocol; the default trusts the body.
pub type IdentityCheck = Arc<dyn Fn(&HeaderMap, &str) -> bool + Send + Sync>;

pub fn trust_body() -> IdentityCheck {
    Arc::new(|_, _| true)
}

#[derive(Clone)]
pub struct AppState {
    store: Arc<RwLock<AdvisoryStore>>,
    clock: Clock,
    identity: IdentityCheck,
    cluster_radius_m: f64,
}

impl AppState {
    pub fn new(store: AdvisoryStore, clock: Clock, cluster_radius_m: f64) -> Self {
        Self {
            store: Arc::new(RwLock::new(store)),
            clock,
            identity: trust_body(),
            cluster_radius_m,
        }
    }

    pub fn with_identity_check(mut self, check: IdentityCheck) -> Self {
        self.identity = check;
        self
    }

    fn authorize(&self, headers: &HeaderMap, user_id: &str) -> Result<(), ApiError> {
        if (self.identity)(headers, user_id) {
            Ok(())
        } else {
            Err(ApiError::new(
                StatusCode::NOT_FOUND,
                ErrorCode::UnknownUser,
                format!("request may not act as {user_id:?}"),
            ))
        }
    }

    pub fn store(&self) -> &Arc<RwLock<AdvisoryStore>> {
        &self.store
    }

    /// Server time for a new event, never behind the log head.
    fn now(&self, state: &AdvisoryState) -> Timestamp {
        (self.clock)().max(state.head_at())
    }

    fn read<T>(&self, f: impl FnOnce(&AdvisoryStore) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let guard = self.store.read().map_err(|_| ApiError::internal())?;
        f(&guard)
    }

    fn write<T>(&self, f: impl FnOnce(&mut AdvisoryStore) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let mut guard = self.store.write().map_err(|_| ApiError::internal())?;
        f(&mut guard)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/users", post(register_user))
        .route("/api/v1/reviews", post(submit_review))
        .route("/api/v1/aps", get(list_aps))
        .route("/api/v1/clusters", get(list_clusters))
        .route("/api/v1/leaderboard", get(leaderboard))
        .route("/api/v1/ownership", get(ownership))
        .route("/api/v1/snapshot", get(snapshot))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, ErrorCode::MalformedBody, "no such route") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(StatusCode::METHOD_NOT_ALLOWED, ErrorCode::MalformedBody, "method not allowed")
        })
        .with_state(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    ValidationFailed,
    UnknownUser,
    UnknownAp,
    DuplicateUser,
    InvalidBbox,
    StaleTimestamp,
    MalformedBody,
    UnsupportedVersion,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<Vec<Violation>>,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code,
                message: message.into(),
                details: None,
            },
        }
    }

    fn validation(violations: Vec<Violation>) -> Self {
        let mut e = Self::new(StatusCode::BAD_REQUEST, ErrorCode::ValidationFailed, "validation failed");
        e.body.details = Some(violations);
        e
    }

    fn malformed(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, ErrorCode::MalformedBody, message)
    }

    fn bbox(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, ErrorCode::InvalidBbox, message)
    }

    fn internal() -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, ErrorCode::Internal, "internal error")
    }

    pub fn status(&self) -> StatusCode {
        self.status
    }

    pub fn code(&self) -> ErrorCode {
        self.body.code
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::ValidationFailed(v) => ApiError::validation(v),
            StoreError::DuplicateReview(key) => ApiError::validation(vec![Violation {
                field: "review",
                reason: format!("duplicate review {key}"),
            }]),
            StoreError::UnknownUser(u) => {
                ApiError::new(StatusCode::NOT_FOUND, ErrorCode::UnknownUser, format!("unknown user {u:?}"))
            }
            StoreError::UnknownAp(a) => {
                ApiError::new(StatusCode::NOT_FOUND, ErrorCode::UnknownAp, format!("unknown access point {a:?}"))
            }
            StoreError::DuplicateUser(u) => ApiError::new(
                StatusCode::CONFLICT,
                ErrorCode::DuplicateUser,
                format!("user {u:?} is already registered"),
            ),
            e @ StoreError::StaleTimestamp { .. } => {
                ApiError::new(StatusCode::CONFLICT, ErrorCode::StaleTimestamp, e.to_string())
            }
            StoreError::Reward(e @ RewardError::NonMonotonicTimestamp { .. }) => {
                ApiError::new(StatusCode::CONFLICT, ErrorCode::StaleTimestamp, e.to_string())
            }
            StoreError::InvalidBbox(m) => ApiError::bbox(m),
            other => {
                tracing::error!(error = %other, "request failed");
                ApiError::internal()
            }
        }
    }
}

impl From<SpatialError> for ApiError {
    fn from(e: SpatialError) -> Self {
        match e {
            SpatialError::InvalidBbox(m) => ApiError::bbox(m.to_string()),
            SpatialError::InvalidZoom(_) => ApiError::validation(vec![Violation {
                field: "zoom",
                reason: e.to_string(),
            }]),
        }
    }
}

fn decode_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::malformed(format!("malformed JSON body: {e}")))
}

fn require(value: Option<String>, field: &'static str, out: &mut Vec<Violation>) -> String {
    if value.is_none() {
        out.push(Violation {
            field,
            reason: "is required".into(),
        });
    }
    value.unwrap_or_default()
}

type Params = Query<HashMap<String, String>>;

fn parse_bbox(params: &HashMap<String, String>) -> Result<Option<Bbox>, ApiError> {
    params
        .get("bbox")
        .map(|s| s.parse::<Bbox>().map_err(|e| ApiError::bbox(e.to_string())))
        .transpose()
}

fn require_bbox(params: &HashMap<String, String>) -> Result<Bbox, ApiError> {
    parse_bbox(params)?.ok_or_else(|| ApiError::bbox("bbox query parameter is required"))
}

fn parse_param<T: std::str::FromStr>(params: &HashMap<String, String>, name: &str) -> Result<Option<T>, ApiError> {
    params
        .get(name)
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| ApiError::malformed(format!("query parameter {name}={s:?} is not valid")))
        })
        .transpose()
}

#[derive(Debug, Deserialize)]
struct RegisterBody {
    user_id: Option<String>,
    display_name: Option<String>,
    #[serde(default)]
    avatar_ref: String,
}

async fn register_user(
    State(app): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let body: RegisterBody = decode_body(&body)?;
    let (Some(user_id), Some(display_name)) = (body.user_id, body.display_name) else {
        return Err(ApiError::malformed("user_id and display_name are required"));
    };
    app.authorize(&headers, &user_id)?;
    app.write(|store| {
        let account = UserAccount {
            user_id,
            display_name,
            avatar_ref: body.avatar_ref,
            registered_at: app.now(store.state()),
        };
        let reward = ingest::register_user(store, account)?;
        Ok((StatusCode::CREATED, Json(reward)))
    })
}

/// A review, optionally with the details of an AP nobody has reported yet
/// (`ssid`, `lat`, `lon`). Without `at` the server clock is used; without
/// `review_id` one is derived from user, AP and time.
#[derive(Debug, Deserialize)]
struct ReviewBody {
    review_id: Option<String>,
    user_id: Option<String>,
    #[serde(alias = "bssid")]
    ap_id: Option<String>,
    at: Option<Timestamp>,
    rating: Option<i64>,
    comment: Option<String>,
    metrics: Option<NetMetrics>,
    place: Option<PlaceTag>,
    ssid: Option<String>,
    lat: Option<f64>,
    lon: Option<f64>,
}

async fn submit_review(
    State(app): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let body: ReviewBody = decode_body(&body)?;
    let mut missing = Vec::new();
    let user_id = require(body.user_id, "user_id", &mut missing);
    let ap_id = require(body.ap_id, "ap_id", &mut missing);
    if body.rating.is_none() {
        missing.push(Violation {
            field: "rating",
            reason: "is required".into(),
        });
    }
    if !missing.is_empty() {
        return Err(ApiError::validation(missing));
    }
    app.authorize(&headers, &user_id)?;
    let rating = body.rating.unwrap_or_default().clamp(i32::MIN as i64, i32::MAX as i64) as i32;
    let new_ap = match (body.ssid, body.lat, body.lon) {
        (Some(ssid), Some(lat), Some(lon)) => Some(ApDraft {
            ssid,
            location: GeoPoint { lat, lon },
            place: body.place.clone(),
        }),
        _ => None,
    };
    app.write(|store| {
        let at = body.at.unwrap_or_else(|| app.now(store.state()));
        let review = Review {
            review_id: body.review_id.unwrap_or_else(|| format!("{user_id}@{ap_id}@{at}")),
            user_id,
            ap_id,
            at,
            rating,
            comment: body.comment,
            metrics: body.metrics,
            place: body.place,
        };
        let reward = ingest::submit_review(store, ReviewSubmission { review, new_ap })?;
        Ok((StatusCode::CREATED, Json(reward)))
    })
}

async fn list_aps(State(app): State<AppState>, Query(params): Params) -> Result<Json<Vec<ApSummary>>, ApiError> {
    let bbox = require_bbox(&params)?;
    let min_rating: Option<f64> = parse_param(&params, "min_rating")?;
    if min_rating.is_some_and(|r| !r.is_finite()) {
        return Err(ApiError::malformed("min_rating must be finite"));
    }
    app.read(|store| Ok(Json(store.state().query_region(&bbox, min_rating)?)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterView {
    pub cluster_id: String,
    pub centroid: GeoPoint,
    pub size: usize,
}

async fn list_clusters(State(app): State<AppState>, Query(params): Params) -> Result<Json<Vec<ClusterView>>, ApiError> {
    let bbox = require_bbox(&params)?;
    let zoom: Option<i64> = parse_param(&params, "zoom")?;
    let clusters = app.read(|store| {
        let aps: Vec<_> = store.state().access_points().cloned().collect();
        Ok(match zoom {
            Some(z) => spatial::clusters_for_viewport(&aps, &bbox, z)?,
            None => {
                bbox.validate().map_err(|e| ApiError::bbox(e.to_string()))?;
                let visible: Vec<_> = aps.into_iter().filter(|a| bbox.contains(&a.location)).collect();
                spatial::cluster_aps(&visible, app.cluster_radius_m)
            }
        })
    })?;
    Ok(Json(
        clusters
            .into_iter()
            .map(|c| ClusterView {
                cluster_id: c.cluster_id,
                centroid: c.centroid,
                size: c.size,
            })
            .collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub rank: usize,
    pub user_id: String,
    pub display_name: String,
    pub avatar_ref: String,
    pub total_points: u64,
}

async fn leaderboard(State(app): State<AppState>, Query(params): Params) -> Result<Json<Vec<LeaderboardRow>>, ApiError> {
    let n: usize = parse_param(&params, "n")?.unwrap_or(DEFAULT_LEADERBOARD_SIZE);
    let n = n.min(MAX_LEADERBOARD_SIZE);
    app.read(|store| {
        let state = store.state();
        let rows = state
            .ledger()
            .leaderboard(n)
            .into_iter()
            .enumerate()
            .map(|(i, entry)| {
                let account = state.user(&entry.user_id);
                LeaderboardRow {
                    rank: i + 1,
                    display_name: account.map(|a| a.display_name.clone()).unwrap_or_default(),
                    avatar_ref: account.map(|a| a.avatar_ref.clone()).unwrap_or_default(),
                    user_id: entry.user_id,
                    total_points: entry.total_points,
                }
            })
            .collect();
        Ok(Json(rows))
    })
}

/// Who owns an AP, with enough of the AP to place it on a map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwnershipRow {
    pub ap_id: String,
    pub ssid: String,
    pub location: GeoPoint,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub owner_user_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avatar_ref: Option<String>,
}

async fn ownership(State(app): State<AppState>, Query(params): Params) -> Result<Json<Vec<OwnershipRow>>, ApiError> {
    let bbox = require_bbox(&params)?;
    bbox.validate().map_err(|e| ApiError::bbox(e.to_string()))?;
    app.read(|store| {
        let state = store.state();
        let rows = state
            .access_points()
            .filter(|ap| bbox.contains(&ap.location))
            .map(|ap| {
                let owner = state.ledger().owner_of(&ap.ap_id);
                OwnershipRow {
                    ap_id: ap.ap_id.clone(),
                    ssid: ap.ssid.clone(),
                    location: ap.location,
                    avatar_ref: owner.as_deref().and_then(|u| state.user(u)).map(|a| a.avatar_ref.clone()),
                    owner_user_id: owner,
                }
            })
            .collect();
        Ok(Json(rows))
    })
}

async fn snapshot(State(app): State<AppState>, Query(params): Params) -> Result<Response, ApiError> {
    let bbox = parse_bbox(&params)?;
    let bytes = app.read(|store| Ok(store.export_snapshot(bbox.as_ref())?))?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}
