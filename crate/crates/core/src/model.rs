//! Canonical value types shared by every layer of the platform.
//!
//! Everything here is an immutable value once constructed; the validation
//! functions are pure and collect every violated invariant rather than
//! stopping at the first one, so clients get a complete error report.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// UTC seconds since the Unix epoch.
pub type Timestamp = i64;

pub const MAX_COMMENT_CHARS: usize = 1000;
pub const MIN_RSSI_DBM: i32 = -120;
pub const MAX_RSSI_DBM: i32 = 0;
pub const EXTERNAL_ID_PREFIX: &str = "ext:";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("malformed BSSID {0:?}: expected 6 octets of hex")]
    MalformedBssid(String),
    #[error("invalid coordinates lat={lat} lon={lon}")]
    InvalidGeoPoint { lat: f64, lon: f64 },
    #[error("invalid bounding box: {0}")]
    InvalidBbox(String),
    #[error("validation failed: {}", join_violations(.0))]
    ValidationFailed(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// One violated invariant: the offending field and a short reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: &'static str,
    pub reason: String,
}

impl Violation {
    fn new(field: &'static str, reason: impl Into<String>) -> Self {
        Self {
            field,
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

/// A WGS84 position in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, ModelError> {
        let p = Self { lat, lon };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(ModelError::InvalidGeoPoint { lat, lon })
        }
    }

    pub fn lat_valid(lat: f64) -> bool {
        lat.is_finite() && (-90.0..=90.0).contains(&lat)
    }

    pub fn lon_valid(lon: f64) -> bool {
        lon.is_finite() && lon > -180.0 && lon <= 180.0
    }

    pub fn is_valid(&self) -> bool {
        Self::lat_valid(self.lat) && Self::lon_valid(self.lon)
    }
}

/// Axis-aligned lat/lon bounds, inclusive on every edge.
///
/// Wire form is `min_lat,min_lon,max_lat,max_lon`. Boxes that cross the
/// antimeridian are not representable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bbox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl Bbox {
    pub fn new(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Result<Self, ModelError> {
        let b = Self {
            min_lat,
            min_lon,
            max_lat,
            max_lon,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let coords = [self.min_lat, self.min_lon, self.max_lat, self.max_lon];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(ModelError::InvalidBbox("non-finite coordinate".into()));
        }
        if self.min_lat > self.max_lat {
            return Err(ModelError::InvalidBbox("min_lat > max_lat".into()));
        }
        if self.min_lon > self.max_lon {
            return Err(ModelError::InvalidBbox("min_lon > max_lon".into()));
        }
        if self.min_lat < -90.0 || self.max_lat > 90.0 {
            return Err(ModelError::InvalidBbox("latitude outside [-90, 90]".into()));
        }
        if self.min_lon < -180.0 || self.max_lon > 180.0 {
            return Err(ModelError::InvalidBbox("longitude outside [-180, 180]".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        p.lat >= self.min_lat && p.lat <= self.max_lat && p.lon >= self.min_lon && p.lon <= self.max_lon
    }

    /// The whole globe.
    pub fn world() -> Self {
        Self {
            min_lat: -90.0,
            min_lon: -180.0,
            max_lat: 90.0,
            max_lon: 180.0,
        }
    }
}

impl fmt::Display for Bbox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.min_lat, self.min_lon, self.max_lat, self.max_lon)
    }
}

impl FromStr for Bbox {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 4 {
            return Err(ModelError::InvalidBbox(format!(
                "expected min_lat,min_lon,max_lat,max_lon, got {} component(s)",
                parts.len()
            )));
        }
        let mut v = [0.0f64; 4];
        for (slot, part) in v.iter_mut().zip(&parts) {
            *slot = part
                .trim()
                .parse()
                .map_err(|_| ModelError::InvalidBbox(format!("{part:?} is not a number")))?;
        }
        Bbox::new(v[0], v[1], v[2], v[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApSource {
    Crowdsensed,
    External,
}

/// Human-meaningful location of an access point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaceTag {
    pub street_address: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room: Option<String>,
}

impl PlaceTag {
    fn check(&self, out: &mut Vec<Violation>) {
        if self.street_address.trim().is_empty() {
            out.push(Violation::new("place.street_address", "must not be empty"));
        }
        if self.floor.as_deref() == Some("") {
            out.push(Violation::new("place.floor", "must be absent rather than empty"));
        }
        if self.room.as_deref() == Some("") {
            out.push(Violation::new("place.room", "must be absent rather than empty"));
        }
    }
}

/// Client-reported connection quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetMetrics {
    pub rssi_dbm: i32,
    pub link_speed_mbps: f64,
    pub upload_mbps: f64,
    pub download_mbps: f64,
}

impl NetMetrics {
    fn check(&self, out: &mut Vec<Violation>) {
        if !(MIN_RSSI_DBM..=MAX_RSSI_DBM).contains(&self.rssi_dbm) {
            out.push(Violation::new(
                "metrics.rssi_dbm",
                format!("{} outside [{MIN_RSSI_DBM}, {MAX_RSSI_DBM}]", self.rssi_dbm),
            ));
        }
        for (field, v) in [
            ("metrics.link_speed_mbps", self.link_speed_mbps),
            ("metrics.upload_mbps", self.upload_mbps),
            ("metrics.download_mbps", self.download_mbps),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                out.push(Violation::new(field, "must be a finite non-negative number"));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessPoint {
    pub ap_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bssid: Option<String>,
    pub ssid: String,
    pub location: GeoPoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub place: Option<PlaceTag>,
    pub source: ApSource,
}

impl AccessPoint {
    /// Crowdsensed APs are always keyed by their canonical BSSID.
    pub fn crowdsensed(
        bssid: &str,
        ssid: impl Into<String>,
        location: GeoPoint,
        place: Option<PlaceTag>,
    ) -> Result<Self, ModelError> {
        let bssid = canonicalize_bssid(bssid)?;
        let ap = Self {
            ap_id: bssid.clone(),
            bssid: Some(bssid),
            ssid: ssid.into(),
            location,
            place,
            source: ApSource::Crowdsensed,
        };
        validate_access_point(&ap)?;
        Ok(ap)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAccount {
    pub user_id: String,
    pub display_name: String,
    pub avatar_ref: String,
    pub registered_at: Timestamp,
}

/// One user's experience report for one AP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub review_id: String,
    pub user_id: String,
    pub ap_id: String,
    pub at: Timestamp,
    pub rating: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<NetMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub place: Option<PlaceTag>,
}

/// Normalizes a BSSID to lowercase, colon-separated octets.
///
/// Accepts either 12 bare hex digits or six 2-digit groups separated by
/// `:` or `-`.
pub fn canonicalize_bssid(raw: &str) -> Result<String, ModelError> {
    let malformed = || ModelError::MalformedBssid(raw.to_string());
    let groups: Vec<&str> = raw.trim().split([':', '-']).collect();
    let digits: String = match groups.len() {
        1 if groups[0].len() == 12 => groups[0].to_string(),
        6 if groups.iter().all(|g| g.len() == 2) => groups.concat(),
        _ => return Err(malformed()),
    };
    if !digits.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(malformed());
    }
    let lower = digits.to_ascii_lowercase();
    let octets: Vec<&str> = (0..6).map(|i| &lower[2 * i..2 * i + 2]).collect();
    Ok(octets.join(":"))
}

/// Returns the review unchanged when every invariant holds, otherwise the
/// full list of violations.
///
/// Referential checks (user registered, AP known, uniqueness of
/// `(user_id, ap_id, at)`) need platform state and live in the store.
pub fn validate_review(candidate: Review) -> Result<Review, ModelError> {
    let mut out = Vec::new();
    if candidate.review_id.is_empty() {
        out.push(Violation::new("review_id", "must not be empty"));
    }
    if candidate.user_id.is_empty() {
        out.push(Violation::new("user_id", "must not be empty"));
    }
    if candidate.ap_id.is_empty() {
        out.push(Violation::new("ap_id", "must not be empty"));
    }
    if candidate.at <= 0 {
        out.push(Violation::new("at", "must be strictly positive"));
    }
    if !(1..=5).contains(&candidate.rating) {
        out.push(Violation::new(
            "rating",
            format!("{} out of range [1, 5]", candidate.rating),
        ));
    }
    if let Some(comment) = &candidate.comment {
        let n = comment.chars().count();
        if n > MAX_COMMENT_CHARS {
            out.push(Violation::new(
                "comment",
                format!("{n} characters exceeds {MAX_COMMENT_CHARS}"),
            ));
        }
    }
    if let Some(m) = &candidate.metrics {
        m.check(&mut out);
    }
    if let Some(p) = &candidate.place {
        p.check(&mut out);
    }
    if out.is_empty() {
        Ok(candidate)
    } else {
        Err(ModelError::ValidationFailed(out))
    }
}

pub fn validate_access_point(ap: &AccessPoint) -> Result<(), ModelError> {
    let mut out = Vec::new();
    if ap.ssid.is_empty() {
        out.push(Violation::new("ssid", "must not be empty"));
    }
    if !GeoPoint::lat_valid(ap.location.lat) {
        out.push(Violation::new("location.lat", "lat out of range"));
    }
    if !GeoPoint::lon_valid(ap.location.lon) {
        out.push(Violation::new("location.lon", "lon out of range"));
    }
    match (&ap.bssid, ap.source) {
        (Some(bssid), ApSource::Crowdsensed) => match canonicalize_bssid(bssid) {
            Ok(c) if c == *bssid && ap.ap_id == c => {}
            _ => out.push(Violation::new("ap_id", "must equal the canonical BSSID")),
        },
        (None, ApSource::External) => {
            if !ap.ap_id.starts_with(EXTERNAL_ID_PREFIX) || ap.ap_id.len() == EXTERNAL_ID_PREFIX.len() {
                out.push(Violation::new("ap_id", "external ids must carry the \"ext:\" prefix"));
            }
        }
        (Some(_), ApSource::External) => {
            out.push(Violation::new("bssid", "external APs carry no BSSID"));
        }
        (None, ApSource::Crowdsensed) => {
            out.push(Violation::new("bssid", "crowdsensed APs require a BSSID"));
        }
    }
    if let Some(p) = &ap.place {
        p.check(&mut out);
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(ModelError::ValidationFailed(out))
    }
}

pub fn validate_user(user: &UserAccount) -> Result<(), ModelError> {
    let mut out = Vec::new();
    if user.user_id.is_empty() {
        out.push(Violation::new("user_id", "must not be empty"));
    }
    if user.display_name.trim().is_empty() {
        out.push(Violation::new("display_name", "must not be empty"));
    }
    if user.registered_at < 0 {
        out.push(Violation::new("registered_at", "must not be negative"));
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(ModelError::ValidationFailed(out))
    }
}
