//! Data entry points: external hotspot CSV import, user registration and
//! the review submission pipeline (validate, score, append).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    canonicalize_bssid, validate_review, AccessPoint, ApSource, GeoPoint, PlaceTag, Review, Timestamp, UserAccount,
    EXTERNAL_ID_PREFIX,
};
use crate::reward::RewardEvent;
use crate::store::{AdvisoryStore, EventPayload, StoreError, SyncPolicy};

/// Required first line of an external dataset, byte for byte.
pub const EXTERNAL_CSV_HEADER: &str = "ssid,lat,lon,street_address,floor,room,operator";

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed header: expected {EXTERNAL_CSV_HEADER:?}, found {0:?}")]
    MalformedHeader(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// One row of the external dataset. `operator` is checked but not stored:
/// access points carry no operator field.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalHotspotRow {
    pub ssid: String,
    pub lat: f64,
    pub lon: f64,
    pub street_address: String,
    pub floor: Option<String>,
    pub room: Option<String>,
    pub operator: Option<String>,
}

impl ExternalHotspotRow {
    pub fn ap_id(&self) -> String {
        external_ap_id(&self.ssid, self.lat, self.lon)
    }

    pub fn to_access_point(&self) -> AccessPoint {
        AccessPoint {
            ap_id: self.ap_id(),
            bssid: None,
            ssid: self.ssid.clone(),
            location: GeoPoint {
                lat: self.lat,
                lon: self.lon,
            },
            place: Some(PlaceTag {
                street_address: self.street_address.clone(),
                floor: self.floor.clone(),
                room: self.room.clone(),
            }),
            source: ApSource::External,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportReport {
    /// Rows that created or changed an AP.
    pub imported: usize,
    pub errors: Vec<RowError>,
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET_BASIS, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// `ext:` + 16 hex digits of FNV-1a over `ssid|lat|lon`, coordinates in
/// shortest round-trip form, so `1.30` and `1.3` name the same AP.
pub fn external_ap_id(ssid: &str, lat: f64, lon: f64) -> String {
    let key = format!("{ssid}|{lat}|{lon}");
    format!("{EXTERNAL_ID_PREFIX}{:016x}", fnv1a64(key.as_bytes()))
}

fn parse_row(record: &csv::StringRecord) -> Result<ExternalHotspotRow, String> {
    if record.len() != 7 {
        return Err(format!("expected 7 fields, found {}", record.len()));
    }
    let mut reasons = Vec::new();
    let field = |i: usize| record.get(i).unwrap_or("").trim();
    let optional = |i: usize| Some(field(i).to_string()).filter(|s| !s.is_empty());

    let ssid = record.get(0).unwrap_or("").to_string();
    if ssid.is_empty() {
        reasons.push("ssid empty".to_string());
    }
    let coord = |i: usize, name: &str, valid: fn(f64) -> bool, reasons: &mut Vec<String>| match field(i).parse::<f64>() {
        Ok(v) if v.is_finite() && valid(v) => v,
        Ok(_) => {
            reasons.push(format!("{name} out of range"));
            0.0
        }
        Err(_) => {
            reasons.push(format!("{name} not a number"));
            0.0
        }
    };
    let lat = coord(1, "lat", GeoPoint::lat_valid, &mut reasons);
    let lon = coord(2, "lon", GeoPoint::lon_valid, &mut reasons);
    let street_address = field(3).to_string();
    if street_address.is_empty() {
        reasons.push("street_address empty".to_string());
    }
    if !reasons.is_empty() {
        return Err(reasons.join("; "));
    }
    Ok(ExternalHotspotRow {
        ssid,
        lat,
        lon,
        street_address,
        floor: optional(4),
        room: optional(5),
        operator: optional(6),
    })
}

/// Upserts every valid row as an external AP. Rows matching an existing AP
/// exactly change nothing, so re-importing a file is a no-op. Row problems
/// are reported, not raised; only a wrong header aborts.
///
/// All upserts are made durable with a single sync at the end.
pub fn import_external_csv(store: &mut AdvisoryStore, bytes: &[u8], at: Timestamp) -> Result<ImportReport, IngestError> {
    let first_line = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
    let first_line = first_line.strip_suffix(b"\r").unwrap_or(first_line);
    if first_line != EXTERNAL_CSV_HEADER.as_bytes() {
        return Err(IngestError::MalformedHeader(String::from_utf8_lossy(first_line).into_owned()));
    }

    let at = at.max(store.state().head_at());
    let previous_policy = store.sync_policy();
    store.set_sync_policy(SyncPolicy::Manual);
    let result = import_rows(store, bytes, at);
    if let Some(policy) = previous_policy {
        store.set_sync_policy(policy);
    }
    let report = result?;
    store.sync()?;
    Ok(report)
}

fn import_rows(store: &mut AdvisoryStore, bytes: &[u8], at: Timestamp) -> Result<ImportReport, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let mut report = ImportReport::default();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                report.errors.push(RowError {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        let row = match parse_row(&record) {
            Ok(row) => row,
            Err(reason) => {
                report.errors.push(RowError { line, reason });
                continue;
            }
        };
        let ap = row.to_access_point();
        if store.state().access_point(&ap.ap_id) == Some(&ap) {
            continue;
        }
        match store.append(at, EventPayload::ApUpserted(ap)) {
            Ok(_) => report.imported += 1,
            Err(StoreError::ValidationFailed(v)) => report.errors.push(RowError {
                line,
                reason: v.iter().map(|x| x.reason.clone()).collect::<Vec<_>>().join("; "),
            }),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(report)
}

/// AP details a review may carry so its first reviewer can put an unseen
/// BSSID on the map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApDraft {
    pub ssid: String,
    pub location: GeoPoint,
    pub place: Option<PlaceTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSubmission {
    pub review: Review,
    pub new_ap: Option<ApDraft>,
}

impl From<Review> for ReviewSubmission {
    fn from(review: Review) -> Self {
        Self { review, new_ap: None }
    }
}

pub fn register_user(store: &mut AdvisoryStore, account: UserAccount) -> Result<RewardEvent, StoreError> {
    let at = account.registered_at;
    let appended = store.append(at, EventPayload::UserRegistered(account))?;
    Ok(appended.reward.expect("registration yields a reward event"))
}

/// Validates, scores and records a review as one unit; on any error the
/// store is unchanged.
pub fn submit_review(store: &mut AdvisoryStore, submission: ReviewSubmission) -> Result<RewardEvent, StoreError> {
    let mut review = validate_review(submission.review)?;
    if let Ok(bssid) = canonicalize_bssid(&review.ap_id) {
        review.ap_id = bssid;
    }
    if !store.state().ledger().is_registered(&review.user_id) {
        return Err(StoreError::UnknownUser(review.user_id));
    }
    let at = review.at;
    let appended = if store.state().access_point(&review.ap_id).is_some() {
        vec![store.append(at, EventPayload::ReviewSubmitted(review))?]
    } else {
        let Some(draft) = submission.new_ap else {
            return Err(StoreError::UnknownAp(review.ap_id));
        };
        let ap = match AccessPoint::crowdsensed(&review.ap_id, draft.ssid, draft.location, draft.place) {
            Ok(ap) => ap,
            Err(crate::model::ModelError::MalformedBssid(_)) => return Err(StoreError::UnknownAp(review.ap_id)),
            Err(e) => return Err(e.into()),
        };
        store.append_batch(vec![
            (at, EventPayload::ApUpserted(ap)),
            (at, EventPayload::ReviewSubmitted(review)),
        ])?
    };
    Ok(appended
        .last()
        .and_then(|a| a.reward.clone())
        .expect("review yields a reward event"))
}
