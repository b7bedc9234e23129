//! Offline-search snapshot format.
//!
//! UTF-8, one record per line, every line terminated by `\n`:
//!
//! ```text
//! wifiscout-snapshot v1 <generated_at> <min_lat,min_lon,max_lat,max_lon | all>
//! <ap_id>\t<ssid>\t<lat>\t<lon>\t<street_address>\t<floor>\t<room>\t<review_count>\t<mean_rating>\t
//!     <rssi_dbm>\t<link_speed_mbps>\t<upload_mbps>\t<download_mbps>\t<latest_review_at>\t<owner_user_id>
//! ```
//!
//! Records are sorted by ap_id. Absent values are empty fields. Floats use
//! the shortest decimal that round-trips. Inside text fields `\`, tab, LF and
//! CR are written as `\\`, `\t`, `\n` and `\r`.
//!
//! Crowdsensed APs are keyed by BSSID and external ones by an `ext:` id, so
//! the BSSID and source are recovered from the ap_id on import.

use std::fmt::Write as _;

use thiserror::Error;

use super::{rank_region, AdvisoryState, ApSummary};
use crate::model::{
    canonicalize_bssid, AccessPoint, ApSource, Bbox, GeoPoint, NetMetrics, PlaceTag, Timestamp, EXTERNAL_ID_PREFIX,
};

pub const MAGIC: &str = "wifiscout-snapshot";
pub const FORMAT_VERSION: u32 = 1;
const FIELDS: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SnapshotError {
    #[error("unsupported snapshot version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed snapshot at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub format_version: u32,
    pub generated_at: Timestamp,
    pub bbox: Option<Bbox>,
    pub entries: Vec<ApSummary>,
}

impl Snapshot {
    /// Captures the state's summaries; `generated_at` is the log head so the
    /// bytes depend only on state.
    pub fn from_state(state: &AdvisoryState, bbox: Option<Bbox>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            generated_at: state.head_at(),
            bbox,
            entries: state.summaries(bbox.as_ref()),
        }
    }

    /// Same contract as [`AdvisoryState::query_region`], answered offline.
    pub fn query_region(&self, bbox: &Bbox, min_rating: Option<f64>) -> Vec<ApSummary> {
        rank_region(self.entries.clone(), bbox, min_rating)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = String::new();
        let scope = self.bbox.map_or_else(|| "all".to_string(), |b| b.to_string());
        let _ = writeln!(out, "{MAGIC} v{} {} {scope}", self.format_version, self.generated_at);
        for e in &self.entries {
            let place = e.ap.place.as_ref();
            let metrics = e.latest_metrics.as_ref();
            let fields: [String; FIELDS] = [
                escape(&e.ap.ap_id),
                escape(&e.ap.ssid),
                e.ap.location.lat.to_string(),
                e.ap.location.lon.to_string(),
                place.map(|p| escape(&p.street_address)).unwrap_or_default(),
                place.and_then(|p| p.floor.as_deref()).map(escape).unwrap_or_default(),
                place.and_then(|p| p.room.as_deref()).map(escape).unwrap_or_default(),
                e.review_count.to_string(),
                opt(e.mean_rating),
                opt(metrics.map(|m| m.rssi_dbm)),
                opt(metrics.map(|m| m.link_speed_mbps)),
                opt(metrics.map(|m| m.upload_mbps)),
                opt(metrics.map(|m| m.download_mbps)),
                opt(e.latest_review_at),
                e.owner_user_id.as_deref().map(escape).unwrap_or_default(),
            ];
            out.push_str(&fields.join("\t"));
            out.push('\n');
        }
        out.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let text = std::str::from_utf8(bytes).map_err(|e| SnapshotError::Malformed {
            offset: e.valid_up_to(),
            reason: "invalid UTF-8".into(),
        })?;
        if !text.ends_with('\n') {
            return Err(malformed(text.len(), "missing final newline (truncated?)"));
        }
        let mut lines = Vec::new();
        let mut offset = 0;
        for line in text[..text.len() - 1].split('\n') {
            lines.push((offset, line));
            offset += line.len() + 1;
        }
        let (_, header) = lines[0];
        let (format_version, generated_at, bbox) = parse_header(header)?;

        let mut entries: Vec<ApSummary> = Vec::with_capacity(lines.len() - 1);
        for &(line_offset, line) in &lines[1..] {
            let entry = parse_record(line_offset, line)?;
            if let Some(prev) = entries.last() {
                if prev.ap.ap_id >= entry.ap.ap_id {
                    return Err(malformed(line_offset, "records not strictly ascending by ap_id"));
                }
            }
            entries.push(entry);
        }
        Ok(Self {
            format_version,
            generated_at,
            bbox,
            entries,
        })
    }
}

fn malformed(offset: usize, reason: impl Into<String>) -> SnapshotError {
    SnapshotError::Malformed {
        offset,
        reason: reason.into(),
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str, offset: usize) -> Result<String, SnapshotError> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.char_indices();
    while let Some((i, c)) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some((_, '\\')) => out.push('\\'),
            Some((_, 't')) => out.push('\t'),
            Some((_, 'n')) => out.push('\n'),
            Some((_, 'r')) => out.push('\r'),
            _ => return Err(malformed(offset + i, "invalid escape sequence")),
        }
    }
    Ok(out)
}

fn parse_header(line: &str) -> Result<(u32, Timestamp, Option<Bbox>), SnapshotError> {
    let tokens: Vec<&str> = line.split(' ').collect();
    if tokens.first() != Some(&MAGIC) {
        return Err(malformed(0, "missing snapshot header"));
    }
    let version = tokens
        .get(1)
        .and_then(|t| t.strip_prefix('v'))
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| malformed(MAGIC.len() + 1, "bad version token"))?;
    if version != FORMAT_VERSION {
        return Err(SnapshotError::UnsupportedVersion(version));
    }
    if tokens.len() != 4 {
        return Err(malformed(0, format!("header has {} tokens, expected 4", tokens.len())));
    }
    let at_offset = tokens[0].len() + tokens[1].len() + 2;
    let generated_at = tokens[2]
        .parse::<Timestamp>()
        .map_err(|_| malformed(at_offset, "bad generated_at"))?;
    let bbox_offset = at_offset + tokens[2].len() + 1;
    let bbox = match tokens[3] {
        "all" => None,
        b => Some(
            b.parse::<Bbox>()
                .map_err(|e| malformed(bbox_offset, e.to_string()))?,
        ),
    };
    Ok((version, generated_at, bbox))
}

fn parse_record(line_offset: usize, line: &str) -> Result<ApSummary, SnapshotError> {
    let raw: Vec<&str> = line.split('\t').collect();
    if raw.len() != FIELDS {
        return Err(malformed(
            line_offset,
            format!("record has {} fields, expected {FIELDS}", raw.len()),
        ));
    }
    let mut offsets = [0usize; FIELDS];
    let mut o = line_offset;
    for (slot, f) in offsets.iter_mut().zip(&raw) {
        *slot = o;
        o += f.len() + 1;
    }
    let text = |i: usize| unescape(raw[i], offsets[i]);
    let opt_text = |i: usize| -> Result<Option<String>, SnapshotError> {
        Ok(Some(text(i)?).filter(|s| !s.is_empty()))
    };
    fn num<T: std::str::FromStr>(raw: &str, offset: usize, name: &str) -> Result<T, SnapshotError> {
        raw.parse()
            .map_err(|_| malformed(offset, format!("{name}: {raw:?} is not a valid number")))
    }
    let opt_num = |i: usize, name: &str| -> Result<Option<f64>, SnapshotError> {
        if raw[i].is_empty() {
            return Ok(None);
        }
        let v: f64 = num(raw[i], offsets[i], name)?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(malformed(offsets[i], format!("{name} must be finite and non-negative")));
        }
        Ok(Some(v))
    };

    let ap_id = text(0)?;
    let ssid = text(1)?;
    if ap_id.is_empty() || ssid.is_empty() {
        return Err(malformed(offsets[0], "ap_id and ssid are required"));
    }
    let lat: f64 = num(raw[2], offsets[2], "lat")?;
    let lon: f64 = num(raw[3], offsets[3], "lon")?;
    let location = GeoPoint::new(lat, lon).map_err(|e| malformed(offsets[2], e.to_string()))?;

    let street = text(4)?;
    let (floor, room) = (opt_text(5)?, opt_text(6)?);
    let place = if street.is_empty() {
        if floor.is_some() || room.is_some() {
            return Err(malformed(offsets[5], "floor/room without street_address"));
        }
        None
    } else {
        Some(PlaceTag {
            street_address: street,
            floor,
            room,
        })
    };

    let (bssid, source) = if ap_id.starts_with(EXTERNAL_ID_PREFIX) {
        (None, ApSource::External)
    } else {
        match canonicalize_bssid(&ap_id) {
            Ok(c) if c == ap_id => (Some(c), ApSource::Crowdsensed),
            _ => return Err(malformed(offsets[0], "ap_id is neither a canonical BSSID nor an ext: id")),
        }
    };

    let review_count: u64 = num(raw[7], offsets[7], "review_count")?;
    let mean_rating = opt_num(8, "mean_rating")?;
    if mean_rating.is_some() != (review_count > 0) {
        return Err(malformed(offsets[8], "mean_rating must be present iff review_count > 0"));
    }
    if mean_rating.is_some_and(|m| !(1.0..=5.0).contains(&m)) {
        return Err(malformed(offsets[8], "mean_rating outside [1, 5]"));
    }

    let rssi: Option<i32> = if raw[9].is_empty() {
        None
    } else {
        Some(num(raw[9], offsets[9], "rssi_dbm")?)
    };
    let speeds = [
        opt_num(10, "link_speed_mbps")?,
        opt_num(11, "upload_mbps")?,
        opt_num(12, "download_mbps")?,
    ];
    let latest_metrics = match (rssi, speeds) {
        (None, [None, None, None]) => None,
        (Some(rssi_dbm), [Some(link), Some(up), Some(down)]) => Some(NetMetrics {
            rssi_dbm,
            link_speed_mbps: link,
            upload_mbps: up,
            download_mbps: down,
        }),
        _ => return Err(malformed(offsets[9], "metrics must be all present or all absent")),
    };

    let latest_review_at: Option<Timestamp> = if raw[13].is_empty() {
        None
    } else {
        Some(num(raw[13], offsets[13], "latest_review_at")?)
    };
    let owner_user_id = opt_text(14)?;

    Ok(ApSummary {
        ap: AccessPoint {
            ap_id,
            bssid,
            ssid,
            location,
            place,
            source,
        },
        review_count,
        mean_rating,
        latest_metrics,
        latest_review_at,
        owner_user_id,
    })
}
