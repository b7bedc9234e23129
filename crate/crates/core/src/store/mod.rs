//! Event-sourced persistence and the materialized views derived from it.
//!
//! Every state change is an [`Event`] in one ordered log. [`AdvisoryState`]
//! is a pure fold over that log: live appends and [`replay`] run the same
//! transition function, so a replayed state is field-for-field identical to
//! the live one.

mod log;
pub mod snapshot;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{
    validate_access_point, validate_review, validate_user, AccessPoint, Bbox, ModelError, NetMetrics, Review,
    Timestamp, UserAccount, Violation,
};
use crate::reward::{ContributionLedger, RewardConfig, RewardError, RewardEvent};

pub use self::log::SyncPolicy;
pub use self::snapshot::{Snapshot, SnapshotError};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("validation failed: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    ValidationFailed(Vec<Violation>),
    #[error("event at {at} precedes the log head at {head}")]
    StaleTimestamp { at: Timestamp, head: Timestamp },
    #[error("user {0:?} is already registered")]
    DuplicateUser(String),
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("unknown access point {0:?}")]
    UnknownAp(String),
    #[error("duplicate review: {0}")]
    DuplicateReview(String),
    #[error(transparent)]
    Reward(RewardError),
    #[error("invalid bounding box: {0}")]
    InvalidBbox(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(&'static str),
    #[error("corrupt log at seq {seq}: {reason}")]
    CorruptLog { seq: u64, reason: String },
    #[error("storage failure: {0}")]
    StorageFailure(#[from] std::io::Error),
}

impl From<ModelError> for StoreError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::ValidationFailed(v) => StoreError::ValidationFailed(v),
            ModelError::InvalidBbox(m) => StoreError::InvalidBbox(m),
            other => StoreError::ValidationFailed(vec![Violation {
                field: "payload",
                reason: other.to_string(),
            }]),
        }
    }
}

impl From<RewardError> for StoreError {
    fn from(e: RewardError) -> Self {
        match e {
            RewardError::UnknownUser(u) => StoreError::UnknownUser(u),
            RewardError::DuplicateUser(u) => StoreError::DuplicateUser(u),
            other => StoreError::Reward(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventPayload {
    UserRegistered(UserAccount),
    ApUpserted(AccessPoint),
    ReviewSubmitted(Review),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    UserRegistered,
    ApUpserted,
    ReviewSubmitted,
}

impl EventPayload {
    pub fn kind(&self) -> EventKind {
        match self {
            EventPayload::UserRegistered(_) => EventKind::UserRegistered,
            EventPayload::ApUpserted(_) => EventKind::ApUpserted,
            EventPayload::ReviewSubmitted(_) => EventKind::ReviewSubmitted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub at: Timestamp,
    pub payload: EventPayload,
}

/// Per-AP quality view.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApSummary {
    pub ap: AccessPoint,
    pub review_count: u64,
    pub mean_rating: Option<f64>,
    pub latest_metrics: Option<NetMetrics>,
    pub latest_review_at: Option<Timestamp>,
    pub owner_user_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
struct ApStats {
    ap: AccessPoint,
    review_count: u64,
    rating_sum: u64,
    latest_metrics: Option<NetMetrics>,
    latest_review_at: Option<Timestamp>,
}

impl ApStats {
    fn mean_rating(&self) -> Option<f64> {
        (self.review_count > 0).then(|| self.rating_sum as f64 / self.review_count as f64)
    }
}

/// Outcome of one appended event.
#[derive(Debug, Clone, PartialEq)]
pub struct Appended {
    pub seq: u64,
    pub reward: Option<RewardEvent>,
}

/// Everything derived from the log: the contribution ledger, the user
/// registry and the per-AP views.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvisoryState {
    ledger: ContributionLedger,
    users: BTreeMap<String, UserAccount>,
    aps: BTreeMap<String, ApStats>,
    review_keys: BTreeSet<(String, String, Timestamp)>,
    review_ids: BTreeSet<String>,
    head_seq: u64,
    head_at: Timestamp,
}

impl AdvisoryState {
    pub fn new(config: RewardConfig) -> Self {
        Self {
            ledger: ContributionLedger::new(config),
            users: BTreeMap::new(),
            aps: BTreeMap::new(),
            review_keys: BTreeSet::new(),
            review_ids: BTreeSet::new(),
            head_seq: 0,
            head_at: 0,
        }
    }

    pub fn ledger(&self) -> &ContributionLedger {
        &self.ledger
    }

    pub fn head_seq(&self) -> u64 {
        self.head_seq
    }

    /// Timestamp of the newest event, 0 for an empty log.
    pub fn head_at(&self) -> Timestamp {
        self.head_at
    }

    pub fn user(&self, user_id: &str) -> Option<&UserAccount> {
        self.users.get(user_id)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserAccount> {
        self.users.values()
    }

    pub fn access_point(&self, ap_id: &str) -> Option<&AccessPoint> {
        self.aps.get(ap_id).map(|s| &s.ap)
    }

    /// All APs in ap_id order.
    pub fn access_points(&self) -> impl Iterator<Item = &AccessPoint> {
        self.aps.values().map(|s| &s.ap)
    }

    pub fn ap_count(&self) -> usize {
        self.aps.len()
    }

    pub fn summary(&self, ap_id: &str) -> Option<ApSummary> {
        self.aps.get(ap_id).map(|s| self.summarize(s))
    }

    fn summarize(&self, s: &ApStats) -> ApSummary {
        ApSummary {
            ap: s.ap.clone(),
            review_count: s.review_count,
            mean_rating: s.mean_rating(),
            latest_metrics: s.latest_metrics,
            latest_review_at: s.latest_review_at,
            owner_user_id: self.ledger.owner_of(&s.ap.ap_id),
        }
    }

    /// Summaries in ap_id order, optionally restricted to a box.
    pub fn summaries(&self, bbox: Option<&Bbox>) -> Vec<ApSummary> {
        self.aps
            .values()
            .filter(|s| bbox.is_none_or(|b| b.contains(&s.ap.location)))
            .map(|s| self.summarize(s))
            .collect()
    }

    pub fn query_region(&self, bbox: &Bbox, min_rating: Option<f64>) -> Result<Vec<ApSummary>, StoreError> {
        bbox.validate()?;
        Ok(rank_region(self.summaries(Some(bbox)), bbox, min_rating))
    }

    fn check_at(&self, at: Timestamp) -> Result<(), StoreError> {
        if at < self.head_at {
            return Err(StoreError::StaleTimestamp { at, head: self.head_at });
        }
        Ok(())
    }

    fn check_review(&self, review: &Review, ap_staged: bool) -> Result<(), StoreError> {
        let review = validate_review(review.clone())?;
        if !ap_staged && !self.aps.contains_key(&review.ap_id) {
            return Err(StoreError::UnknownAp(review.ap_id));
        }
        if self.review_ids.contains(&review.review_id) {
            return Err(StoreError::DuplicateReview(format!("review_id {:?} already used", review.review_id)));
        }
        let key = (review.user_id.clone(), review.ap_id.clone(), review.at);
        if self.review_keys.contains(&key) {
            return Err(StoreError::DuplicateReview(format!(
                "{:?} already reviewed {:?} at {}",
                key.0, key.1, key.2
            )));
        }
        self.ledger.preview_reward(&review)?;
        Ok(())
    }

    /// Checks `payload` against the current state without changing it.
    fn prepare(&self, at: Timestamp, payload: &EventPayload, ap_staged: bool) -> Result<(), StoreError> {
        self.check_at(at)?;
        let mismatch = |field: &'static str| {
            StoreError::ValidationFailed(vec![Violation {
                field,
                reason: "must equal the event timestamp".into(),
            }])
        };
        match payload {
            EventPayload::UserRegistered(user) => {
                validate_user(user)?;
                if user.registered_at != at {
                    return Err(mismatch("registered_at"));
                }
                if self.users.contains_key(&user.user_id) {
                    return Err(StoreError::DuplicateUser(user.user_id.clone()));
                }
            }
            EventPayload::ApUpserted(ap) => validate_access_point(ap)?,
            EventPayload::ReviewSubmitted(review) => {
                if review.at != at {
                    return Err(mismatch("at"));
                }
                self.check_review(review, ap_staged)?;
            }
        }
        Ok(())
    }

    /// Applies an event that already passed [`Self::prepare`].
    fn commit(&mut self, event: &Event) -> Option<RewardEvent> {
        self.head_seq = event.seq;
        self.head_at = event.at;
        match &event.payload {
            EventPayload::UserRegistered(user) => {
                let reward = self
                    .ledger
                    .register_user(&user.user_id, user.registered_at)
                    .expect("prepared registration");
                self.users.insert(user.user_id.clone(), user.clone());
                Some(reward)
            }
            EventPayload::ApUpserted(ap) => {
                self.aps
                    .entry(ap.ap_id.clone())
                    .and_modify(|s| s.ap = ap.clone())
                    .or_insert_with(|| ApStats {
                        ap: ap.clone(),
                        review_count: 0,
                        rating_sum: 0,
                        latest_metrics: None,
                        latest_review_at: None,
                    });
                None
            }
            EventPayload::ReviewSubmitted(review) => {
                let reward = self.ledger.evaluate_reward(review).expect("prepared review");
                let stats = self.aps.get_mut(&review.ap_id).expect("prepared review AP");
                stats.review_count += 1;
                stats.rating_sum += review.rating as u64;
                stats.latest_review_at = Some(stats.latest_review_at.map_or(review.at, |t| t.max(review.at)));
                if review.metrics.is_some() {
                    stats.latest_metrics = review.metrics;
                }
                self.review_keys
                    .insert((review.user_id.clone(), review.ap_id.clone(), review.at));
                self.review_ids.insert(review.review_id.clone());
                Some(reward)
            }
        }
    }

    fn apply(&mut self, event: &Event) -> Result<Option<RewardEvent>, StoreError> {
        if event.seq != self.head_seq + 1 {
            return Err(StoreError::CorruptLog {
                seq: event.seq,
                reason: format!("expected seq {}", self.head_seq + 1),
            });
        }
        self.prepare(event.at, &event.payload, false)?;
        Ok(self.commit(event))
    }
}

/// Filters summaries to `bbox` and `min_rating`, best rated first; unrated
/// APs sort last and ties go by ap_id.
pub fn rank_region(entries: Vec<ApSummary>, bbox: &Bbox, min_rating: Option<f64>) -> Vec<ApSummary> {
    let mut hits: Vec<ApSummary> = entries
        .into_iter()
        .filter(|s| bbox.contains(&s.ap.location))
        .filter(|s| match min_rating {
            None => true,
            Some(min) => s.mean_rating.is_some_and(|m| m >= min),
        })
        .collect();
    hits.sort_by(|a, b| {
        let by_rating = match (a.mean_rating, b.mean_rating) {
            (Some(x), Some(y)) => y.total_cmp(&x),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        };
        by_rating.then_with(|| a.ap.ap_id.cmp(&b.ap.ap_id))
    });
    hits
}

/// Rebuilds state from a recorded log.
pub fn replay(config: RewardConfig, events: &[Event]) -> Result<AdvisoryState, StoreError> {
    let mut state = AdvisoryState::new(config);
    for event in events {
        state.apply(event).map_err(|e| match e {
            corrupt @ StoreError::CorruptLog { .. } => corrupt,
            other => StoreError::CorruptLog {
                seq: event.seq,
                reason: other.to_string(),
            },
        })?;
    }
    Ok(state)
}

/// Single-writer handle over the log and its derived state.
///
/// Callers needing concurrent readers wrap it in a lock; every method that
/// mutates takes `&mut self`.
#[derive(Debug)]
pub struct AdvisoryStore {
    state: AdvisoryState,
    events: Vec<Event>,
    file: Option<log::LogFile>,
}

impl AdvisoryStore {
    pub fn in_memory(config: RewardConfig) -> Self {
        Self {
            state: AdvisoryState::new(config),
            events: Vec::new(),
            file: None,
        }
    }

    /// Opens (or creates) a log file and replays it.
    pub fn open(path: impl AsRef<Path>, config: RewardConfig, sync: SyncPolicy) -> Result<Self, StoreError> {
        let (file, events) = log::LogFile::open(path.as_ref(), sync)?;
        let state = replay(config, &events)?;
        Ok(Self {
            state,
            events,
            file: Some(file),
        })
    }

    pub fn state(&self) -> &AdvisoryState {
        &self.state
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn config(&self) -> &RewardConfig {
        self.state.ledger.config()
    }

    pub fn append(&mut self, at: Timestamp, payload: EventPayload) -> Result<Appended, StoreError> {
        let mut out = self.append_batch(vec![(at, payload)])?;
        Ok(out.remove(0))
    }

    /// Appends several events as one unit: either all are written and
    /// applied, or none are.
    ///
    /// A batch may contain at most one review, as its last element; AP
    /// upserts earlier in the same batch count as known for that review.
    pub fn append_batch(&mut self, batch: Vec<(Timestamp, EventPayload)>) -> Result<Vec<Appended>, StoreError> {
        let reviews = batch
            .iter()
            .filter(|(_, p)| p.kind() == EventKind::ReviewSubmitted)
            .count();
        let review_last = batch
            .last()
            .is_some_and(|(_, p)| p.kind() == EventKind::ReviewSubmitted);
        if reviews > 1 || (reviews == 1 && !review_last) {
            return Err(StoreError::InvalidBatch("at most one review, placed last"));
        }
        let mut staged_aps = BTreeSet::new();
        let mut staged_users = BTreeSet::new();
        let mut head_at = self.state.head_at;
        for (at, payload) in &batch {
            if *at < head_at {
                return Err(StoreError::StaleTimestamp { at: *at, head: head_at });
            }
            head_at = *at;
            let ap_staged = match payload {
                EventPayload::ReviewSubmitted(r) => staged_aps.contains(r.ap_id.as_str()),
                _ => false,
            };
            self.state.prepare(*at, payload, ap_staged)?;
            match payload {
                EventPayload::ApUpserted(ap) => {
                    staged_aps.insert(ap.ap_id.as_str());
                }
                EventPayload::UserRegistered(u) => {
                    if !staged_users.insert(u.user_id.as_str()) {
                        return Err(StoreError::DuplicateUser(u.user_id.clone()));
                    }
                }
                EventPayload::ReviewSubmitted(_) => {}
            }
        }

        let first_seq = self.state.head_seq + 1;
        let events: Vec<Event> = batch
            .into_iter()
            .enumerate()
            .map(|(i, (at, payload))| Event {
                seq: first_seq + i as u64,
                at,
                payload,
            })
            .collect();
        if let Some(file) = &mut self.file {
            file.write(&events)?;
        }
        let mut out = Vec::with_capacity(events.len());
        for event in events {
            let reward = self.state.commit(&event);
            out.push(Appended { seq: event.seq, reward });
            self.events.push(event);
        }
        Ok(out)
    }

    pub fn set_sync_policy(&mut self, policy: SyncPolicy) {
        if let Some(file) = &mut self.file {
            file.set_policy(policy);
        }
    }

    pub fn sync_policy(&self) -> Option<SyncPolicy> {
        self.file.as_ref().map(|f| f.policy())
    }

    /// Flushes any appends not yet made durable.
    pub fn sync(&mut self) -> Result<(), StoreError> {
        if let Some(file) = &mut self.file {
            file.sync()?;
        }
        Ok(())
    }

    pub fn export_snapshot(&self, bbox: Option<&Bbox>) -> Result<Vec<u8>, StoreError> {
        if let Some(b) = bbox {
            b.validate()?;
        }
        Ok(Snapshot::from_state(&self.state, bbox.copied()).encode())
    }

    /// Hex SHA-256 over the log position, the full snapshot, the user
    /// registry and the leaderboard. Equal digests mean equal observable
    /// state.
    pub fn state_digest(&self) -> String {
        digest_state(&self.state)
    }
}

pub fn digest_state(state: &AdvisoryState) -> String {
    let mut h = Sha256::new();
    h.update(format!("seq {}\n", state.head_seq()));
    h.update(Snapshot::from_state(state, None).encode());
    for u in state.users() {
        h.update(format!("{}\t{}\t{}\t{}\n", u.user_id, u.display_name, u.avatar_ref, u.registered_at));
    }
    for e in state.ledger().leaderboard(usize::MAX) {
        h.update(format!("{}\t{}\n", e.user_id, e.total_points));
    }
    hex::encode(h.finalize())
}
