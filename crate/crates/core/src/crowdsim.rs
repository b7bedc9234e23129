//! Deterministic synthetic crowd for exercising the reward and ownership
//! machinery end to end.
//!
//! Every random draw comes from a ChaCha8 generator seeded with the scenario
//! seed. Stream 0 places the APs; stream `1 + u` drives user `u`, drawing in
//! a fixed order: a shuffled AP preference list, one Poisson review count per
//! day, then for each review its time of day, Zipf-ranked AP pick, rating and
//! metrics.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, Zipf};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{register_user, submit_review, ApDraft, ReviewSubmission};
use crate::model::{Bbox, GeoPoint, NetMetrics, PlaceTag, Review, Timestamp, UserAccount};
use crate::reward::{LeaderboardEntry, RewardConfig, RuleCase};
use crate::store::AdvisoryStore;

/// Registration time of every simulated user; reviews start one second later.
pub const SIM_EPOCH: Timestamp = 1_700_000_000;
pub const SECS_PER_DAY: Timestamp = 86_400;
pub const ZIPF_EXPONENT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub n_users: u32,
    pub n_aps: u32,
    pub duration_days: u32,
    /// Mean of the per-user, per-day Poisson review count.
    pub reviews_per_user_per_day: f64,
    /// APs are placed uniformly inside this box.
    pub geography: Bbox,
}

impl Scenario {
    /// Singapore-sized default geography.
    pub fn new(seed: u64, n_users: u32, n_aps: u32, duration_days: u32) -> Self {
        Self {
            seed,
            n_users,
            n_aps,
            duration_days,
            reviews_per_user_per_day: 3.0,
            geography: Bbox {
                min_lat: 1.22,
                min_lon: 103.6,
                max_lat: 1.47,
                max_lon: 104.05,
            },
        }
    }

    /// A scenario with no users is allowed and yields an empty stream.
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_aps == 0 {
            return Err(SimError::InvalidScenario("n_aps must be positive".into()));
        }
        if self.duration_days == 0 {
            return Err(SimError::InvalidScenario("duration_days must be positive".into()));
        }
        if !(self.reviews_per_user_per_day.is_finite() && self.reviews_per_user_per_day >= 0.0) {
            return Err(SimError::InvalidScenario(
                "reviews_per_user_per_day must be finite and non-negative".into(),
            ));
        }
        self.geography
            .validate()
            .map_err(|e| SimError::InvalidScenario(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum SimEvent {
    Register(UserAccount),
    Review(ReviewSubmission),
}

/// Generator for one stream of a scenario.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn sim_user_id(u: u32) -> String {
    format!("user-{u:04}")
}

/// Locally administered MAC derived from the AP index.
pub fn sim_bssid(i: u32) -> String {
    let b = i.to_be_bytes();
    format!("02:00:{:02x}:{:02x}:{:02x}:{:02x}", b[0], b[1], b[2], b[3])
}

fn sim_ap(i: u32, location: GeoPoint) -> (String, ApDraft) {
    (
        sim_bssid(i),
        ApDraft {
            ssid: format!("sim-ap-{i:04}"),
            location,
            place: Some(PlaceTag {
                street_address: format!("{} Simulation Road", i + 1),
                floor: None,
                room: None,
            }),
        },
    )
}

fn random_metrics(rng: &mut ChaCha8Rng) -> NetMetrics {
    NetMetrics {
        rssi_dbm: rng.random_range(-90..=-30),
        link_speed_mbps: f64::from(rng.random_range(1u32..=866)),
        upload_mbps: f64::from(rng.random_range(0u32..=500)) / 10.0,
        download_mbps: f64::from(rng.random_range(0u32..=2000)) / 10.0,
    }
}

fn registration(u: u32) -> UserAccount {
    let user_id = sim_user_id(u);
    UserAccount {
        display_name: format!("User {u}"),
        avatar_ref: format!("avatars/{user_id}.png"),
        user_id,
        registered_at: SIM_EPOCH,
    }
}

/// The full, time-ordered event stream of a scenario.
pub fn generate_events(scenario: &Scenario) -> Result<Vec<SimEvent>, SimError> {
    scenario.validate()?;
    if scenario.n_users == 0 {
        return Ok(Vec::new());
    }
    let g = &scenario.geography;
    let mut geo = stream_rng(scenario.seed, 0);
    let aps: Vec<(String, ApDraft)> = (0..scenario.n_aps)
        .map(|i| {
            let lat = geo.random_range(g.min_lat..=g.max_lat);
            let lon = geo.random_range(g.min_lon..=g.max_lon);
            sim_ap(i, GeoPoint { lat, lon })
        })
        .collect();

    let zipf = Zipf::new(f64::from(scenario.n_aps), ZIPF_EXPONENT).expect("n_aps >= 1, exponent > 0");
    let poisson = (scenario.reviews_per_user_per_day > 0.0)
        .then(|| Poisson::new(scenario.reviews_per_user_per_day).expect("positive finite rate"));

    let mut reviews: Vec<Review> = Vec::new();
    let mut draft_of: BTreeMap<String, ApDraft> = BTreeMap::new();
    for u in 0..scenario.n_users {
        let user_id = sim_user_id(u);
        let mut rng = stream_rng(scenario.seed, 1 + u64::from(u));
        let mut preference: Vec<u32> = (0..scenario.n_aps).collect();
        preference.shuffle(&mut rng);
        let daily: Vec<u64> = (0..scenario.duration_days)
            .map(|_| poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as u64))
            .collect();
        let mut k = 0u64;
        for (day, count) in daily.into_iter().enumerate() {
            for _ in 0..count {
                let at = SIM_EPOCH + 1 + day as Timestamp * SECS_PER_DAY + rng.random_range(0..SECS_PER_DAY);
                let rank = zipf.sample(&mut rng) as usize;
                let ap_index = preference[rank.clamp(1, preference.len()) - 1];
                let rating = rng.random_range(1..=5);
                let metrics = rng.random_bool(0.8).then(|| random_metrics(&mut rng));
                let (ap_id, draft) = &aps[ap_index as usize];
                draft_of.entry(ap_id.clone()).or_insert_with(|| draft.clone());
                reviews.push(Review {
                    review_id: format!("sim-{}-{user_id}-{k}", scenario.seed),
                    user_id: user_id.clone(),
                    ap_id: ap_id.clone(),
                    at,
                    rating,
                    comment: None,
                    metrics,
                    place: None,
                });
                k += 1;
            }
        }
    }
    reviews.sort_by(|a, b| (a.at, &a.user_id, &a.ap_id).cmp(&(b.at, &b.user_id, &b.ap_id)));
    reviews.dedup_by(|b, a| a.at == b.at && a.user_id == b.user_id && a.ap_id == b.ap_id);

    let mut events: Vec<SimEvent> = (0..scenario.n_users).map(|u| SimEvent::Register(registration(u))).collect();
    events.extend(reviews.into_iter().map(|review| {
        let new_ap = draft_of.get(&review.ap_id).cloned();
        SimEvent::Review(ReviewSubmission { review, new_ap })
    }));
    Ok(events)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CaseTally {
    pub count: u64,
    pub points: u64,
}

/// One change of an AP's owner, keyed by position in the event stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OwnershipChange {
    pub event_index: usize,
    pub at: Timestamp,
    pub ap_id: String,
    pub from: Option<String>,
    pub to: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub events: usize,
    pub rejected: usize,
    pub users: usize,
    pub aps: usize,
    pub leaderboard: Vec<LeaderboardEntry>,
    /// Hand-overs between two users, per AP; first claims are not counted.
    pub ownership_changes: BTreeMap<String, u64>,
    /// Every owner change including first claims, in stream order.
    pub ownership_history: Vec<OwnershipChange>,
    /// Review outcomes by rule case (registrations excluded).
    pub reward_histogram: BTreeMap<RuleCase, CaseTally>,
}

impl SimReport {
    pub fn awarded_points(&self) -> u64 {
        self.reward_histogram.values().map(|t| t.points).sum()
    }
}

/// Feeds `events` through registration and review submission on `store`.
/// Events the pipeline refuses are counted, not fatal.
pub fn run_events(store: &mut AdvisoryStore, events: &[SimEvent]) -> SimReport {
    let mut histogram: BTreeMap<RuleCase, CaseTally> = [
        RuleCase::FirstReview,
        RuleCase::SpacedReview,
        RuleCase::SuppressedReview,
    ]
    .into_iter()
    .map(|c| (c, CaseTally::default()))
    .collect();
    let mut owners: BTreeMap<String, String> = BTreeMap::new();
    let mut history = Vec::new();
    let mut changes: BTreeMap<String, u64> = BTreeMap::new();
    let mut rejected = 0;

    for (index, event) in events.iter().enumerate() {
        match event {
            SimEvent::Register(account) => {
                if register_user(store, account.clone()).is_err() {
                    rejected += 1;
                }
            }
            SimEvent::Review(submission) => {
                let Ok(reward) = submit_review(store, submission.clone()) else {
                    rejected += 1;
                    continue;
                };
                let tally = histogram.entry(reward.rule_case).or_default();
                tally.count += 1;
                tally.points += reward.points;

                let ap_id = reward.ap_id.clone().expect("review reward names its AP");
                changes.entry(ap_id.clone()).or_insert(0);
                let now = store.state().ledger().owner_of(&ap_id);
                let before = owners.get(&ap_id).cloned();
                if now != before {
                    if before.is_some() {
                        *changes.get_mut(&ap_id).expect("inserted above") += 1;
                    }
                    history.push(OwnershipChange {
                        event_index: index,
                        at: reward.at,
                        ap_id: ap_id.clone(),
                        from: before,
                        to: now.clone(),
                    });
                    match now {
                        Some(owner) => owners.insert(ap_id, owner),
                        None => owners.remove(&ap_id),
                    };
                }
            }
        }
    }

    let state = store.state();
    SimReport {
        events: events.len(),
        rejected,
        users: state.ledger().user_count(),
        aps: state.ap_count(),
        leaderboard: state.ledger().leaderboard(usize::MAX),
        ownership_changes: changes,
        ownership_history: history,
        reward_histogram: histogram,
    }
}

/// Generates the scenario's stream and runs it on a fresh in-memory store.
pub fn run_simulation(scenario: &Scenario, config: RewardConfig) -> Result<SimReport, SimError> {
    let events = generate_events(scenario)?;
    let mut store = AdvisoryStore::in_memory(config);
    Ok(run_events(&mut store, &events))
}

pub const HOUR: Timestamp = 3_600;

/// Index in [`overtaking_script`] of the review that hands the AP to the
/// challenger.
pub const OVERTAKING_FLIP_INDEX: usize = 16;
/// Suppressed reviews in [`overtaking_script`] (the incumbent's burst).
pub const OVERTAKING_SUPPRESSED: u64 = 4;

/// A scripted two-user contest over one AP.
///
/// `user-0000` reviews every 14 h from hour 0 to hour 70 and bursts four
/// extra reviews within 40 minutes of its hour-14 review. `user-0001`
/// starts at hour 29 and reviews every 7 h until hour 71. The seed only
/// picks the AP location, ratings and metrics.
///
/// With the default rewards the challenger ties the incumbent at hour 50
/// and hour 57 (losing on earlier attainment) and passes it at hour 64.
pub fn overtaking_script(seed: u64) -> Vec<SimEvent> {
    let mut rng = stream_rng(seed, 0);
    let geo = Scenario::new(seed, 2, 1, 1).geography;
    let location = GeoPoint {
        lat: rng.random_range(geo.min_lat..=geo.max_lat),
        lon: rng.random_range(geo.min_lon..=geo.max_lon),
    };
    let (ap_id, draft) = sim_ap(0, location);
    let start = SIM_EPOCH + HOUR;

    let mut times: Vec<(u32, Timestamp)> = Vec::new();
    for k in 0..6 {
        times.push((0, start + 14 * HOUR * k));
    }
    for m in 1..=4 {
        times.push((0, start + 14 * HOUR + 10 * 60 * m));
    }
    for k in 0..7 {
        times.push((1, start + 29 * HOUR + 7 * HOUR * k));
    }
    times.sort_by_key(|&(u, t)| (t, u));

    let mut events = vec![SimEvent::Register(registration(0)), SimEvent::Register(registration(1))];
    for (k, (u, at)) in times.into_iter().enumerate() {
        let metrics = random_metrics(&mut rng);
        events.push(SimEvent::Review(ReviewSubmission {
            review: Review {
                review_id: format!("script-{seed}-{k}"),
                user_id: sim_user_id(u),
                ap_id: ap_id.clone(),
                at,
                rating: rng.random_range(1..=5),
                comment: None,
                metrics: Some(metrics),
                place: None,
            },
            new_ap: Some(draft.clone()),
        }));
    }
    events
}
