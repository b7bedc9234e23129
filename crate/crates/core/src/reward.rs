//! Contribution rewards and AP ownership.
//!
//! A user joins with `starting_points`. Each review of an AP earns the full
//! reward the first time that user reviews that AP, half the full reward when
//! at least `interval_threshold_secs` have passed since the same user's
//! previous review of the same AP, and nothing otherwise. The previous review
//! counts even if it earned nothing, so rapid-fire reviews keep resetting the
//! clock.
//!
//! An AP is owned by the user with the highest accumulated points earned from
//! reviewing it. Ties go to whoever reached that score first, then to the
//! lexicographically smaller user id.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Review, Timestamp};

pub const DEFAULT_STARTING_POINTS: u64 = 0;
pub const DEFAULT_FULL_REWARD: u64 = 10;
/// Six hours.
pub const DEFAULT_INTERVAL_THRESHOLD_SECS: i64 = 6 * 60 * 60;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewardError {
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
    #[error("user {0:?} is already registered")]
    DuplicateUser(String),
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("review at {at} by {user_id:?} for {ap_id:?} precedes their previous review at {previous}")]
    NonMonotonicTimestamp {
        user_id: String,
        ap_id: String,
        at: Timestamp,
        previous: Timestamp,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub starting_points: u64,
    pub full_reward: u64,
    pub interval_threshold_secs: i64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            starting_points: DEFAULT_STARTING_POINTS,
            full_reward: DEFAULT_FULL_REWARD,
            interval_threshold_secs: DEFAULT_INTERVAL_THRESHOLD_SECS,
        }
    }
}

impl RewardConfig {
    /// Checks the deployment invariants: the full reward is a positive even
    /// number and the interval threshold is positive.
    ///
    /// The engine itself tolerates a zero threshold, which degenerates to
    /// "every repeat review earns half".
    pub fn validate(&self) -> Result<(), RewardError> {
        if self.full_reward == 0 || !self.full_reward.is_multiple_of(2) {
            return Err(RewardError::InvalidConfig(format!(
                "full_reward must be a positive even integer, got {}",
                self.full_reward
            )));
        }
        if self.interval_threshold_secs <= 0 {
            return Err(RewardError::InvalidConfig(format!(
                "interval_threshold_secs must be positive, got {}",
                self.interval_threshold_secs
            )));
        }
        Ok(())
    }

    pub fn half_reward(&self) -> u64 {
        self.full_reward / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleCase {
    Registration,
    FirstReview,
    SpacedReview,
    SuppressedReview,
}

impl RuleCase {
    pub fn as_str(&self) -> &'static str {
        match self {
            RuleCase::Registration => "registration",
            RuleCase::FirstReview => "first_review",
            RuleCase::SpacedReview => "spaced_review",
            RuleCase::SuppressedReview => "suppressed_review",
        }
    }
}

/// Points outcome of one ledger action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardEvent {
    pub event_id: String,
    pub user_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ap_id: Option<String>,
    pub at: Timestamp,
    pub points: u64,
    pub rule_case: RuleCase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Standing {
    total_points: u64,
    registered_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PairState {
    last_review_at: Timestamp,
    ap_score: u64,
    score_attained_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LeaderboardEntry {
    pub user_id: String,
    pub total_points: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct OwnershipBoard {
    pub owner: BTreeMap<String, Option<String>>,
}

/// Per-user totals and per-(user, AP) review history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContributionLedger {
    config: RewardConfig,
    users: BTreeMap<String, Standing>,
    // Keyed (ap_id, user_id) so one AP's contributors are a contiguous range.
    pairs: BTreeMap<(String, String), PairState>,
    issued: u64,
}

impl ContributionLedger {
    pub fn new(config: RewardConfig) -> Self {
        Self {
            config,
            users: BTreeMap::new(),
            pairs: BTreeMap::new(),
            issued: 0,
        }
    }

    pub fn config(&self) -> &RewardConfig {
        &self.config
    }

    fn next_event_id(&self) -> String {
        format!("rw-{}", self.issued + 1)
    }

    pub fn is_registered(&self, user_id: &str) -> bool {
        self.users.contains_key(user_id)
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn total_points(&self, user_id: &str) -> Option<u64> {
        self.users.get(user_id).map(|s| s.total_points)
    }

    pub fn ap_score(&self, user_id: &str, ap_id: &str) -> u64 {
        self.pair(user_id, ap_id).map_or(0, |p| p.ap_score)
    }

    pub fn score_attained_at(&self, user_id: &str, ap_id: &str) -> Option<Timestamp> {
        self.pair(user_id, ap_id).map(|p| p.score_attained_at)
    }

    pub fn last_review_at(&self, user_id: &str, ap_id: &str) -> Option<Timestamp> {
        self.pair(user_id, ap_id).map(|p| p.last_review_at)
    }

    fn pair(&self, user_id: &str, ap_id: &str) -> Option<&PairState> {
        self.pairs.get(&(ap_id.to_string(), user_id.to_string()))
    }

    pub fn register_user(&mut self, user_id: &str, at: Timestamp) -> Result<RewardEvent, RewardError> {
        if self.users.contains_key(user_id) {
            return Err(RewardError::DuplicateUser(user_id.to_string()));
        }
        let event = RewardEvent {
            event_id: self.next_event_id(),
            user_id: user_id.to_string(),
            ap_id: None,
            at,
            points: self.config.starting_points,
            rule_case: RuleCase::Registration,
        };
        self.users.insert(
            user_id.to_string(),
            Standing {
                total_points: self.config.starting_points,
                registered_at: at,
            },
        );
        self.issued += 1;
        Ok(event)
    }

    /// Computes the award `review` would earn without touching the ledger.
    pub fn preview_reward(&self, review: &Review) -> Result<RewardEvent, RewardError> {
        if !self.users.contains_key(&review.user_id) {
            return Err(RewardError::UnknownUser(review.user_id.clone()));
        }
        let (points, rule_case) = match self.pair(&review.user_id, &review.ap_id) {
            None => (self.config.full_reward, RuleCase::FirstReview),
            Some(prev) => {
                if review.at < prev.last_review_at {
                    return Err(RewardError::NonMonotonicTimestamp {
                        user_id: review.user_id.clone(),
                        ap_id: review.ap_id.clone(),
                        at: review.at,
                        previous: prev.last_review_at,
                    });
                }
                if review.at - prev.last_review_at >= self.config.interval_threshold_secs {
                    (self.config.half_reward(), RuleCase::SpacedReview)
                } else {
                    (0, RuleCase::SuppressedReview)
                }
            }
        };
        Ok(RewardEvent {
            event_id: self.next_event_id(),
            user_id: review.user_id.clone(),
            ap_id: Some(review.ap_id.clone()),
            at: review.at,
            points,
            rule_case,
        })
    }

    /// Scores `review` and records it. Nothing changes on error.
    pub fn evaluate_reward(&mut self, review: &Review) -> Result<RewardEvent, RewardError> {
        let event = self.preview_reward(review)?;
        let key = (review.ap_id.clone(), review.user_id.clone());
        let pair = self.pairs.entry(key).or_insert(PairState {
            last_review_at: review.at,
            ap_score: 0,
            score_attained_at: review.at,
        });
        pair.last_review_at = review.at;
        if event.points > 0 {
            pair.ap_score += event.points;
            pair.score_attained_at = review.at;
        }
        if let Some(standing) = self.users.get_mut(&review.user_id) {
            standing.total_points += event.points;
        }
        self.issued += 1;
        Ok(event)
    }

    /// Top `n` users by total points; ties go to the earlier registrant, then
    /// the smaller user id.
    pub fn leaderboard(&self, n: usize) -> Vec<LeaderboardEntry> {
        let mut ranked: Vec<(&String, &Standing)> = self.users.iter().collect();
        ranked.sort_by(|(ua, a), (ub, b)| {
            b.total_points
                .cmp(&a.total_points)
                .then(a.registered_at.cmp(&b.registered_at))
                .then(ua.cmp(ub))
        });
        ranked
            .into_iter()
            .take(n)
            .map(|(user_id, s)| LeaderboardEntry {
                user_id: user_id.clone(),
                total_points: s.total_points,
            })
            .collect()
    }

    /// Users with any review of `ap_id`, with their score and attainment time.
    pub fn contributors<'a>(&'a self, ap_id: &'a str) -> impl Iterator<Item = (&'a str, u64, Timestamp)> + 'a {
        self.pairs
            .range((ap_id.to_string(), String::new())..)
            .take_while(move |((ap, _), _)| ap == ap_id)
            .map(|((_, user), p)| (user.as_str(), p.ap_score, p.score_attained_at))
    }

    pub fn owner_of(&self, ap_id: &str) -> Option<String> {
        self.contributors(ap_id)
            .filter(|&(_, score, _)| score > 0)
            // max score, then earliest attainment, then smallest id
            .min_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(b.0)))
            .map(|(user, _, _)| user.to_string())
    }

    pub fn ownership_board<'a>(&self, ap_ids: impl IntoIterator<Item = &'a str>) -> OwnershipBoard {
        OwnershipBoard {
            owner: ap_ids
                .into_iter()
                .map(|ap| (ap.to_string(), self.owner_of(ap)))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const T: i64 = DEFAULT_INTERVAL_THRESHOLD_SECS;

    fn review(user: &str, ap: &str, at: Timestamp) -> Review {
        Review {
            review_id: format!("{user}/{ap}/{at}"),
            user_id: user.into(),
            ap_id: ap.into(),
            at,
            rating: 4,
            comment: None,
            metrics: None,
            place: None,
        }
    }

    fn ledger_with(users: &[&str]) -> ContributionLedger {
        let mut l = ContributionLedger::new(RewardConfig::default());
        for (i, u) in users.iter().enumerate() {
            l.register_user(u, i as Timestamp).unwrap();
        }
        l
    }

    #[test]
    fn registration_defaults_to_zero_points() {
        let mut l = ContributionLedger::new(RewardConfig::default());
        let e = l.register_user("u1", 1).unwrap();
        assert_eq!((e.rule_case, e.points, e.ap_id), (RuleCase::Registration, 0, None));
        assert_eq!(l.total_points("u1"), Some(0));
    }

    #[test]
    fn registration_with_configured_start() {
        let mut l = ContributionLedger::new(RewardConfig {
            starting_points: 100,
            ..RewardConfig::default()
        });
        l.register_user("u1", 1).unwrap();
        assert_eq!(l.total_points("u1"), Some(100));
        assert_eq!(l.register_user("u1", 2), Err(RewardError::DuplicateUser("u1".into())));
    }

    #[test]
    fn award_cases() {
        let mut l = ledger_with(&["u1"]);
        let first = l.evaluate_reward(&review("u1", "a1", 1)).unwrap();
        assert_eq!((first.points, first.rule_case), (10, RuleCase::FirstReview));

        let mut l = ledger_with(&["u1"]);
        l.evaluate_reward(&review("u1", "a1", 0)).unwrap();
        let spaced = l.evaluate_reward(&review("u1", "a1", 25_200)).unwrap();
        assert_eq!((spaced.points, spaced.rule_case), (5, RuleCase::SpacedReview));

        let mut l = ledger_with(&["u1"]);
        l.evaluate_reward(&review("u1", "a1", 0)).unwrap();
        let early = l.evaluate_reward(&review("u1", "a1", 21_599)).unwrap();
        assert_eq!((early.points, early.rule_case), (0, RuleCase::SuppressedReview));

        let mut l = ledger_with(&["u1"]);
        l.evaluate_reward(&review("u1", "a1", 0)).unwrap();
        let boundary = l.evaluate_reward(&review("u1", "a1", 21_600)).unwrap();
        assert_eq!(boundary.points, 5);
    }

    #[test]
    fn suppressed_review_resets_the_clock() {
        let mut l = ledger_with(&["u1"]);
        l.evaluate_reward(&review("u1", "a1", 0)).unwrap();
        assert_eq!(l.evaluate_reward(&review("u1", "a1", T - 1)).unwrap().points, 0);
        // T after the first review but only 1 s after the previous one
        assert_eq!(l.evaluate_reward(&review("u1", "a1", T)).unwrap().points, 0);
        assert_eq!(l.evaluate_reward(&review("u1", "a1", 2 * T)).unwrap().points, 5);
    }

    #[test]
    fn review_errors_leave_ledger_untouched() {
        let mut l = ledger_with(&["u1"]);
        assert_eq!(
            l.evaluate_reward(&review("ghost", "a1", 5)),
            Err(RewardError::UnknownUser("ghost".into()))
        );
        l.evaluate_reward(&review("u1", "a1", 100)).unwrap();
        let before = l.clone();
        assert!(matches!(
            l.evaluate_reward(&review("u1", "a1", 99)),
            Err(RewardError::NonMonotonicTimestamp { previous: 100, .. })
        ));
        assert_eq!(l, before);
    }

    #[test]
    fn leaderboard_order_and_ties() {
        let l = ContributionLedger::new(RewardConfig::default());
        assert!(l.leaderboard(5).is_empty());

        let mut l = ledger_with(&["u1", "u2"]);
        l.evaluate_reward(&review("u1", "a1", 10)).unwrap();
        l.evaluate_reward(&review("u1", "a1", 10 + T)).unwrap();
        l.evaluate_reward(&review("u2", "a2", 20)).unwrap();
        let top: Vec<_> = l.leaderboard(2).into_iter().map(|e| (e.user_id, e.total_points)).collect();
        assert_eq!(top, vec![("u1".to_string(), 15), ("u2".to_string(), 10)]);
        assert!(l.leaderboard(0).is_empty());

        // u2 registers first, equal points
        let mut l = ContributionLedger::new(RewardConfig::default());
        l.register_user("u2", 1).unwrap();
        l.register_user("u1", 2).unwrap();
        l.evaluate_reward(&review("u1", "a1", 10)).unwrap();
        l.evaluate_reward(&review("u2", "a2", 11)).unwrap();
        let top: Vec<_> = l.leaderboard(1).into_iter().map(|e| (e.user_id, e.total_points)).collect();
        assert_eq!(top, vec![("u2".to_string(), 10)]);
    }

    #[test]
    fn owner_rules() {
        let mut l = ledger_with(&["u1", "u2"]);
        assert_eq!(l.owner_of("a1"), None);

        l.evaluate_reward(&review("u1", "a1", 100)).unwrap();
        l.evaluate_reward(&review("u2", "a1", 200)).unwrap();
        // {u1:10 @100, u2:10 @200}
        assert_eq!(l.owner_of("a1").as_deref(), Some("u1"));

        l.evaluate_reward(&review("u2", "a1", 200 + T)).unwrap();
        // {u1:10, u2:15}
        assert_eq!(l.owner_of("a1").as_deref(), Some("u2"));
    }

    #[test]
    fn owner_tie_on_attainment_falls_back_to_user_id() {
        let mut l = ledger_with(&["zed", "amy"]);
        l.evaluate_reward(&review("zed", "a1", 100)).unwrap();
        l.evaluate_reward(&review("amy", "a1", 100)).unwrap();
        assert_eq!(l.owner_of("a1").as_deref(), Some("amy"));
    }

    #[test]
    fn board_for_requested_aps() {
        let mut l = ledger_with(&["u1"]);
        assert!(l.ownership_board([]).owner.is_empty());
        l.evaluate_reward(&review("u1", "a1", 100)).unwrap();
        let board = l.ownership_board(["a1", "a2"]);
        assert_eq!(board.owner["a1"].as_deref(), Some("u1"));
        assert_eq!(board.owner["a2"], None);
    }

    #[test]
    fn overtaking_flips_at_the_overtaking_review() {
        // u1 claims a1 with a first review and two spaced ones (20 points);
        // u2 arrives later and needs three spaced reviews to pass it.
        let mut l = ledger_with(&["u1", "u2"]);
        let mut t = 1_000;
        for _ in 0..3 {
            l.evaluate_reward(&review("u1", "a1", t)).unwrap();
            t += T;
        }
        let mut owners = Vec::new();
        for _ in 0..4 {
            l.evaluate_reward(&review("u2", "a1", t)).unwrap();
            owners.push(l.owner_of("a1").unwrap());
            t += T;
        }
        // u2: 10, 15, 20 (tie, u1 reached 20 earlier), 25
        assert_eq!(owners, ["u1", "u1", "u1", "u2"]);
    }

    #[test]
    fn config_validation() {
        assert!(RewardConfig::default().validate().is_ok());
        for bad in [
            RewardConfig { full_reward: 0, ..Default::default() },
            RewardConfig { full_reward: 7, ..Default::default() },
            RewardConfig { interval_threshold_secs: 0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(RewardError::InvalidConfig(_))));
        }
    }

    /// (user index, ap index, time step) where step advances the clock.
    fn arb_script() -> impl Strategy<Value = (u64, Vec<(u8, u8, i64)>)> {
        (
            0u64..50,
            proptest::collection::vec((0u8..4, 0u8..3, prop_oneof![Just(0i64), 1i64..T, T..3 * T]), 0..60),
        )
    }

    fn run(config: RewardConfig, script: &[(u8, u8, i64)]) -> (ContributionLedger, Vec<RewardEvent>) {
        let mut l = ContributionLedger::new(config);
        let mut events = Vec::new();
        for u in 0..4 {
            events.push(l.register_user(&format!("u{u}"), 0).unwrap());
        }
        let mut clock = 1;
        for (i, &(u, a, step)) in script.iter().enumerate() {
            clock += step;
            let mut r = review(&format!("u{u}"), &format!("a{a}"), clock);
            r.review_id = format!("r{i}");
            events.push(l.evaluate_reward(&r).unwrap());
        }
        (l, events)
    }

    proptest! {
        #[test]
        fn totals_never_decrease((start, script) in arb_script()) {
            let config = RewardConfig { starting_points: start, ..Default::default() };
            let mut l = ContributionLedger::new(config);
            for u in 0..4 {
                l.register_user(&format!("u{u}"), 0).unwrap();
            }
            let mut clock = 1;
            for &(u, a, step) in &script {
                clock += step;
                let before: Vec<u64> = (0..4).map(|u| l.total_points(&format!("u{u}")).unwrap()).collect();
                l.evaluate_reward(&review(&format!("u{u}"), &format!("a{a}"), clock)).unwrap();
                for (i, b) in before.iter().enumerate() {
                    let id = format!("u{i}");
                    prop_assert!(l.total_points(&id).unwrap() >= *b);
                }
            }
        }

        #[test]
        fn one_first_review_per_pair((_, script) in arb_script()) {
            let (_, events) = run(RewardConfig::default(), &script);
            let mut seen = std::collections::BTreeMap::new();
            for e in events.iter().filter(|e| e.ap_id.is_some()) {
                let key = (e.user_id.clone(), e.ap_id.clone());
                let firsts = seen.entry(key).or_insert(0);
                match e.rule_case {
                    RuleCase::FirstReview => { *firsts += 1; prop_assert_eq!(e.points, 10); prop_assert_eq!(*firsts, 1); }
                    RuleCase::SpacedReview => { prop_assert_eq!(*firsts, 1); prop_assert_eq!(e.points, 5); }
                    RuleCase::SuppressedReview => { prop_assert_eq!(*firsts, 1); prop_assert_eq!(e.points, 0); }
                    RuleCase::Registration => prop_assert!(false),
                }
            }
        }

        #[test]
        fn points_are_conserved((start, script) in arb_script()) {
            let config = RewardConfig { starting_points: start, ..Default::default() };
            let (l, events) = run(config, &script);
            let total: u64 = (0..4).map(|u| l.total_points(&format!("u{u}")).unwrap()).sum();
            let awarded: u64 = events.iter().filter(|e| e.rule_case != RuleCase::Registration).map(|e| e.points).sum();
            prop_assert_eq!(total, 4 * start + awarded);
        }

        #[test]
        fn at_most_one_award_inside_any_short_window((_, script) in arb_script()) {
            let (_, events) = run(RewardConfig::default(), &script);
            let reviews: Vec<&RewardEvent> = events.iter().filter(|e| e.ap_id.is_some()).collect();
            for (i, a) in reviews.iter().enumerate() {
                for b in &reviews[i + 1..] {
                    if a.user_id == b.user_id && a.ap_id == b.ap_id && b.at - a.at < T {
                        prop_assert!(a.points == 0 || b.points == 0);
                    }
                }
            }
        }

        #[test]
        fn ownership_invariant_under_reward_scaling((_, script) in arb_script(), k in 1u64..20) {
            let (base, _) = run(RewardConfig::default(), &script);
            let scaled_cfg = RewardConfig { full_reward: 10 * k, ..Default::default() };
            let (scaled, _) = run(scaled_cfg, &script);
            for a in 0..3 {
                let ap = format!("a{a}");
                prop_assert_eq!(base.owner_of(&ap), scaled.owner_of(&ap));
            }
        }
    }
}
