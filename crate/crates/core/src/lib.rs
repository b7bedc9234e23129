//! Core of the WiFiScout advisory platform: crowdsensed WiFi reviews,
//! contribution rewards with per-AP ownership, spatial clustering for map
//! display, and an event-sourced store with offline-search snapshots.

pub mod crowdsim;
pub mod ingest;
pub mod model;
pub mod reward;
pub mod spatial;
pub mod store;

pub use model::{AccessPoint, ApSource, Bbox, GeoPoint, NetMetrics, PlaceTag, Review, Timestamp, UserAccount};
pub use reward::{ContributionLedger, RewardConfig, RewardEvent, RuleCase};
pub use store::{AdvisoryState, AdvisoryStore, ApSummary, Snapshot, StoreError};
