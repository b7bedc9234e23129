//! WiFi advisory service: HTTP API and service configuration on top of
//! [`wifiscout_core`].

pub mod api;
pub mod config;

pub use api::{router, system_clock, AppState, Clock};
pub use config::ServiceConfig;
