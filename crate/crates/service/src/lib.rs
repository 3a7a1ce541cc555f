//! REST service, session handling, health monitor and the `cia` command line.

pub mod cli;
pub mod client;
pub mod config;
pub mod health;
pub mod server;

pub use config::ServiceConfig;
pub use health::HealthStatus;
pub use server::{router, AppState};
