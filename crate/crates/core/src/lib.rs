pub mod adversary;
pub mod analytics;
pub mod cli;
pub mod error;
mod params;
pub mod protocol;
pub mod qstate;
pub mod simnet;
pub mod sources;
