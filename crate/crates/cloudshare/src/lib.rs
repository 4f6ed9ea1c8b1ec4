//! Files, CLI support and the management service around `cloudshare-core`.

pub mod journal;
pub mod metrics;
pub mod report;
pub mod scenario;
pub mod service;

pub use cloudshare_core as core;
