//! Project store, CLI and HTTP service around `vegmap-core`.

pub mod cli;
pub mod config;
pub mod jobs;
pub mod ops;
pub mod server;
pub mod store;
