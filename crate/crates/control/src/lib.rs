//! The hopper service: durable record log, job formatter, pipeline runner,
//! HTTP API and reports.

pub mod api;
pub mod client;
pub mod formatter;
pub mod log;
pub mod report;
pub mod service;
pub mod spec;
pub mod state;
