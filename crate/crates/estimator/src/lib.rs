//! The semisynchronous job controller: batches from a strategy, adaptive
//! waiting, late-result harvesting, and sealed checkpoints.

pub mod checkpoint;
pub mod job;
pub mod ledger;
pub mod sim;
pub mod stats;

pub use checkpoint::CheckpointError;
pub use job::{BestResult, Estimator, EstimatorConfig, EstimatorError, JobEvent, JobObserver, JobState, JobStatus, Step};
pub use ledger::IterationLedger;
pub use stats::{adaptive_timeout, DurationStats, Moments, TimeoutPolicy};
