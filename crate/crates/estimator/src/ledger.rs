use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Bookkeeping for one semisynchronous iteration. Ids are task sequence
/// numbers within the job.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationLedger {
    pub iteration: u64,
    pub issued: Vec<u64>,
    pub completed: BTreeSet<u64>,
    pub failed: BTreeSet<u64>,
    pub timed_out: BTreeSet<u64>,
    /// Earlier timed-out tasks whose results were ingested at this close.
    pub late_ingested: Vec<u64>,
    pub batch_started_at: f64,
    pub adaptive_deadline: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_at: Option<f64>,
}

impl IterationLedger {
    pub fn in_flight(&self) -> Vec<u64> {
        self.issued
            .iter()
            .copied()
            .filter(|id| !self.completed.contains(id) && !self.failed.contains(id) && !self.timed_out.contains(id))
            .collect()
    }

    pub fn is_closed(&self) -> bool {
        self.closed_at.is_some()
    }
}
