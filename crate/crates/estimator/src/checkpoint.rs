//! Sealed job snapshots: the serialized state plus its SHA-256.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::job::JobState;

pub const FORMAT: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),
    #[error("unsupported checkpoint format {0}")]
    Format(u32),
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: u32,
    sha256: String,
    state: String,
}

fn digest(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

pub fn seal(state: &JobState) -> Vec<u8> {
    let state = serde_json::to_string(state).expect("job state serializes");
    let env = Envelope {
        format: FORMAT,
        sha256: digest(&state),
        state,
    };
    serde_json::to_vec(&env).expect("envelope serializes")
}

pub fn open(bytes: &[u8]) -> Result<JobState, CheckpointError> {
    let env: Envelope = serde_json::from_slice(bytes).map_err(|e| CheckpointError::Integrity(e.to_string()))?;
    if env.format != FORMAT {
        return Err(CheckpointError::Format(env.format));
    }
    if digest(&env.state) != env.sha256 {
        return Err(CheckpointError::Integrity("digest mismatch".into()));
    }
    serde_json::from_str(&env.state).map_err(|e| CheckpointError::Integrity(e.to_string()))
}
