//! Training checkpoints.
//!
//! Layout (little endian): magic `MNCK`, `u32` version, `u64` body length,
//! 32-byte SHA-256 of the body, body. The body is CBOR holding the effective
//! configuration, the agent with optimizer state, the SLAM state, the master
//! RNG, all episode summaries and, optionally, the replay buffer.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::RunConfig;
use crate::ddpg::{DdpgAgent, FrozenPolicy, ReplayBuffer};
use crate::slam::Slam;
use crate::trainer::{EpisodeSummary, Learner, TrainingState};

const MAGIC: &[u8; 4] = b"MNCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated checkpoint")]
    Truncated,
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("checkpoint body: {0}")]
    Body(String),
    #[error("checkpoint has no replay buffer and the agent cannot rebuild one: {0}")]
    Buffer(String),
}

#[derive(Serialize)]
struct BodyRef<'a> {
    config: &'a RunConfig,
    episode: u32,
    total_steps: u64,
    agent: &'a DdpgAgent,
    slam: &'a Slam,
    rng: &'a ChaCha8Rng,
    summaries: &'a [EpisodeSummary],
    buffer: Option<&'a ReplayBuffer>,
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub episode: u32,
    pub total_steps: u64,
    pub agent: DdpgAgent,
    pub slam: Slam,
    pub rng: ChaCha8Rng,
    pub summaries: Vec<EpisodeSummary>,
    pub buffer: Option<ReplayBuffer>,
}

impl Checkpoint {
    pub fn policy(&self) -> FrozenPolicy {
        self.agent.policy()
    }

    /// Training state to resume from. Without a stored buffer the agent
    /// restarts with an empty one, so the continuation is not bitwise equal
    /// to an uninterrupted run.
    pub fn into_state(self) -> Result<TrainingState, CheckpointError> {
        let learner = match self.buffer {
            Some(buffer) => Learner {
                agent: self.agent,
                buffer,
            },
            None => Learner::new(self.agent).map_err(|e| CheckpointError::Buffer(e.to_string()))?,
        };
        Ok(TrainingState {
            episode: self.episode,
            total_steps: self.total_steps,
            learner,
            slam: self.slam,
            rng: self.rng,
            summaries: self.summaries,
        })
    }
}

pub fn encode_checkpoint(config: &RunConfig, state: &TrainingState, include_buffer: bool) -> Vec<u8> {
    let body = BodyRef {
        config,
        episode: state.episode,
        total_steps: state.total_steps,
        agent: &state.learner.agent,
        slam: &state.slam,
        rng: &state.rng,
        summaries: &state.summaries,
        buffer: include_buffer.then_some(&state.learner.buffer),
    };
    let mut cbor = Vec::new();
    ciborium::into_writer(&body, &mut cbor).expect("in-memory CBOR encoding cannot fail");
    let mut out = Vec::with_capacity(HEADER_LEN + cbor.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(cbor.len() as u64).to_le_bytes());
    out.extend_from_slice(Sha256::digest(&cbor).as_slice());
    out.extend_from_slice(&cbor);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 8 {
        return Err(CheckpointError::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(CheckpointError::Truncated);
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let body = &bytes[HEADER_LEN..];
    if (body.len() as u64) < len {
        return Err(CheckpointError::Truncated);
    }
    if body.len() as u64 != len || Sha256::digest(body).as_slice() != &bytes[16..HEADER_LEN] {
        return Err(CheckpointError::Checksum);
    }
    ciborium::from_reader(body).map_err(|e| CheckpointError::Body(e.to_string()))
}

pub fn save_checkpoint(
    path: &Path,
    config: &RunConfig,
    state: &TrainingState,
    include_buffer: bool,
) -> Result<(), CheckpointError> {
    crate::persist::write_atomic(path, &encode_checkpoint(config, state, include_buffer)).map_err(|source| {
        CheckpointError::Io {
            path: path.display().to_string(),
            source,
        }
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::bundled;

    fn tiny() -> (RunConfig, TrainingState) {
        let mut c = RunConfig::desk();
        c.agent.actor_hidden = vec![8, 8];
        c.agent.critic_hidden = vec![8, 8];
        c.agent.buffer_capacity = 64;
        let w = bundled("desk_train").unwrap();
        let s = TrainingState::new(&c, &w).unwrap();
        (c, s)
    }

    #[test]
    fn round_trip_preserves_state() {
        let (c, s) = tiny();
        let bytes = encode_checkpoint(&c, &s, true);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.config, c);
        assert_eq!(back.agent, s.learner.agent);
        assert_eq!(back.rng, s.rng);
        assert_eq!(back.buffer.as_ref(), Some(&s.learner.buffer));
        let state = back.into_state().unwrap();
        assert_eq!(encode_checkpoint(&c, &state, true), bytes);
    }

    #[test]
    fn damaged_files_are_rejected() {
        let (c, s) = tiny();
        let bytes = encode_checkpoint(&c, &s, false);
        let mut flipped = bytes.clone();
        *flipped.last_mut().unwrap() ^= 1;
        assert!(matches!(decode_checkpoint(&flipped), Err(CheckpointError::Checksum)));
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated)));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode_checkpoint(&magic), Err(CheckpointError::BadMagic)));
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(matches!(
            decode_checkpoint(&version),
            Err(CheckpointError::VersionMismatch { found: 9, expected: CHECKPOINT_VERSION })
        ));
    }
}
