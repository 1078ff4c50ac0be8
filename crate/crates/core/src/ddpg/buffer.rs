use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Matrix;
use crate::robot::Action;

use super::state::{StateVector, STATE_DIM};

#[derive(Debug, Error, PartialEq)]
pub enum BufferError {
    #[error("buffer holds {len} transitions, need {needed}")]
    Undersized { len: usize, needed: usize },
    #[error("capacity must be positive")]
    ZeroCapacity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: StateVector,
    pub action: Action,
    pub reward: f64,
    pub next_state: StateVector,
    /// Suppresses bootstrapping from `next_state`.
    pub terminal: bool,
}

/// Sampled minibatch; actions are in normalized units.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
    pub terminals: Vec<bool>,
}

/// Fixed-capacity FIFO ring of transitions with columnar storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    len: usize,
    /// Slot the next push writes.
    cursor: usize,
    pushed: u64,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    terminals: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self, BufferError> {
        if capacity == 0 {
            return Err(BufferError::ZeroCapacity);
        }
        Ok(Self {
            capacity,
            len: 0,
            cursor: 0,
            pushed: 0,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            terminals: Vec::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Transitions pushed over the buffer's lifetime.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    /// Appends, overwriting the oldest transition when full.
    pub fn push(&mut self, t: &Transition) {
        let slot = self.cursor;
        let a = t.action.normalized();
        if self.len < self.capacity && slot == self.rewards.len() {
            self.states.extend_from_slice(t.state.features());
            self.actions.extend_from_slice(&a);
            self.rewards.push(t.reward);
            self.next_states.extend_from_slice(t.next_state.features());
            self.terminals.push(t.terminal);
        } else {
            self.states[slot * STATE_DIM..(slot + 1) * STATE_DIM].copy_from_slice(t.state.features());
            self.actions[slot * 2..slot * 2 + 2].copy_from_slice(&a);
            self.rewards[slot] = t.reward;
            self.next_states[slot * STATE_DIM..(slot + 1) * STATE_DIM].copy_from_slice(t.next_state.features());
            self.terminals[slot] = t.terminal;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        self.pushed += 1;
    }

    fn slot(&self, index: usize) -> usize {
        if self.len < self.capacity {
            index
        } else {
            (self.cursor + index) % self.capacity
        }
    }

    /// Transition `index` counted from the oldest one held.
    pub fn get(&self, index: usize) -> Option<Transition> {
        if index >= self.len {
            return None;
        }
        let s = self.slot(index);
        Some(Transition {
            state: StateVector::from_features(self.states[s * STATE_DIM..(s + 1) * STATE_DIM].to_vec())?,
            action: Action::from_normalized(self.actions[2 * s], self.actions[2 * s + 1]),
            reward: self.rewards[s],
            next_state: StateVector::from_features(self.next_states[s * STATE_DIM..(s + 1) * STATE_DIM].to_vec())?,
            terminal: self.terminals[s],
        })
    }

    /// `batch` storage slots drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>, BufferError> {
        if self.len < batch.max(1) {
            return Err(BufferError::Undersized {
                len: self.len,
                needed: batch.max(1),
            });
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.len)).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch, BufferError> {
        let idx = self.sample_indices(batch, rng)?;
        let mut states = Vec::with_capacity(batch * STATE_DIM);
        let mut next_states = Vec::with_capacity(batch * STATE_DIM);
        let mut actions = Vec::with_capacity(batch * 2);
        for &s in &idx {
            states.extend_from_slice(&self.states[s * STATE_DIM..(s + 1) * STATE_DIM]);
            next_states.extend_from_slice(&self.next_states[s * STATE_DIM..(s + 1) * STATE_DIM]);
            actions.extend_from_slice(&self.actions[2 * s..2 * s + 2]);
        }
        Ok(Batch {
            states: Matrix::from_vec(batch, STATE_DIM, states),
            actions: Matrix::from_vec(batch, 2, actions),
            rewards: idx.iter().map(|&s| self.rewards[s]).collect(),
            next_states: Matrix::from_vec(batch, STATE_DIM, next_states),
            terminals: idx.iter().map(|&s| self.terminals[s]).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn transition(tag: f64) -> Transition {
        let s = StateVector::from_features(vec![tag; STATE_DIM]).unwrap();
        Transition {
            state: s.clone(),
            action: Action::new(0.1, -0.2),
            reward: tag,
            next_state: s,
            terminal: false,
        }
    }

    #[test]
    fn fifo_eviction_at_capacity() {
        let mut b = ReplayBuffer::new(4).unwrap();
        for i in 0..6 {
            b.push(&transition(i as f64));
        }
        assert_eq!(b.len(), 4);
        let held: Vec<f64> = (0..4).map(|i| b.get(i).unwrap().reward).collect();
        assert_eq!(held, vec![2.0, 3.0, 4.0, 5.0]);
        assert_eq!(b.total_pushed(), 6);
        assert!(b.get(4).is_none());
    }

    #[test]
    fn round_trip_of_a_transition() {
        let mut b = ReplayBuffer::new(3).unwrap();
        let t = transition(0.25);
        b.push(&t);
        let back = b.get(0).unwrap();
        assert_eq!(back.state, t.state);
        assert!((back.action.v - t.action.v).abs() < 1e-15);
        assert_eq!(back.action.omega, t.action.omega);
    }

    #[test]
    fn undersized_sampling_fails() {
        let b = ReplayBuffer::new(10).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(b.sample_indices(1, &mut r), Err(BufferError::Undersized { len: 0, needed: 1 }));
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn sampling_is_reproducible() {
        let mut b = ReplayBuffer::new(100).unwrap();
        for i in 0..100 {
            b.push(&transition(i as f64));
        }
        let a = b.sample_indices(64, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let c = b.sample_indices(64, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, c);
        let batch = b.sample(64, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for (k, &i) in a.iter().enumerate() {
            assert_eq!(batch.rewards[k], i as f64);
            assert_eq!(batch.states.get(k, 0), i as f64);
        }
    }
}
