//! DDPG agent: deterministic actor with a bounded velocity head, critic with
//! late action insertion, replay buffer, Ornstein-Uhlenbeck exploration and
//! soft target updates.

mod buffer;
mod critic;
mod noise;
mod state;

pub use buffer::{Batch, BufferError, ReplayBuffer, Transition};
pub use critic::{Critic, CriticCache, CriticGradients, CriticOptimizer, ACTION_DIM};
pub use noise::{OuNoise, OuParams};
pub use state::{StateVector, STATE_DIM};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{polyak_update, Activation, AdamConfig, AdamState, L2Mode, Matrix, Mlp, NnError};
use crate::robot::{Action, OMEGA_MAX, V_MAX};

#[derive(Debug, Error, PartialEq)]
pub enum DdpgError {
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error("invalid agent configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpgConfig {
    pub actor_hidden: Vec<usize>,
    /// First entry is the state-only layer of the critic.
    pub critic_hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub critic_l2: f64,
    pub l2_mode: L2Mode,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Transitions collected before the first update.
    pub warmup: usize,
    /// Gradient updates per environment step once warm.
    pub updates_per_step: usize,
    pub ou: OuParams,
    /// Per-dimension scale applied to OU samples before adding them to
    /// `(v, omega)`.
    pub noise_scale: [f64; 2],
    /// Multiplier applied to `noise_scale` after every episode; 1 disables decay.
    pub noise_decay: f64,
    /// Bootstrap from the next state on time-limit terminations.
    pub bootstrap_on_timeout: bool,
    /// Weight of the mean squared output pre-activation added to the actor
    /// loss; keeps the bounded head out of saturation. 0 disables it.
    pub head_pre_l2: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            actor_hidden: vec![512, 512, 512],
            critic_hidden: vec![512, 512, 512],
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            critic_l2: 1e-2,
            l2_mode: L2Mode::Coupled,
            gamma: 0.99,
            tau: 0.001,
            batch_size: 64,
            buffer_capacity: 100_000,
            warmup: 1000,
            updates_per_step: 1,
            ou: OuParams::default(),
            noise_scale: [V_MAX, OMEGA_MAX],
            noise_decay: 1.0,
            bootstrap_on_timeout: true,
            head_pre_l2: 0.0,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<(), DdpgError> {
        if self.actor_hidden.is_empty() || self.actor_hidden.contains(&0) {
            return Err(DdpgError::InvalidConfig("actor_hidden needs positive layer sizes"));
        }
        if self.critic_hidden.is_empty() || self.critic_hidden.contains(&0) {
            return Err(DdpgError::InvalidConfig("critic_hidden needs positive layer sizes"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(DdpgError::InvalidConfig("gamma must lie in [0, 1]"));
        }
        if !(self.head_pre_l2 >= 0.0 && self.head_pre_l2.is_finite()) {
            return Err(DdpgError::InvalidConfig("head_pre_l2 must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(DdpgError::InvalidConfig("tau must lie in [0, 1]"));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(DdpgError::InvalidConfig("need 0 < batch_size <= buffer_capacity"));
        }
        if self.updates_per_step == 0 {
            return Err(DdpgError::InvalidConfig("updates_per_step must be positive"));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.critic_l2 >= 0.0) {
            return Err(DdpgError::InvalidConfig("learning rates must be positive and l2 nonnegative"));
        }
        if !(self.ou.theta >= 0.0 && self.ou.sigma >= 0.0 && self.ou.dt > 0.0) {
            return Err(DdpgError::InvalidConfig("OU parameters must be nonnegative with dt > 0"));
        }
        if !(self.noise_decay > 0.0 && self.noise_decay <= 1.0) {
            return Err(DdpgError::InvalidConfig("noise_decay must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Losses of one update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    /// Mean Q of the actor's own actions, which the actor ascends.
    pub actor_objective: f64,
}

/// Policy output in normalized units: `u` in [0, 1], `w` in [-1, 1].
pub fn head_to_action(head: &[f64]) -> Action {
    Action::from_normalized(head[0], head[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpgAgent {
    config: DdpgConfig,
    actor: Mlp,
    critic: Critic,
    target_actor: Mlp,
    target_critic: Critic,
    actor_opt: AdamState,
    critic_opt: CriticOptimizer,
    noise: OuNoise,
    noise_scale: [f64; 2],
    updates: u64,
}

impl DdpgAgent {
    pub fn new<R: Rng + ?Sized>(config: DdpgConfig, rng: &mut R) -> Result<Self, DdpgError> {
        config.validate()?;
        let mut dims = vec![STATE_DIM];
        dims.extend_from_slice(&config.actor_hidden);
        dims.push(ACTION_DIM);
        let mut acts = vec![Activation::Relu; config.actor_hidden.len()];
        acts.push(Activation::VelocityHead);
        let actor = Mlp::init(&dims, &acts, rng)?;
        let critic = Critic::init(STATE_DIM, &config.critic_hidden, rng)?;
        let actor_opt = AdamState::new(
            &actor,
            AdamConfig {
                learning_rate: config.actor_lr,
                ..AdamConfig::default()
            },
        );
        let critic_opt = CriticOptimizer::new(
            &critic,
            AdamConfig {
                learning_rate: config.critic_lr,
                l2: config.critic_l2,
                l2_mode: config.l2_mode,
                ..AdamConfig::default()
            },
        );
        Ok(Self {
            noise: OuNoise::new(config.ou),
            noise_scale: config.noise_scale,
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            actor_opt,
            critic_opt,
            config,
            updates: 0,
        })
    }

    pub fn config(&self) -> &DdpgConfig {
        &self.config
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn critic(&self) -> &Critic {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut Critic {
        &mut self.critic
    }

    pub fn target_actor(&self) -> &Mlp {
        &self.target_actor
    }

    pub fn target_critic(&self) -> &Critic {
        &self.target_critic
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn noise(&self) -> &OuNoise {
        &self.noise
    }

    /// Deterministic policy output.
    pub fn actor_forward(&self, s: &StateVector) -> Action {
        head_to_action(&self.actor.forward(s.features()).expect("actor input is STATE_DIM wide"))
    }

    /// With `explore`, adds scaled OU noise and clips to the actuator limits.
    pub fn act<R: Rng + ?Sized>(&mut self, s: &StateVector, explore: bool, rng: &mut R) -> Action {
        let a = self.actor_forward(s);
        if !explore {
            return a;
        }
        let n = self.noise.sample(rng);
        Action::new(a.v + self.noise_scale[0] * n[0], a.omega + self.noise_scale[1] * n[1]).clamped()
    }

    /// Resets the exploration process and applies the per-episode decay.
    pub fn end_episode(&mut self) {
        self.noise.reset();
        self.noise_scale[0] *= self.config.noise_decay;
        self.noise_scale[1] *= self.config.noise_decay;
    }

    /// One critic and one actor step on a uniform minibatch, then soft target
    /// updates. `None` while the buffer is smaller than a batch.
    pub fn update_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<Option<UpdateStats>, DdpgError> {
        if buffer.len() < self.config.batch_size {
            return Ok(None);
        }
        let batch = buffer.sample(self.config.batch_size, rng)?;
        Ok(Some(self.update_on(&batch)?))
    }

    /// Bootstrapped targets `r + gamma * (1 - terminal) * Q'(s', pi'(s'))`.
    pub fn targets(&self, batch: &Batch) -> Result<Vec<f64>, DdpgError> {
        let next_actions = self.target_actor.predict(&batch.next_states)?;
        let next_q = self.target_critic.predict(&batch.next_states, &next_actions)?;
        Ok(batch
            .rewards
            .iter()
            .zip(&batch.terminals)
            .enumerate()
            .map(|(i, (&r, &terminal))| if terminal { r } else { r + self.config.gamma * next_q.get(i, 0) })
            .collect())
    }

    pub fn update_on(&mut self, batch: &Batch) -> Result<UpdateStats, DdpgError> {
        let n = batch.rewards.len() as f64;
        let y = self.targets(batch)?;

        let cache = self.critic.forward_batch(&batch.states, &batch.actions)?;
        let q = cache.q();
        let mut dq = Matrix::zeros(q.rows(), 1);
        let mut critic_loss = 0.0;
        for (i, target) in y.iter().enumerate() {
            let err = q.get(i, 0) - target;
            critic_loss += err * err / n;
            dq.data_mut()[i] = 2.0 * err / n;
        }
        let (grads, _, _) = self.critic.backward(&cache, &dq)?;
        self.critic_opt.step(&mut self.critic, &grads)?;

        let actor_cache = self.actor.forward_batch(&batch.states)?;
        let policy_actions = actor_cache.output().clone();
        let critic_cache = self.critic.forward_batch(&batch.states, &policy_actions)?;
        let actor_objective = critic_cache.q().data().iter().sum::<f64>() / n;
        let ascend = Matrix::from_vec(q.rows(), 1, vec![-1.0 / n; q.rows()]);
        let (_, _, d_action) = self.critic.backward(&critic_cache, &ascend)?;
        let pre_gradient = (self.config.head_pre_l2 > 0.0).then(|| {
            let mut g = actor_cache.output_pre().clone();
            g.data_mut().iter_mut().for_each(|z| *z *= 2.0 * self.config.head_pre_l2 / n);
            g
        });
        let (actor_grads, _) = self.actor.backward_with_pre(&actor_cache, &d_action, pre_gradient.as_ref())?;
        self.actor_opt.step(&mut self.actor, &actor_grads)?;

        polyak_update(&mut self.target_actor, &self.actor, self.config.tau)?;
        self.target_critic.polyak_from(&self.critic, self.config.tau)?;
        self.updates += 1;
        Ok(UpdateStats {
            critic_loss,
            actor_objective,
        })
    }

    /// Frozen policy for evaluation.
    pub fn policy(&self) -> FrozenPolicy {
        FrozenPolicy {
            actor: self.actor.clone(),
        }
    }
}

/// Read-only actor snapshot; cheap to share across evaluation workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenPolicy {
    actor: Mlp,
}

impl FrozenPolicy {
    pub fn new(actor: Mlp) -> Result<Self, DdpgError> {
        if actor.input_dim() != STATE_DIM || actor.output_dim() != ACTION_DIM {
            return Err(NnError::ArchitectureMismatch.into());
        }
        Ok(Self { actor })
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn act(&self, s: &StateVector) -> Action {
        head_to_action(&self.actor.forward(s.features()).expect("actor input is STATE_DIM wide"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> DdpgConfig {
        DdpgConfig {
            actor_hidden: vec![16, 16],
            critic_hidden: vec![16, 16],
            batch_size: 8,
            buffer_capacity: 1000,
            warmup: 8,
            ..DdpgConfig::default()
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn state(seed: u64) -> StateVector {
        let mut r = rng(seed);
        StateVector::from_features((0..STATE_DIM).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_head_gives_half_speed_straight() {
        let mut agent = DdpgAgent::new(small_config(), &mut rng(0)).unwrap();
        let last = agent.actor.layers_mut().last_mut().unwrap();
        last.weights_mut().iter_mut().for_each(|w| *w = 0.0);
        last.bias_mut().iter_mut().for_each(|w| *w = 0.0);
        let a = agent.actor_forward(&state(1));
        assert_eq!(a, Action::new(0.125, 0.0));
    }

    #[test]
    fn saturated_head_reaches_limits() {
        let mut agent = DdpgAgent::new(small_config(), &mut rng(0)).unwrap();
        let last = agent.actor.layers_mut().last_mut().unwrap();
        last.weights_mut().iter_mut().for_each(|w| *w = 0.0);
        last.bias_mut().iter_mut().for_each(|w| *w = 50.0);
        let a = agent.actor_forward(&state(1));
        assert!((a.v - 0.25).abs() < 1e-12 && (a.omega - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exploration_stays_in_bounds_and_is_reproducible() {
        let cfg = DdpgConfig {
            ou: OuParams { sigma: 5.0, ..OuParams::default() },
            ..small_config()
        };
        let mut a = DdpgAgent::new(cfg.clone(), &mut rng(3)).unwrap();
        let mut b = DdpgAgent::new(cfg, &mut rng(3)).unwrap();
        let (mut ra, mut rb) = (rng(9), rng(9));
        let mut clipped_high = false;
        for k in 0..200 {
            let s = state(k);
            let x = a.act(&s, true, &mut ra);
            assert_eq!(x, b.act(&s, true, &mut rb));
            assert!((0.0..=V_MAX).contains(&x.v) && (-OMEGA_MAX..=OMEGA_MAX).contains(&x.omega));
            clipped_high |= x.v == V_MAX;
            assert_eq!(a.act(&s, false, &mut ra), a.actor_forward(&s));
        }
        assert!(clipped_high);
    }

    fn filled_buffer(terminal: bool, reward: f64, n: usize) -> ReplayBuffer {
        let mut buf = ReplayBuffer::new(1000).unwrap();
        for k in 0..n {
            buf.push(&Transition {
                state: state(k as u64 % 4),
                action: Action::new(0.1, 0.2),
                reward,
                next_state: state(100 + k as u64 % 4),
                terminal,
            });
        }
        buf
    }

    #[test]
    fn terminal_targets_equal_rewards() {
        let agent = DdpgAgent::new(small_config(), &mut rng(2)).unwrap();
        let buf = filled_buffer(true, -3.5, 20);
        let batch = buf.sample(8, &mut rng(1)).unwrap();
        assert!(agent.targets(&batch).unwrap().iter().all(|&y| y == -3.5));
        let buf = filled_buffer(false, -3.5, 20);
        let batch = buf.sample(8, &mut rng(1)).unwrap();
        assert!(agent.targets(&batch).unwrap().iter().all(|&y| y != -3.5));
    }

    #[test]
    fn critic_converges_to_fixed_target() {
        let mut agent = DdpgAgent::new(small_config(), &mut rng(4)).unwrap();
        let mut buf = ReplayBuffer::new(100).unwrap();
        let t = Transition {
            state: state(7),
            action: Action::new(0.2, -0.4),
            reward: 2.0,
            next_state: state(8),
            terminal: true,
        };
        for _ in 0..8 {
            buf.push(&t);
        }
        let mut r = rng(5);
        for _ in 0..3000 {
            agent.update_step(&buf, &mut r).unwrap().unwrap();
        }
        let q = agent.critic().q(t.state.features(), t.action.normalized()).unwrap();
        assert!((q - 2.0).abs() < 1e-2, "{q}");
    }

    #[test]
    fn undersized_buffer_is_noop() {
        let mut agent = DdpgAgent::new(small_config(), &mut rng(4)).unwrap();
        let before = agent.clone();
        let buf = filled_buffer(false, 0.0, 3);
        assert_eq!(agent.update_step(&buf, &mut rng(0)).unwrap(), None);
        assert_eq!(agent, before);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let run = || {
            let mut agent = DdpgAgent::new(small_config(), &mut rng(11)).unwrap();
            let buf = filled_buffer(false, -1.0, 50);
            let mut r = rng(12);
            for _ in 0..20 {
                agent.update_step(&buf, &mut r).unwrap();
            }
            agent
        };
        let (a, b) = (run(), run());
        assert!(a.actor().params().zip(b.actor().params()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.critic().params().zip(b.critic().params()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn one_update_moves_targets_by_tau() {
        let mut agent = DdpgAgent::new(small_config(), &mut rng(6)).unwrap();
        let old_target = agent.target_actor().clone();
        let buf = filled_buffer(false, -1.0, 20);
        agent.update_step(&buf, &mut rng(0)).unwrap();
        let gap = agent
            .actor()
            .params()
            .zip(old_target.params())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let moved = agent
            .target_actor()
            .params()
            .zip(old_target.params())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(moved <= agent.config().tau * gap + 1e-15);
        assert!(moved > 0.0);
    }
}
