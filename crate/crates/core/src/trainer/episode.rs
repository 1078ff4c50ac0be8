use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ddpg::{DdpgAgent, DdpgError, FrozenPolicy, ReplayBuffer, StateVector, Transition, UpdateStats};
use crate::geometry::{Point2, Pose};
use crate::reward::{RewardBreakdown, RewardMode, RewardParams, StepOutcome};
use crate::robot::{self, odometry_between, Action, RobotState, OMEGA_MAX, V_MAX};
use crate::slam::Slam;
use crate::world::{LidarScan, World};

use super::setup::EpisodeSetup;
use super::{RobotConfig, TrainerError};

/// Anything that maps states to commands, optionally learning from the
/// transitions it produces.
pub trait Controller {
    fn act(&mut self, state: &StateVector, rng: &mut ChaCha8Rng) -> Action;

    /// Called once per step with the completed transition.
    fn learn(&mut self, _transition: &Transition, _rng: &mut ChaCha8Rng) -> Result<Option<UpdateStats>, DdpgError> {
        Ok(None)
    }

    fn end_episode(&mut self) {}
}

/// Fixed command regardless of state.
#[derive(Debug, Clone, Copy)]
pub struct ConstantController(pub Action);

impl Controller for ConstantController {
    fn act(&mut self, _state: &StateVector, _rng: &mut ChaCha8Rng) -> Action {
        self.0
    }
}

/// Turns toward the goal bearing and drives when roughly aligned. Ignores
/// obstacles.
#[derive(Debug, Clone, Copy, Default)]
pub struct GoalSeeker;

impl Controller for GoalSeeker {
    fn act(&mut self, state: &StateVector, _rng: &mut ChaCha8Rng) -> Action {
        let bearing = state.target()[1] * std::f64::consts::PI;
        let omega = (2.0 * bearing).clamp(-OMEGA_MAX, OMEGA_MAX);
        let v = if bearing.abs() < 0.3 { V_MAX } else { 0.0 };
        Action::new(v, omega)
    }
}

impl Controller for FrozenPolicy {
    fn act(&mut self, state: &StateVector, _rng: &mut ChaCha8Rng) -> Action {
        FrozenPolicy::act(self, state)
    }
}

/// DDPG agent with its replay buffer, acting with exploration noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub agent: DdpgAgent,
    pub buffer: ReplayBuffer,
}

impl Learner {
    pub fn new(agent: DdpgAgent) -> Result<Self, DdpgError> {
        let buffer = ReplayBuffer::new(agent.config().buffer_capacity)?;
        Ok(Self { agent, buffer })
    }
}

impl Controller for Learner {
    fn act(&mut self, state: &StateVector, rng: &mut ChaCha8Rng) -> Action {
        self.agent.act(state, true, rng)
    }

    fn learn(&mut self, transition: &Transition, rng: &mut ChaCha8Rng) -> Result<Option<UpdateStats>, DdpgError> {
        self.buffer.push(transition);
        if self.buffer.len() < self.agent.config().warmup {
            return Ok(None);
        }
        let mut last = None;
        for _ in 0..self.agent.config().updates_per_step {
            last = self.agent.update_step(&self.buffer, rng)?;
        }
        Ok(last)
    }

    fn end_episode(&mut self) {
        self.agent.end_episode();
    }
}

/// Where the goal-relative part of the state comes from.
pub enum PoseSource<'a> {
    /// Particle-filter estimate; the map also feeds the shaped reward.
    Slam(&'a mut Slam),
    /// Integrated noisy odometry only.
    DeadReckoning,
}

/// One control step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Simulated time after the step, seconds.
    pub t: f64,
    pub pose: Pose,
    pub estimate: Pose,
    pub action: Action,
    pub reward: RewardBreakdown,
    /// Reward the controller was given.
    pub reward_used: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub setup: EpisodeSetup,
    pub outcome: StepOutcome,
    pub steps: u32,
    /// True poses, starting with the start pose.
    pub trajectory: Vec<Pose>,
    pub step_records: Vec<StepRecord>,
    /// Distance between estimate and truth after the last step.
    pub final_pose_error: f64,
    pub updates: u32,
    pub critic_loss_sum: f64,
}

impl EpisodeRecord {
    pub fn total_reward(&self) -> f64 {
        self.step_records.iter().map(|s| s.reward_used).sum()
    }

    pub fn mean_critic_loss(&self) -> Option<f64> {
        (self.updates > 0).then(|| self.critic_loss_sum / self.updates as f64)
    }
}

/// Episode-level settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeParams {
    pub robot: RobotConfig,
    pub reward: RewardParams,
    pub reward_mode: RewardMode,
    pub max_steps: u32,
    pub bootstrap_on_timeout: bool,
}

/// Mutable robot-side state carried between consecutive goals.
#[derive(Debug, Clone, Copy)]
pub struct Carry {
    pub truth: RobotState,
    pub estimate: Pose,
    pub last_action: Action,
}

impl Carry {
    pub fn at(pose: Pose) -> Self {
        Self {
            truth: RobotState::at(pose),
            estimate: pose,
            last_action: Action::default(),
        }
    }
}

fn scan_at(world: &World, pose: &Pose, sigma: f64, rng: &mut ChaCha8Rng) -> Result<LidarScan, TrainerError> {
    Ok(if sigma > 0.0 { world.scan_noisy(pose, sigma, rng)? } else { world.scan(pose)? })
}

/// Drives toward `goal` from `carry` until a terminal outcome; at least one
/// step is always taken.
pub fn run_leg(
    world: &World,
    goal: Point2,
    carry: &mut Carry,
    controller: &mut dyn Controller,
    source: &mut PoseSource<'_>,
    params: &EpisodeParams,
    rng: &mut ChaCha8Rng,
    record: &mut EpisodeRecord,
) -> Result<StepOutcome, TrainerError> {
    let reward_params = RewardParams {
        max_steps: params.max_steps,
        ..params.reward
    };
    let diagonal = world.diagonal();
    let mut scan = scan_at(world, &carry.truth.pose(), params.robot.lidar_noise, rng)?;
    let mut state = StateVector::build(&scan, &carry.estimate, goal, carry.last_action, diagonal);
    let mut steps = 0u32;
    loop {
        let action = controller.act(&state, rng).clamped();
        let prev = carry.truth;
        carry.truth = robot::step(&prev, action, params.robot.dt)?;
        steps += 1;
        let odom = odometry_between(&prev, &carry.truth, &params.robot.odom_noise, rng);
        let collided = world.collides(carry.truth.pose().position(), params.robot.radius);
        // A crashed robot may sit inside an obstacle; it keeps its last scan.
        scan = match scan_at(world, &carry.truth.pose(), params.robot.lidar_noise, rng) {
            Ok(s) => s,
            Err(_) if collided => scan,
            Err(e) => return Err(e),
        };
        carry.estimate = match source {
            PoseSource::Slam(slam) => slam.step(&odom, &params.robot.odom_noise, &scan, rng),
            PoseSource::DeadReckoning => odom.apply(&carry.estimate),
        };
        let true_distance = carry.truth.pose().position().distance(goal);
        let outcome = StepOutcome::classify(true_distance, collided, steps, &reward_params);
        let d = carry.estimate.position().distance(goal);
        let breakdown = match source {
            PoseSource::Slam(slam) => {
                let view = slam.reward_view(&carry.estimate);
                RewardBreakdown::compute(d, outcome, &view.cells, view.confidence, &reward_params)?
            }
            PoseSource::DeadReckoning => RewardBreakdown::compute(d, outcome, &[], 0.0, &reward_params)?,
        };
        let reward = breakdown.for_mode(params.reward_mode);
        let next_state = StateVector::build(&scan, &carry.estimate, goal, action, diagonal);
        let terminal = match outcome {
            StepOutcome::Reached | StepOutcome::Crashed => true,
            StepOutcome::TimedOut => !params.bootstrap_on_timeout,
            StepOutcome::Running => false,
        };
        let transition = Transition {
            state,
            action,
            reward,
            next_state: next_state.clone(),
            terminal,
        };
        if let Some(stats) = controller.learn(&transition, rng)? {
            record.updates += 1;
            record.critic_loss_sum += stats.critic_loss;
        }
        let t = (record.step_records.len() + 1) as f64 * params.robot.dt;
        record.step_records.push(StepRecord {
            t,
            pose: carry.truth.pose(),
            estimate: carry.estimate,
            action,
            reward: breakdown,
            reward_used: reward,
        });
        record.trajectory.push(carry.truth.pose());
        carry.last_action = action;
        state = next_state;
        if outcome.is_terminal() {
            record.steps += steps;
            record.final_pose_error = carry.estimate.position().distance(carry.truth.pose().position());
            return Ok(outcome);
        }
    }
}

/// One episode from `setup.start` to `setup.goal`.
pub fn run_episode(
    world: &World,
    setup: EpisodeSetup,
    controller: &mut dyn Controller,
    mut source: PoseSource<'_>,
    params: &EpisodeParams,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeRecord, TrainerError> {
    let mut carry = Carry::at(setup.start);
    if let PoseSource::Slam(slam) = &mut source {
        slam.reset_pose(setup.start);
        let scan = scan_at(world, &setup.start, params.robot.lidar_noise, rng)?;
        // The start pose is known; skipping an off-grid start is harmless.
        let _ = slam.integrate_known_pose(&setup.start, &scan);
    }
    let mut record = EpisodeRecord {
        setup,
        outcome: StepOutcome::Running,
        steps: 0,
        trajectory: vec![setup.start],
        step_records: Vec::new(),
        final_pose_error: 0.0,
        updates: 0,
        critic_loss_sum: 0.0,
    };
    record.outcome = run_leg(world, setup.goal, &mut carry, controller, &mut source, params, rng, &mut record)?;
    controller.end_episode();
    Ok(record)
}

/// Seed of the independent RNG stream for item `index` of a run seeded with
/// `seed`.
pub fn derive_rng(seed: u64, index: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index + 1);
    rng
}

