use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::ddpg::FrozenPolicy;
use crate::geometry::{Point2, Pose};
use crate::reward::{RewardMode, StepOutcome};
use crate::world::World;

use super::episode::{derive_rng, run_episode, run_leg, Carry, Controller, EpisodeParams, EpisodeRecord, PoseSource};
use super::setup::{EpisodeSetup, FreeSpace};
use super::TrainerError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalEpisode {
    pub setup: EpisodeSetup,
    pub outcome: StepOutcome,
    pub steps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub world: String,
    pub n_targets: usize,
    pub successes: usize,
    pub crashes: usize,
    pub timeouts: usize,
    pub success_ratio: f64,
    /// Mean and sample standard deviation of the action count over
    /// successful episodes; `None` without successes.
    pub actions_mean: Option<f64>,
    pub actions_std: Option<f64>,
    pub episodes: Vec<EvalEpisode>,
    /// Full per-step records, in target order.
    #[serde(skip)]
    pub records: Vec<EpisodeRecord>,
}

impl EvalReport {
    fn from_records(world: &str, records: Vec<EpisodeRecord>) -> Self {
        let count = |o: StepOutcome| records.iter().filter(|r| r.outcome == o).count();
        let actions: Vec<f64> = records
            .iter()
            .filter(|r| r.outcome == StepOutcome::Reached)
            .map(|r| r.steps as f64)
            .collect();
        let n = actions.len() as f64;
        let mean = (!actions.is_empty()).then(|| actions.iter().sum::<f64>() / n);
        let std = mean.map(|m| {
            if actions.len() < 2 {
                0.0
            } else {
                (actions.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            }
        });
        let successes = count(StepOutcome::Reached);
        Self {
            world: world.to_string(),
            n_targets: records.len(),
            successes,
            crashes: count(StepOutcome::Crashed),
            timeouts: count(StepOutcome::TimedOut),
            success_ratio: if records.is_empty() { 0.0 } else { successes as f64 / records.len() as f64 },
            actions_mean: mean,
            actions_std: std,
            episodes: records
                .iter()
                .map(|r| EvalEpisode {
                    setup: r.setup,
                    outcome: r.outcome,
                    steps: r.steps,
                })
                .collect(),
            records,
        }
    }
}

/// The shared target set: depends only on the world, the sampling settings
/// and `seed`, never on the agent.
pub fn evaluation_targets(world: &World, config: &RunConfig, seed: u64) -> Result<Vec<EpisodeSetup>, TrainerError> {
    let free = FreeSpace::new(world, config.robot.radius)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..config.eval.n_targets)
        .map(|_| Ok(free.sample_setup(config.reward.d_min, &mut rng)?))
        .collect()
}

fn eval_params(config: &RunConfig) -> EpisodeParams {
    EpisodeParams {
        robot: config.robot,
        reward: config.reward,
        reward_mode: RewardMode::Dense,
        max_steps: config.eval.max_steps,
        bootstrap_on_timeout: true,
    }
}

/// Runs a fresh clone of `controller` on every target, in parallel, with
/// dead-reckoned goal coordinates. Episode `i` uses its own RNG stream, so
/// the report does not depend on scheduling.
pub fn evaluate_with<C>(controller: &C, world: &World, config: &RunConfig, seed: u64) -> Result<EvalReport, TrainerError>
where
    C: Controller + Clone + Send + Sync,
{
    let targets = evaluation_targets(world, config, seed)?;
    let params = eval_params(config);
    let records = targets
        .par_iter()
        .enumerate()
        .map(|(i, setup)| {
            let mut c = controller.clone();
            let mut rng = derive_rng(seed, i as u64);
            run_episode(world, *setup, &mut c, PoseSource::DeadReckoning, &params, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::from_records(world.name(), records))
}

/// Noise-free, non-learning evaluation of a trained actor.
pub fn evaluate(policy: &FrozenPolicy, world: &World, config: &RunConfig, seed: u64) -> Result<EvalReport, TrainerError> {
    evaluate_with(policy, world, config, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegResult {
    pub goal: Point2,
    pub outcome: StepOutcome,
    pub steps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointRecord {
    pub legs: Vec<LegResult>,
    /// Whole run as one record; `outcome` is that of the last leg run.
    pub record: EpisodeRecord,
    pub completed: bool,
}

/// Follows `goals` in order from `start`, re-targeting on each arrival and
/// stopping at the first leg that does not reach its goal. A goal already
/// within tolerance counts as reached without moving.
pub fn waypoint_run(
    controller: &mut dyn Controller,
    world: &World,
    start: Pose,
    goals: &[Point2],
    config: &RunConfig,
    seed: u64,
) -> Result<WaypointRecord, TrainerError> {
    let &first = goals.first().ok_or(TrainerError::NoWaypoints)?;
    let params = eval_params(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut carry = Carry::at(start);
    let mut record = EpisodeRecord {
        setup: EpisodeSetup { start, goal: first },
        outcome: StepOutcome::Running,
        steps: 0,
        trajectory: vec![start],
        step_records: Vec::new(),
        final_pose_error: 0.0,
        updates: 0,
        critic_loss_sum: 0.0,
    };
    let mut legs = Vec::with_capacity(goals.len());
    for &goal in goals {
        let outcome = if carry.truth.pose().position().distance(goal) <= config.reward.d_min {
            legs.push(LegResult { goal, outcome: StepOutcome::Reached, steps: 0 });
            StepOutcome::Reached
        } else {
            let before = record.steps;
            let outcome = run_leg(world, goal, &mut carry, controller, &mut PoseSource::DeadReckoning, &params, &mut rng, &mut record)?;
            legs.push(LegResult { goal, outcome, steps: record.steps - before });
            outcome
        };
        record.outcome = outcome;
        if outcome != StepOutcome::Reached {
            break;
        }
    }
    controller.end_episode();
    let completed = legs.len() == goals.len() && legs.iter().all(|l| l.outcome == StepOutcome::Reached);
    Ok(WaypointRecord { legs, record, completed })
}
