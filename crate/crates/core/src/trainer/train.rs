use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::ddpg::DdpgAgent;
use crate::geometry::Pose;
use crate::reward::{RewardMode, StepOutcome};
use crate::slam::Slam;
use crate::world::World;

use super::episode::{run_episode, EpisodeParams, EpisodeRecord, Learner, PoseSource};
use super::logs::{EpisodeSummary, EPISODE_LOG_SCHEMA};
use super::setup::FreeSpace;
use super::{ObserverError, TrainerError};

/// How `Convergence` is defined; reported alongside the number.
pub const CONVERGENCE_DEFINITION: &str = "first episode whose rolling success ratio (full window) reaches the \
     threshold and stays at or above it for every later episode; steps are cumulative environment steps \
     through that episode";

/// Receives training progress. Returning an error aborts training; the state
/// passed to the last successful `checkpoint` call remains resumable.
pub trait TrainObserver {
    fn episode_finished(&mut self, _summary: &EpisodeSummary, _record: &EpisodeRecord) -> Result<(), ObserverError> {
        Ok(())
    }

    fn checkpoint(&mut self, _state: &TrainingState) -> Result<(), ObserverError> {
        Ok(())
    }
}

pub struct NullObserver;

impl TrainObserver for NullObserver {}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingState {
    /// Completed episodes.
    pub episode: u32,
    pub total_steps: u64,
    pub learner: Learner,
    pub slam: Slam,
    pub rng: ChaCha8Rng,
    pub summaries: Vec<EpisodeSummary>,
}

impl TrainingState {
    /// Fresh agent and empty map. All randomness flows from `config.seed`.
    pub fn new(config: &RunConfig, world: &World) -> Result<Self, TrainerError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let agent = DdpgAgent::new(config.agent.clone(), &mut rng)?;
        let slam = Slam::new(world.bounds(), Pose::default(), config.slam)?;
        Ok(Self {
            episode: 0,
            total_steps: 0,
            learner: Learner::new(agent)?,
            slam,
            rng,
            summaries: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub episode: u32,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub reward_mode: RewardMode,
    pub episodes: u32,
    pub successes: u32,
    pub crashes: u32,
    pub timeouts: u32,
    pub total_steps: u64,
    /// Over the last `final_window` episodes (fewer if the run is shorter).
    pub final_success_ratio: f64,
    pub final_collision_ratio: f64,
    pub success_curve: Vec<f64>,
    pub collision_curve: Vec<f64>,
    pub convergence: Option<Convergence>,
    pub convergence_definition: String,
    pub median_final_pose_error: Option<f64>,
}

impl TrainingReport {
    pub fn from_summaries(summaries: &[EpisodeSummary], config: &RunConfig) -> Self {
        let count = |o: StepOutcome| summaries.iter().filter(|s| s.outcome == o).count() as u32;
        let tail = &summaries[summaries.len().saturating_sub(config.train.final_window)..];
        let ratio = |o: StepOutcome| {
            if tail.is_empty() {
                0.0
            } else {
                tail.iter().filter(|s| s.outcome == o).count() as f64 / tail.len() as f64
            }
        };
        let mut errors: Vec<f64> = summaries.iter().map(|s| s.final_pose_error).collect();
        errors.sort_by(f64::total_cmp);
        let median = (!errors.is_empty()).then(|| {
            let m = errors.len() / 2;
            if errors.len() % 2 == 1 {
                errors[m]
            } else {
                0.5 * (errors[m - 1] + errors[m])
            }
        });
        Self {
            reward_mode: config.train.reward_mode,
            episodes: summaries.len() as u32,
            successes: count(StepOutcome::Reached),
            crashes: count(StepOutcome::Crashed),
            timeouts: count(StepOutcome::TimedOut),
            total_steps: summaries.last().map_or(0, |s| s.cumulative_steps),
            final_success_ratio: ratio(StepOutcome::Reached),
            final_collision_ratio: ratio(StepOutcome::Crashed),
            success_curve: summaries.iter().map(|s| s.rolling_success).collect(),
            collision_curve: summaries.iter().map(|s| s.rolling_collision).collect(),
            convergence: convergence(summaries, config.train.window, config.train.convergence_threshold),
            convergence_definition: CONVERGENCE_DEFINITION.to_string(),
            median_final_pose_error: median,
        }
    }
}

fn convergence(summaries: &[EpisodeSummary], window: usize, threshold: f64) -> Option<Convergence> {
    let mut first = None;
    for (i, s) in summaries.iter().enumerate() {
        if i + 1 < window || s.rolling_success < threshold {
            first = None;
        } else if first.is_none() {
            first = Some(Convergence {
                episode: s.episode,
                steps: s.cumulative_steps,
            });
        }
    }
    first
}

fn rolling(summaries: &[EpisodeSummary], latest: StepOutcome, window: usize, outcome: StepOutcome) -> f64 {
    let previous = &summaries[summaries.len().saturating_sub(window - 1)..];
    let hits = previous.iter().filter(|s| s.outcome == outcome).count() + (latest == outcome) as usize;
    hits as f64 / (previous.len() + 1) as f64
}

/// Trains from scratch; returns the report and the final state.
pub fn train(
    config: &RunConfig,
    world: &World,
    observer: &mut dyn TrainObserver,
) -> Result<(TrainingReport, TrainingState), TrainerError> {
    let mut state = TrainingState::new(config, world)?;
    let report = resume(config, world, &mut state, observer)?;
    Ok((report, state))
}

/// Runs the remaining episodes of `state`. Strictly sequential.
pub fn resume(
    config: &RunConfig,
    world: &World,
    state: &mut TrainingState,
    observer: &mut dyn TrainObserver,
) -> Result<TrainingReport, TrainerError> {
    config.validate().map_err(|e| TrainerError::Config(e.to_string()))?;
    let free = FreeSpace::new(world, config.robot.radius)?;
    let params = EpisodeParams {
        robot: config.robot,
        reward: config.reward,
        reward_mode: config.train.reward_mode,
        max_steps: config.reward.max_steps,
        bootstrap_on_timeout: config.agent.bootstrap_on_timeout,
    };
    while state.episode < config.train.episodes {
        if config.train.reset_map_each_episode {
            state.slam.reset_map();
        }
        let setup = free.sample_setup(config.reward.d_min, &mut state.rng)?;
        let record = run_episode(
            world,
            setup,
            &mut state.learner,
            PoseSource::Slam(&mut state.slam),
            &params,
            &mut state.rng,
        )?;
        state.total_steps += record.steps as u64;
        let summary = summarize(&record, state, config);
        let index = state.episode;
        state.summaries.push(summary);
        state.episode += 1;
        let summary = state.summaries.last().expect("just pushed");
        if let Err(source) = observer.episode_finished(summary, &record) {
            return Err(TrainerError::Observer { episode: index, source });
        }
        log::debug!(
            "episode {index}: {:?} after {} steps, rolling success {:.2}",
            summary.outcome,
            summary.steps,
            summary.rolling_success
        );
        let every = config.train.checkpoint_every;
        if every > 0 && state.episode % every == 0 {
            if let Err(source) = observer.checkpoint(state) {
                return Err(TrainerError::Observer { episode: index, source });
            }
        }
    }
    Ok(TrainingReport::from_summaries(&state.summaries, config))
}

fn summarize(record: &EpisodeRecord, state: &TrainingState, config: &RunConfig) -> EpisodeSummary {
    let window = config.train.window;
    EpisodeSummary {
        schema: EPISODE_LOG_SCHEMA,
        episode: state.episode,
        outcome: record.outcome,
        steps: record.steps,
        cumulative_steps: state.total_steps,
        start: record.setup.start,
        goal: record.setup.goal,
        total_reward: record.total_reward(),
        dense_return: record.step_records.iter().map(|s| s.reward.dense).sum(),
        map_term_sum: record.step_records.iter().map(|s| s.reward.map_term).sum(),
        final_pose_error: record.final_pose_error,
        updates: record.updates,
        mean_critic_loss: record.mean_critic_loss(),
        rolling_success: rolling(&state.summaries, record.outcome, window, StepOutcome::Reached),
        rolling_collision: rolling(&state.summaries, record.outcome, window, StepOutcome::Crashed),
        step_records: config.train.log_steps.then(|| record.step_records.clone()),
    }
}
