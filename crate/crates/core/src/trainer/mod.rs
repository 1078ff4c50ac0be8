//! Episode orchestration: start/goal sampling, the sense, localize, reward,
//! act and learn loop, training metrics, evaluation and waypoint following.

mod episode;
mod eval;
mod logs;
mod setup;
mod train;

use thiserror::Error;

pub use crate::config::RobotConfig;
pub use episode::{
    derive_rng, run_episode, run_leg, Carry, ConstantController, Controller, EpisodeParams, EpisodeRecord,
    GoalSeeker, Learner, PoseSource, StepRecord,
};
pub use eval::{
    evaluate, evaluate_with, evaluation_targets, waypoint_run, EvalEpisode, EvalReport, LegResult, WaypointRecord,
};
pub use logs::{trajectory_csv, write_trajectory_csv, EpisodeSummary, EPISODE_LOG_SCHEMA};
pub use setup::{EpisodeSetup, FreeSpace, SetupError, FREE_SPACE_RESOLUTION, MAX_SETUP_ATTEMPTS};
pub use train::{
    resume, train, Convergence, NullObserver, TrainObserver, TrainingReport, TrainingState, CONVERGENCE_DEFINITION,
};

pub type ObserverError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error(transparent)]
    Robot(#[from] crate::robot::RobotError),
    #[error(transparent)]
    World(#[from] crate::world::WorldError),
    #[error(transparent)]
    Reward(#[from] crate::reward::RewardError),
    #[error(transparent)]
    Ddpg(#[from] crate::ddpg::DdpgError),
    #[error(transparent)]
    Setup(#[from] SetupError),
    #[error(transparent)]
    Slam(#[from] crate::slam::SlamError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("empty waypoint list")]
    NoWaypoints,
    /// Raised by an observer callback, e.g. a failed checkpoint write. The
    /// training state handed to the last successful checkpoint is intact.
    #[error("observer failed after episode {episode}: {source}")]
    Observer { episode: u32, source: ObserverError },
}
