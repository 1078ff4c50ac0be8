//! Run configuration: named presets, TOML overlays and validation.
//!
//! A configuration file is a partial TOML tree merged over a preset. Every
//! table rejects unknown keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ddpg::DdpgConfig;
use crate::reward::{RewardMode, RewardParams};
use crate::robot::{OdomNoise, DEFAULT_DT};
use crate::slam::SlamParams;

pub const ROBOT_RADIUS: f64 = 0.15;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("unknown preset '{0}' (expected 'paper' or 'desk')")]
    UnknownPreset(String),
    #[error("invalid value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotConfig {
    pub radius: f64,
    pub dt: f64,
    pub odom_noise: OdomNoise,
    /// Standard deviation of additive range noise; 0 gives exact scans.
    pub lidar_noise: f64,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            radius: ROBOT_RADIUS,
            dt: DEFAULT_DT,
            odom_noise: OdomNoise::default(),
            lidar_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub episodes: u32,
    pub reward_mode: RewardMode,
    /// Clear the map at every episode start instead of keeping one map.
    pub reset_map_each_episode: bool,
    /// Episodes between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u32,
    /// Include the replay buffer in checkpoints.
    pub checkpoint_buffer: bool,
    /// Rolling window for success and collision ratios.
    pub window: usize,
    /// Trailing episodes over which the final success ratio is reported.
    pub final_window: usize,
    /// Rolling success ratio that counts as converged.
    pub convergence_threshold: f64,
    /// Write per-step records into the episode log.
    pub log_steps: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            reward_mode: RewardMode::Shaped,
            reset_map_each_episode: false,
            checkpoint_every: 100,
            checkpoint_buffer: false,
            window: 100,
            final_window: 50,
            convergence_threshold: 0.8,
            log_steps: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_targets: usize,
    pub max_steps: u32,
    /// Worlds `compare` evaluates on when none is given.
    pub worlds: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_targets: 100,
            max_steps: 300,
            worlds: vec!["bundled:env1".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,
    /// `bundled:<name>` or a path to an environment file.
    pub world: String,
    pub out: PathBuf,
    pub robot: RobotConfig,
    pub reward: RewardParams,
    pub slam: SlamParams,
    pub agent: DdpgConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Full-size networks on the 5.5 m x 4 m environment.
    pub fn paper() -> Self {
        Self {
            preset: "paper".into(),
            seed: 0,
            world: "bundled:env1".into(),
            out: PathBuf::from("runs/paper"),
            robot: RobotConfig::default(),
            reward: RewardParams {
                max_steps: 1000,
                ..RewardParams::default()
            },
            slam: SlamParams::default(),
            agent: DdpgConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig {
                worlds: vec!["bundled:env1".into(), "bundled:env2".into(), "bundled:env3".into()],
                ..EvalConfig::default()
            },
        }
    }

    /// Small networks and a short schedule on a 3 m x 3 m world.
    pub fn desk() -> Self {
        Self {
            preset: "desk".into(),
            seed: 0,
            world: "bundled:desk_train".into(),
            out: PathBuf::from("runs/desk"),
            robot: RobotConfig::default(),
            reward: RewardParams {
                max_steps: 400,
                ..RewardParams::default()
            },
            slam: SlamParams::default(),
            agent: DdpgConfig {
                actor_hidden: vec![64, 64, 64],
                critic_hidden: vec![64, 64, 64],
                actor_lr: 1e-3,
                tau: 0.01,
                head_pre_l2: 0.01,
                ..DdpgConfig::default()
            },
            train: TrainConfig {
                episodes: 300,
                checkpoint_every: 50,
                ..TrainConfig::default()
            },
            eval: EvalConfig {
                worlds: vec!["bundled:desk_train".into(), "bundled:desk_unseen".into()],
                ..EvalConfig::default()
            },
        }
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(ConfigError::UnknownPreset(other.into())),
        }
    }

    /// Merges a TOML overlay over the preset it names (or `default_preset`).
    pub fn from_toml_str(text: &str, default_preset: &str) -> Result<Self, ConfigError> {
        let overlay: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let preset = match overlay.get("preset") {
            Some(toml::Value::String(p)) => p.clone(),
            Some(_) => return Err(ConfigError::Parse("preset must be a string".into())),
            None => default_preset.to_string(),
        };
        let base = Self::preset(&preset)?;
        let mut tree = toml::Table::try_from(&base).map_err(|e| ConfigError::Parse(e.to_string()))?;
        merge(&mut tree, overlay);
        let config: RunConfig = tree.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, default_preset: &str) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, default_preset)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.reward.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.agent.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.slam.grid.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let pf = &self.slam.pf;
        if pf.num_particles == 0 {
            return invalid("slam.pf.num_particles must be positive".into());
        }
        if !(pf.neff_fraction > 0.0 && pf.neff_fraction <= 1.0) {
            return invalid("slam.pf.neff_fraction must lie in (0, 1]".into());
        }
        if !(pf.sigma_hit > 0.0 && (0.0..1.0).contains(&pf.floor)) {
            return invalid("slam.pf.sigma_hit must be positive and floor in [0, 1)".into());
        }
        if !(self.slam.publish_threshold >= 0.0 && self.slam.publish_threshold <= 1.0) {
            return invalid("slam.publish_threshold must lie in [0, 1]".into());
        }
        if !(self.robot.radius > 0.0 && self.robot.dt > 0.0 && self.robot.lidar_noise >= 0.0) {
            return invalid("robot.radius and robot.dt must be positive, lidar_noise nonnegative".into());
        }
        if !self.robot.odom_noise.is_valid() {
            return invalid("robot.odom_noise alphas must be finite and nonnegative".into());
        }
        if self.train.window == 0 || self.train.final_window == 0 {
            return invalid("train.window and train.final_window must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.train.convergence_threshold) {
            return invalid("train.convergence_threshold must lie in [0, 1]".into());
        }
        if self.eval.max_steps == 0 {
            return invalid("eval.max_steps must be positive".into());
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
