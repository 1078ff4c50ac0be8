//! Step rewards: the dense distance reward with sparse terminal values, and
//! its variant shaped by obstacle proximity in the current map.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::slam::FovCell;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("goal distance must be finite and nonnegative, got {0}")]
    NegativeDistance(f64),
    #[error("cell distance must be finite and nonnegative, got {0}")]
    NegativeCellDistance(f64),
    #[error("map confidence must lie in [0, 1], got {0}")]
    InvalidConfidence(f64),
    #[error("invalid reward parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    pub r_reached: f64,
    pub r_crashed: f64,
    /// Growth rate of the exponential distance penalty (not the discount).
    pub decay_rate: f64,
    /// Goal tolerance in meters.
    pub d_min: f64,
    /// Step limit per episode.
    pub max_steps: u32,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            r_reached: 100.0,
            r_crashed: -100.0,
            decay_rate: 0.35,
            d_min: 0.3,
            max_steps: 500,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.r_reached > 0.0 && self.r_crashed < 0.0) || !self.r_reached.is_finite() || !self.r_crashed.is_finite() {
            return Err(RewardError::InvalidParams("need r_reached > 0 > r_crashed"));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate.is_finite()) {
            return Err(RewardError::InvalidParams("decay_rate must be positive"));
        }
        if !(self.d_min > 0.0 && self.d_min.is_finite()) {
            return Err(RewardError::InvalidParams("d_min must be positive"));
        }
        if self.max_steps == 0 {
            return Err(RewardError::InvalidParams("max_steps must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    Running,
    Reached,
    Crashed,
    TimedOut,
}

impl StepOutcome {
    /// Classifies a step. Reaching the goal takes precedence over a
    /// simultaneous collision; both take precedence over the step limit.
    pub fn classify(goal_distance: f64, collided: bool, steps: u32, params: &RewardParams) -> Self {
        if goal_distance <= params.d_min {
            StepOutcome::Reached
        } else if collided {
            StepOutcome::Crashed
        } else if steps >= params.max_steps {
            StepOutcome::TimedOut
        } else {
            StepOutcome::Running
        }
    }

    pub fn is_terminal(self) -> bool {
        self != StepOutcome::Running
    }
}

/// Which reward the agent is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    #[default]
    Dense,
    Shaped,
}

pub fn dense_reward(d: f64, outcome: StepOutcome, params: &RewardParams) -> Result<f64, RewardError> {
    if !(d >= 0.0 && d.is_finite()) {
        return Err(RewardError::NegativeDistance(d));
    }
    Ok(match outcome {
        StepOutcome::Reached => params.r_reached,
        StepOutcome::Crashed | StepOutcome::TimedOut => params.r_crashed,
        StepOutcome::Running => 1.0 - (params.decay_rate * d).exp(),
    })
}

/// Mean of `exp(-distance)` over the perceived occupied cells, scaled by map
/// confidence. Zero when no occupied cell is perceived.
pub fn map_term(cells: &[FovCell], confidence: f64) -> Result<f64, RewardError> {
    if !(0.0..=1.0).contains(&confidence) {
        return Err(RewardError::InvalidConfidence(confidence));
    }
    if let Some(c) = cells.iter().find(|c| !(c.distance >= 0.0 && c.distance.is_finite())) {
        return Err(RewardError::NegativeCellDistance(c.distance));
    }
    if cells.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = cells.iter().map(|c| (-c.distance).exp()).sum();
    Ok(confidence * sum / cells.len() as f64)
}

pub fn shaped_reward(
    d: f64,
    outcome: StepOutcome,
    cells: &[FovCell],
    confidence: f64,
    params: &RewardParams,
) -> Result<f64, RewardError> {
    let dense = dense_reward(d, outcome, params)?;
    let penalty = map_term(cells, confidence)?;
    Ok(if outcome == StepOutcome::Running { dense - penalty } else { dense })
}

/// Every reward component of one step, logged for audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub dense: f64,
    pub map_term: f64,
    pub shaped: f64,
    pub confidence: f64,
    pub fov_occupied: usize,
}

impl RewardBreakdown {
    pub fn compute(
        d: f64,
        outcome: StepOutcome,
        cells: &[FovCell],
        confidence: f64,
        params: &RewardParams,
    ) -> Result<Self, RewardError> {
        Ok(Self {
            dense: dense_reward(d, outcome, params)?,
            map_term: map_term(cells, confidence)?,
            shaped: shaped_reward(d, outcome, cells, confidence, params)?,
            confidence,
            fov_occupied: cells.len(),
        })
    }

    pub fn for_mode(&self, mode: RewardMode) -> f64 {
        match mode {
            RewardMode::Dense => self.dense,
            RewardMode::Shaped => self.shaped,
        }
    }
}
