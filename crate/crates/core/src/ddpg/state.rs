use serde::{Deserialize, Serialize};

use crate::geometry::{Point2, Pose};
use crate::robot::Action;
use crate::world::{LidarScan, BEAM_COUNT, RANGE_MAX};

/// Lidar beams, goal distance and bearing, last command.
pub const STATE_DIM: usize = BEAM_COUNT + 4;

/// Network input: normalized lidar ranges, goal polar coordinates in the
/// robot frame and the last executed command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    features: Vec<f64>,
}

impl StateVector {
    /// Ranges divided by the maximum range; goal distance by `diagonal`;
    /// bearing by pi; the command by the actuator limits.
    pub fn build(scan: &LidarScan, pose: &Pose, goal: Point2, last_action: Action, diagonal: f64) -> Self {
        let (distance, bearing) = pose.polar_to(goal);
        let mut features = Vec::with_capacity(STATE_DIM);
        features.extend(scan.ranges().iter().map(|r| r / RANGE_MAX));
        features.push(distance / diagonal);
        features.push(bearing / std::f64::consts::PI);
        features.extend(last_action.normalized());
        Self { features }
    }

    pub fn from_features(features: Vec<f64>) -> Option<Self> {
        (features.len() == STATE_DIM && features.iter().all(|f| f.is_finite())).then_some(Self { features })
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn lidar(&self) -> &[f64] {
        &self.features[..BEAM_COUNT]
    }

    /// Normalized goal distance and bearing.
    pub fn target(&self) -> [f64; 2] {
        [self.features[BEAM_COUNT], self.features[BEAM_COUNT + 1]]
    }

    pub fn last_action(&self) -> [f64; 2] {
        [self.features[BEAM_COUNT + 2], self.features[BEAM_COUNT + 3]]
    }
}
