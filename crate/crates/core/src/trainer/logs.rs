use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::geometry::{Point2, Pose};
use crate::reward::StepOutcome;

use super::episode::{EpisodeRecord, StepRecord};

/// Version of the newline-delimited episode log. Bump on any field change.
pub const EPISODE_LOG_SCHEMA: u32 = 1;

/// One line of the training episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub schema: u32,
    /// Zero-based episode index.
    pub episode: u32,
    pub outcome: StepOutcome,
    pub steps: u32,
    /// Environment steps including this episode.
    pub cumulative_steps: u64,
    pub start: Pose,
    pub goal: Point2,
    /// Sum of the rewards the agent was trained on.
    pub total_reward: f64,
    pub dense_return: f64,
    pub map_term_sum: f64,
    pub final_pose_error: f64,
    pub updates: u32,
    pub mean_critic_loss: Option<f64>,
    /// Over the trailing window ending at this episode.
    pub rolling_success: f64,
    pub rolling_collision: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_records: Option<Vec<StepRecord>>,
}

/// Rows `t, x, y, heading, v, omega, reward`; the first row is the start pose
/// with zero command and reward.
pub fn write_trajectory_csv<W: Write>(record: &EpisodeRecord, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x", "y", "heading", "v", "omega", "reward"])?;
    let start = record.trajectory.first().copied().unwrap_or(record.setup.start);
    w.serialize((0.0, start.x, start.y, start.heading, 0.0, 0.0, 0.0))?;
    for s in &record.step_records {
        w.serialize((s.t, s.pose.x, s.pose.y, s.pose.heading, s.action.v, s.action.omega, s.reward_used))?;
    }
    w.flush()?;
    Ok(())
}

pub fn trajectory_csv(record: &EpisodeRecord) -> String {
    let mut buf = Vec::new();
    write_trajectory_csv(record, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is utf-8")
}
