//! Differential-drive kinematics and the noisy odometry channel.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_difference, normalize_angle, Pose};

/// Linear velocity limit, m/s. The sigmoid head cannot command reverse.
pub const V_MAX: f64 = 0.25;
/// Angular velocity limit, rad/s.
pub const OMEGA_MAX: f64 = 1.0;
/// Control period at 10 Hz.
pub const DEFAULT_DT: f64 = 0.1;

/// Translations shorter than this are treated as pure rotations.
const MIN_TRANSLATION: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum RobotError {
    #[error("non-finite velocity command ({v}, {omega})")]
    NonFiniteAction { v: f64, omega: f64 },
    #[error("integration step must be positive, got {0}")]
    InvalidDt(f64),
}

/// Velocity command: linear `v` (m/s) and angular `omega` (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub v: f64,
    pub omega: f64,
}

impl Action {
    pub const fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }

    /// Saturates to the actuator limits.
    pub fn clamped(self) -> Self {
        Self {
            v: self.v.clamp(0.0, V_MAX),
            omega: self.omega.clamp(-OMEGA_MAX, OMEGA_MAX),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.omega.is_finite()
    }

    /// Command expressed in unit ranges: `(v / V_MAX, omega / OMEGA_MAX)`.
    pub fn normalized(&self) -> [f64; 2] {
        [self.v / V_MAX, self.omega / OMEGA_MAX]
    }

    pub fn from_normalized(u: f64, w: f64) -> Self {
        Self::new(u * V_MAX, w * OMEGA_MAX)
    }
}

/// True platform state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
    pub omega: f64,
}

impl RobotState {
    /// At rest at `pose`.
    pub fn at(pose: Pose) -> Self {
        Self {
            x: pose.x,
            y: pose.y,
            heading: normalize_angle(pose.heading),
            v: 0.0,
            omega: 0.0,
        }
    }

    pub fn pose(&self) -> Pose {
        Pose {
            x: self.x,
            y: self.y,
            heading: self.heading,
        }
    }
}

/// Explicit-Euler unicycle step with saturated commands.
pub fn step(state: &RobotState, action: Action, dt: f64) -> Result<RobotState, RobotError> {
    if !action.is_finite() {
        return Err(RobotError::NonFiniteAction {
            v: action.v,
            omega: action.omega,
        });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(RobotError::InvalidDt(dt));
    }
    let cmd = action.clamped();
    let (s, c) = state.heading.sin_cos();
    Ok(RobotState {
        x: state.x + cmd.v * c * dt,
        y: state.y + cmd.v * s * dt,
        heading: normalize_angle(state.heading + cmd.omega * dt),
        v: cmd.v,
        omega: cmd.omega,
    })
}

/// Four-parameter odometry noise model.
///
/// - `alpha1`: rotation noise from rotation
/// - `alpha2`: rotation noise from translation
/// - `alpha3`: translation noise from translation
/// - `alpha4`: translation noise from rotation
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdomNoise {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
}

impl Default for OdomNoise {
    fn default() -> Self {
        Self {
            alpha1: 0.05,
            alpha2: 0.05,
            alpha3: 0.01,
            alpha4: 0.01,
        }
    }
}

impl OdomNoise {
    pub const NONE: OdomNoise = OdomNoise {
        alpha1: 0.0,
        alpha2: 0.0,
        alpha3: 0.0,
        alpha4: 0.0,
    };

    pub fn is_valid(&self) -> bool {
        [self.alpha1, self.alpha2, self.alpha3, self.alpha4]
            .iter()
            .all(|a| a.is_finite() && *a >= 0.0)
    }
}

/// Relative motion between two poses as rotate / translate / rotate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OdometryReading {
    pub delta_rot1: f64,
    pub delta_trans: f64,
    pub delta_rot2: f64,
}

impl OdometryReading {
    /// Exact decomposition of the motion `prev -> curr`.
    pub fn between(prev: &Pose, curr: &Pose) -> Self {
        let dx = curr.x - prev.x;
        let dy = curr.y - prev.y;
        let delta_trans = dx.hypot(dy);
        let delta_rot1 = if delta_trans < MIN_TRANSLATION {
            0.0
        } else {
            angle_difference(dy.atan2(dx), prev.heading)
        };
        let delta_rot2 = angle_difference(curr.heading - prev.heading, delta_rot1);
        Self {
            delta_rot1,
            delta_trans,
            delta_rot2,
        }
    }

    /// Draws a perturbed copy under the odometry motion model. Variances are
    /// `a1 r1^2 + a2 t^2`, `a3 t^2 + a4 (r1^2 + r2^2)` and `a1 r2^2 + a2 t^2`.
    pub fn sample<R: Rng + ?Sized>(&self, noise: &OdomNoise, rng: &mut R) -> Self {
        let r1 = self.delta_rot1;
        let t = self.delta_trans;
        let r2 = self.delta_rot2;
        let mut draw = |variance: f64| -> f64 {
            let z: f64 = StandardNormal.sample(rng);
            variance.max(0.0).sqrt() * z
        };
        let rot1_var = noise.alpha1 * r1 * r1 + noise.alpha2 * t * t;
        let trans_var = noise.alpha3 * t * t + noise.alpha4 * (r1 * r1 + r2 * r2);
        let rot2_var = noise.alpha1 * r2 * r2 + noise.alpha2 * t * t;
        let n1 = draw(rot1_var);
        let nt = draw(trans_var);
        let n2 = draw(rot2_var);
        Self {
            delta_rot1: normalize_angle(r1 - n1),
            delta_trans: (t - nt).max(0.0),
            delta_rot2: normalize_angle(r2 - n2),
        }
    }

    /// Applies the motion to `pose`.
    pub fn apply(&self, pose: &Pose) -> Pose {
        let theta = pose.heading + self.delta_rot1;
        Pose::new(
            pose.x + self.delta_trans * theta.cos(),
            pose.y + self.delta_trans * theta.sin(),
            theta + self.delta_rot2,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.delta_rot1.is_finite() && self.delta_trans.is_finite() && self.delta_rot2.is_finite()
    }
}

/// Encoder reading for the true motion `prev -> curr`, corrupted by `noise`.
pub fn odometry_between<R: Rng + ?Sized>(
    prev: &RobotState,
    curr: &RobotState,
    noise: &OdomNoise,
    rng: &mut R,
) -> OdometryReading {
    OdometryReading::between(&prev.pose(), &curr.pose()).sample(noise, rng)
}
