use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OuParams {
    pub theta: f64,
    pub sigma: f64,
    /// Integration step of the process, in control steps.
    pub dt: f64,
}

impl Default for OuParams {
    fn default() -> Self {
        Self {
            theta: 0.15,
            sigma: 0.2,
            dt: 1.0,
        }
    }
}

impl OuParams {
    /// Stationary standard deviation of the continuous-time process.
    pub fn stationary_std(&self) -> f64 {
        self.sigma / (2.0 * self.theta).sqrt()
    }
}

/// Two-dimensional Ornstein-Uhlenbeck process reverting to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuNoise {
    params: OuParams,
    state: [f64; 2],
}

impl OuNoise {
    pub fn new(params: OuParams) -> Self {
        Self { params, state: [0.0; 2] }
    }

    pub fn with_state(params: OuParams, state: [f64; 2]) -> Self {
        Self { params, state }
    }

    pub fn params(&self) -> &OuParams {
        &self.params
    }

    pub fn state(&self) -> [f64; 2] {
        self.state
    }

    pub fn reset(&mut self) {
        self.state = [0.0; 2];
    }

    /// Advances one Euler-Maruyama step and returns the new state.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> [f64; 2] {
        let OuParams { theta, sigma, dt } = self.params;
        for x in &mut self.state {
            let z: f64 = StandardNormal.sample(rng);
            *x += -theta * *x * dt + sigma * dt.sqrt() * z;
        }
        self.state
    }
}
