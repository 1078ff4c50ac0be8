//! Pose posterior as a weighted particle set: odometry-proposal prediction,
//! likelihood-field weighting and selective systematic resampling.
//!
//! `predict` draws each particle's noise from its own ChaCha stream: one
//! `u64` seed is taken from the caller's RNG per call and particle `i` uses
//! stream `i` of that seed. Per-particle work is therefore order independent.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::robot::{OdomNoise, OdometryReading};
use crate::world::LidarScan;

use super::field::LikelihoodField;
use super::grid::OccupancyGrid;

const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PfError {
    #[error("particle weights are not normalized (sum {0})")]
    NotNormalized(f64),
    #[error("a particle set needs at least one particle")]
    Empty,
    #[error("resampling threshold fraction must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("particle weight {0} is negative or non-finite")]
    InvalidWeight(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PfParams {
    pub num_particles: usize,
    /// Resample when `N_eff < neff_fraction * N`.
    pub neff_fraction: f64,
    /// Standard deviation of the likelihood-field Gaussian, meters.
    pub sigma_hit: f64,
    /// Uniform floor mixed into every beam likelihood.
    pub floor: f64,
}

impl Default for PfParams {
    fn default() -> Self {
        Self {
            num_particles: 30,
            neff_fraction: 0.5,
            sigma_hit: 0.1,
            floor: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub pose: Pose,
    pub weight: f64,
    /// Pose before the latest prediction.
    pub previous: Pose,
}

/// Outcome flags of one weighting step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WeightUpdate {
    /// The grid held no occupied cells, so weights were reset to uniform.
    pub uninformative: bool,
    /// Every likelihood underflowed; weights were reset to uniform.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    particles: Vec<Particle>,
    normalized: bool,
}

impl ParticleSet {
    /// `n` identical particles at `pose` with uniform weights.
    pub fn at_pose(n: usize, pose: Pose) -> Result<Self, PfError> {
        if n == 0 {
            return Err(PfError::Empty);
        }
        let w = 1.0 / n as f64;
        Ok(Self {
            particles: vec![
                Particle {
                    pose,
                    weight: w,
                    previous: pose,
                };
                n
            ],
            normalized: true,
        })
    }

    /// Wraps explicit particles; normalizes their weights.
    pub fn from_particles(particles: Vec<Particle>) -> Result<Self, PfError> {
        if particles.is_empty() {
            return Err(PfError::Empty);
        }
        if let Some(p) = particles.iter().find(|p| !(p.weight >= 0.0 && p.weight.is_finite())) {
            return Err(PfError::InvalidWeight(p.weight));
        }
        let mut set = Self {
            particles,
            normalized: false,
        };
        set.normalize();
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn weight_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    fn set_uniform(&mut self) {
        let w = 1.0 / self.particles.len() as f64;
        self.particles.iter_mut().for_each(|p| p.weight = w);
        self.normalized = true;
    }

    /// Rescales weights to sum to one; all-zero weights become uniform.
    pub fn normalize(&mut self) {
        let sum = self.weight_sum();
        if sum > 0.0 && sum.is_finite() {
            self.particles.iter_mut().for_each(|p| p.weight /= sum);
            self.normalized = true;
        } else {
            self.set_uniform();
        }
    }

    fn check_normalized(&self) -> Result<(), PfError> {
        let sum = self.weight_sum();
        if self.normalized && (sum - 1.0).abs() <= NORMALIZATION_TOL {
            Ok(())
        } else {
            Err(PfError::NotNormalized(sum))
        }
    }

    /// Propagates every particle through the sampled odometry motion model.
    pub fn predict<R: RngCore + ?Sized>(&mut self, odom: &OdometryReading, noise: &OdomNoise, rng: &mut R) {
        let base = rng.next_u64();
        for (i, p) in self.particles.iter_mut().enumerate() {
            let mut stream = ChaCha8Rng::seed_from_u64(base);
            stream.set_stream(i as u64);
            let sampled = odom.sample(noise, &mut stream);
            p.previous = p.pose;
            p.pose = sampled.apply(&p.pose);
        }
    }

    /// Multiplies each weight by the scan likelihood at the particle pose and
    /// renormalizes.
    pub fn update_weights(&mut self, scan: &LidarScan, field: &LikelihoodField) -> WeightUpdate {
        if !field.is_informative() {
            self.set_uniform();
            return WeightUpdate {
                uninformative: true,
                degenerate: false,
            };
        }
        let log_l: Vec<f64> = self
            .particles
            .iter()
            .map(|p| field.scan_log_likelihood(&p.pose, scan))
            .collect();
        let max = log_l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            self.set_uniform();
            return WeightUpdate {
                uninformative: false,
                degenerate: true,
            };
        }
        for (p, l) in self.particles.iter_mut().zip(&log_l) {
            p.weight *= (l - max).exp();
        }
        let sum = self.weight_sum();
        if !(sum > 0.0 && sum.is_finite()) {
            self.set_uniform();
            return WeightUpdate {
                uninformative: false,
                degenerate: true,
            };
        }
        self.normalize();
        WeightUpdate::default()
    }

    /// Weighting against a grid; builds the likelihood field on the fly.
    pub fn update_weights_from_grid(&mut self, scan: &LidarScan, grid: &OccupancyGrid, params: &PfParams) -> WeightUpdate {
        let field = LikelihoodField::from_grid(grid, params.sigma_hit, params.floor);
        self.update_weights(scan, &field)
    }

    /// `1 / sum(w^2)`.
    pub fn effective_sample_size(&self) -> Result<f64, PfError> {
        self.check_normalized()?;
        let sum_sq: f64 = self.particles.iter().map(|p| p.weight * p.weight).sum();
        Ok(1.0 / sum_sq)
    }

    /// Systematic resampling when `N_eff < threshold_fraction * N`. Returns
    /// whether resampling happened.
    pub fn resample_if_needed<R: Rng + ?Sized>(&mut self, threshold_fraction: f64, rng: &mut R) -> Result<bool, PfError> {
        if !(threshold_fraction > 0.0 && threshold_fraction <= 1.0) {
            return Err(PfError::InvalidThreshold(threshold_fraction));
        }
        let n_eff = self.effective_sample_size()?;
        let n = self.particles.len();
        if n_eff >= threshold_fraction * n as f64 {
            return Ok(false);
        }
        let offsets = systematic_indices(&self.particles.iter().map(|p| p.weight).collect::<Vec<_>>(), rng);
        let w = 1.0 / n as f64;
        self.particles = offsets
            .into_iter()
            .map(|i| Particle {
                weight: w,
                ..self.particles[i]
            })
            .collect();
        self.normalized = true;
        Ok(true)
    }

    /// Weighted mean position and circular-mean heading.
    pub fn estimate_pose(&self) -> Result<Pose, PfError> {
        self.check_normalized()?;
        let (mut x, mut y, mut s, mut c) = (0.0, 0.0, 0.0, 0.0);
        for p in &self.particles {
            x += p.weight * p.pose.x;
            y += p.weight * p.pose.y;
            s += p.weight * p.pose.heading.sin();
            c += p.weight * p.pose.heading.cos();
        }
        Ok(Pose::new(x, y, s.atan2(c)))
    }
}

/// Low-variance resampling: one uniform offset, `N` evenly spaced pointers.
pub fn systematic_indices<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let step = 1.0 / n as f64;
    let start = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(n);
    let mut cumulative = weights[0];
    let mut i = 0;
    for k in 0..n {
        let u = start + k as f64 * step;
        while u > cumulative && i + 1 < n {
            i += 1;
            cumulative += weights[i];
        }
        out.push(i);
    }
    out
}
