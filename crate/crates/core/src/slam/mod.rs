//! Online SLAM: particle-filter localization over a single shared occupancy
//! grid, plus the gated map snapshot that the reward reads.

pub mod field;
pub mod grid;
pub mod pf;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Pose;
use crate::robot::{OdomNoise, OdometryReading};
use crate::world::{Bounds, LidarScan, RANGE_MAX};

pub use field::LikelihoodField;
pub use grid::{CellClass, CellIndex, ConfidenceMode, FovCell, GridError, GridParams, OccupancyGrid};
pub use pf::{Particle, ParticleSet, PfError, PfParams, WeightUpdate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlamParams {
    pub pf: PfParams,
    pub grid: GridParams,
    pub confidence_mode: ConfidenceMode,
    /// Minimum confidence change that republishes the map snapshot.
    pub publish_threshold: f64,
}

impl Default for SlamParams {
    fn default() -> Self {
        Self {
            pf: PfParams::default(),
            grid: GridParams::default(),
            confidence_mode: ConfidenceMode::default(),
            publish_threshold: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SlamStats {
    pub steps: u64,
    pub resamples: u64,
    pub degenerate_updates: u64,
    pub uninformative_updates: u64,
    /// Scans dropped because the estimate left the grid.
    pub skipped_integrations: u64,
    pub publications: u64,
}

/// Obstacle cells the robot currently perceives in the published map, and
/// that map's confidence over the same field of view.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardView {
    pub cells: Vec<FovCell>,
    pub confidence: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Slam {
    params: SlamParams,
    particles: ParticleSet,
    grid: OccupancyGrid,
    /// Cache keyed on the grid revision; rebuilt on demand after loading.
    #[serde(skip)]
    field: Option<LikelihoodField>,
    published: Arc<OccupancyGrid>,
    stats: SlamStats,
}

impl Slam {
    pub fn new(bounds: Bounds, start: Pose, params: SlamParams) -> Result<Self, SlamError> {
        let grid = OccupancyGrid::covering(bounds, params.grid)?;
        let particles = ParticleSet::at_pose(params.pf.num_particles, start)?;
        Ok(Self {
            params,
            particles,
            published: Arc::new(grid.clone()),
            grid,
            field: None,
            stats: SlamStats::default(),
        })
    }

    pub fn params(&self) -> &SlamParams {
        &self.params
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    /// The last published snapshot.
    pub fn published(&self) -> Arc<OccupancyGrid> {
        Arc::clone(&self.published)
    }

    pub fn particles(&self) -> &ParticleSet {
        &self.particles
    }

    pub fn stats(&self) -> SlamStats {
        self.stats
    }

    /// Collapses the particle set onto a known pose; the map is kept.
    pub fn reset_pose(&mut self, pose: Pose) {
        self.particles = ParticleSet::at_pose(self.particles.len(), pose).expect("particle count is nonzero");
    }

    /// Forgets the map and the published snapshot.
    pub fn reset_map(&mut self) {
        self.grid = self.grid.cleared();
        self.published = Arc::new(self.grid.clone());
        self.field = None;
    }

    /// Current pose estimate.
    pub fn estimate(&self) -> Pose {
        self.particles.estimate_pose().expect("particle set stays normalized")
    }

    /// One filter cycle: predict with `odom`, weight against the map built so
    /// far, resample if degenerate, then integrate `scan` at the new estimate.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        odom: &OdometryReading,
        noise: &OdomNoise,
        scan: &LidarScan,
        rng: &mut R,
    ) -> Pose {
        self.stats.steps += 1;
        self.particles.predict(odom, noise, rng);
        let revision = self.grid.update_counter();
        if self.field.as_ref().is_none_or(|f| f.source_revision() != revision) {
            self.field = Some(LikelihoodField::from_grid(&self.grid, self.params.pf.sigma_hit, self.params.pf.floor));
        }
        let field = self.field.as_ref().expect("field built above");
        let update = self.particles.update_weights(scan, field);
        self.stats.degenerate_updates += update.degenerate as u64;
        self.stats.uninformative_updates += update.uninformative as u64;
        if self
            .particles
            .resample_if_needed(self.params.pf.neff_fraction, rng)
            .expect("weights normalized by update")
        {
            self.stats.resamples += 1;
        }
        let estimate = self.estimate();
        if self.grid.integrate_scan(&estimate, scan).is_err() {
            self.stats.skipped_integrations += 1;
        }
        estimate
    }

    /// Mapping with a known pose; the particle set is untouched.
    pub fn integrate_known_pose(&mut self, pose: &Pose, scan: &LidarScan) -> Result<(), GridError> {
        self.grid.integrate_scan(pose, scan)
    }

    /// Confidence of `grid` over the half-disc ahead of `pose`; 0.5 when no
    /// cell of the grid falls inside it.
    pub fn fov_confidence(grid: &OccupancyGrid, pose: &Pose, mode: ConfidenceMode) -> f64 {
        grid.map_posterior_confidence(&grid.fov_cells(pose, RANGE_MAX), mode)
            .unwrap_or(0.5)
    }

    /// Republishes the live map when its confidence at `pose` differs from the
    /// snapshot's by at least the threshold, then reads the snapshot.
    pub fn reward_view(&mut self, pose: &Pose) -> RewardView {
        let mode = self.params.confidence_mode;
        let live = Self::fov_confidence(&self.grid, pose, mode);
        let mut published = Self::fov_confidence(&self.published, pose, mode);
        if grid::should_publish(published, live, self.params.publish_threshold) {
            self.published = Arc::new(self.grid.clone());
            self.stats.publications += 1;
            published = live;
        }
        RewardView {
            cells: self.published.occupied_cells_in_fov(pose, RANGE_MAX),
            confidence: published,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SlamError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Particles(#[from] PfError),
}
