use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point2, Pose};
use crate::world::World;

/// Cell size of the free-space raster used for start/goal sampling.
pub const FREE_SPACE_RESOLUTION: f64 = 0.05;
/// Attempts before `sample_episode_setup` gives up.
pub const MAX_SETUP_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum SetupError {
    #[error("world has no collision-free cell for radius {0}")]
    NoFreeSpace(f64),
    #[error("no connected start/goal pair after {0} attempts")]
    NoConnectedPair(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSetup {
    pub start: Pose,
    pub goal: Point2,
}

/// Ground-truth free-space raster with 8-connected component labels.
#[derive(Debug, Clone)]
pub struct FreeSpace {
    width: usize,
    height: usize,
    resolution: f64,
    labels: Vec<Option<u32>>,
    free: Vec<usize>,
}

impl FreeSpace {
    /// A cell is free when a disc of `radius` at its center does not collide.
    pub fn new(world: &World, radius: f64) -> Result<Self, SetupError> {
        let res = FREE_SPACE_RESOLUTION;
        let b = world.bounds();
        let width = (b.width / res).floor() as usize;
        let height = (b.height / res).floor() as usize;
        let center = |ix: usize, iy: usize| Point2::new((ix as f64 + 0.5) * res, (iy as f64 + 0.5) * res);
        let mut is_free = vec![false; width * height];
        for iy in 0..height {
            for ix in 0..width {
                is_free[iy * width + ix] = !world.collides(center(ix, iy), radius);
            }
        }
        let mut labels = vec![None; width * height];
        let mut next = 0u32;
        let mut stack = Vec::new();
        for seed in 0..width * height {
            if !is_free[seed] || labels[seed].is_some() {
                continue;
            }
            labels[seed] = Some(next);
            stack.push(seed);
            while let Some(c) = stack.pop() {
                let (cx, cy) = ((c % width) as isize, (c / width) as isize);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (cx + dx, cy + dy);
                        if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                            continue;
                        }
                        let n = ny as usize * width + nx as usize;
                        if is_free[n] && labels[n].is_none() {
                            labels[n] = Some(next);
                            stack.push(n);
                        }
                    }
                }
            }
            next += 1;
        }
        let free: Vec<usize> = (0..width * height).filter(|&i| is_free[i]).collect();
        if free.is_empty() {
            return Err(SetupError::NoFreeSpace(radius));
        }
        Ok(Self {
            width,
            height,
            resolution: res,
            labels,
            free,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn free_cells(&self) -> &[usize] {
        &self.free
    }

    pub fn cell_center(&self, cell: usize) -> Point2 {
        Point2::new(
            ((cell % self.width) as f64 + 0.5) * self.resolution,
            ((cell / self.width) as f64 + 0.5) * self.resolution,
        )
    }

    pub fn cell_of(&self, p: Point2) -> Option<usize> {
        let (ix, iy) = ((p.x / self.resolution).floor(), (p.y / self.resolution).floor());
        if ix < 0.0 || iy < 0.0 || ix as usize >= self.width || iy as usize >= self.height {
            return None;
        }
        Some(iy as usize * self.width + ix as usize)
    }

    pub fn label(&self, cell: usize) -> Option<u32> {
        self.labels[cell]
    }

    pub fn component_count(&self) -> usize {
        self.labels.iter().flatten().max().map_or(0, |m| *m as usize + 1)
    }

    pub fn connected(&self, a: Point2, b: Point2) -> bool {
        match (self.cell_of(a).and_then(|c| self.label(c)), self.cell_of(b).and_then(|c| self.label(c))) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        }
    }

    /// Start and goal at centers of uniformly drawn free cells, connected and
    /// farther apart than `min_distance`; heading uniform.
    pub fn sample_setup<R: Rng + ?Sized>(&self, min_distance: f64, rng: &mut R) -> Result<EpisodeSetup, SetupError> {
        for _ in 0..MAX_SETUP_ATTEMPTS {
            let s = self.free[rng.random_range(0..self.free.len())];
            let g = self.free[rng.random_range(0..self.free.len())];
            let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            if self.labels[s] != self.labels[g] {
                continue;
            }
            let (start, goal) = (self.cell_center(s), self.cell_center(g));
            if start.distance(goal) <= min_distance {
                continue;
            }
            return Ok(EpisodeSetup {
                start: Pose::new(start.x, start.y, heading),
                goal,
            });
        }
        Err(SetupError::NoConnectedPair(MAX_SETUP_ATTEMPTS))
    }
}
