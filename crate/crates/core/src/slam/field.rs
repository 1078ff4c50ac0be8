//! Likelihood-field observation model over an occupancy grid.

use crate::geometry::{Point2, Pose};
use crate::world::{LidarScan, RANGE_MAX};

use super::grid::{CellClass, OccupancyGrid};

/// Distance from every cell center to the nearest occupied cell center, and
/// the Gaussian beam model evaluated on it.
#[derive(Debug, Clone)]
pub struct LikelihoodField {
    origin: Point2,
    resolution: f64,
    width: usize,
    height: usize,
    distance: Vec<f64>,
    sigma_hit: f64,
    floor: f64,
    informative: bool,
    source_revision: u64,
}

impl LikelihoodField {
    pub fn from_grid(grid: &OccupancyGrid, sigma_hit: f64, floor: f64) -> Self {
        let (w, h) = (grid.width(), grid.height());
        let mut seeds = vec![false; w * h];
        let mut informative = false;
        for c in grid.cells() {
            if grid.class(c) == CellClass::Occupied {
                seeds[c.iy * w + c.ix] = true;
                informative = true;
            }
        }
        let sq = squared_edt(&seeds, w, h);
        let res = grid.resolution();
        Self {
            origin: grid.origin(),
            resolution: res,
            width: w,
            height: h,
            distance: sq.into_iter().map(|d| d.sqrt() * res).collect(),
            sigma_hit,
            floor,
            informative,
            source_revision: grid.update_counter(),
        }
    }

    /// False when the grid held no occupied cells.
    pub fn is_informative(&self) -> bool {
        self.informative
    }

    pub fn source_revision(&self) -> u64 {
        self.source_revision
    }

    /// Distance in meters from `p` to the nearest occupied cell, `None` off-grid.
    pub fn distance_at(&self, p: Point2) -> Option<f64> {
        let gx = ((p.x - self.origin.x) / self.resolution).floor();
        let gy = ((p.y - self.origin.y) / self.resolution).floor();
        if gx < 0.0 || gy < 0.0 || gx as usize >= self.width || gy as usize >= self.height {
            return None;
        }
        Some(self.distance[gy as usize * self.width + gx as usize])
    }

    /// Per-beam likelihood: floor plus a Gaussian in endpoint distance.
    pub fn beam_likelihood(&self, endpoint: Point2) -> f64 {
        match self.distance_at(endpoint) {
            Some(d) if d.is_finite() => {
                let g = (-0.5 * (d / self.sigma_hit).powi(2)).exp();
                (1.0 - self.floor) * g + self.floor
            }
            _ => self.floor,
        }
    }

    /// Log-likelihood of `scan` taken from `pose`. Max-range beams are skipped.
    pub fn scan_log_likelihood(&self, pose: &Pose, scan: &LidarScan) -> f64 {
        let origin = pose.position();
        scan.beams()
            .filter(|&(_, r)| r < RANGE_MAX)
            .map(|(b, r)| {
                let end = origin + Point2::from_polar(r, pose.heading + b);
                self.beam_likelihood(end).ln()
            })
            .sum()
    }
}

/// Exact squared Euclidean distance transform (in cell units) of a binary
/// seed image, by separable lower envelopes of parabolas.
pub fn squared_edt(seeds: &[bool], width: usize, height: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = seeds
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();
    let n = width.max(height);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..width {
        for y in 0..height {
            f[y] = grid[y * width + x];
        }
        edt_1d(&f[..height], &mut d[..height], &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = d[y];
        }
    }
    for y in 0..height {
        f[..width].copy_from_slice(&grid[y * width..(y + 1) * width]);
        edt_1d(&f[..width], &mut d[..width], &mut v, &mut z);
        grid[y * width..(y + 1) * width].copy_from_slice(&d[..width]);
    }
    grid
}

fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    // Only finite samples seed parabolas.
    let mut k: isize = -1;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            let p = v[k as usize];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k as usize] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k as usize] = q;
            z[k as usize] = s;
            z[k as usize + 1] = f64::INFINITY;
            break;
        }
    }
    if k < 0 {
        d.iter_mut().for_each(|x| *x = f64::INFINITY);
        return;
    }
    let mut j = 0usize;
    for (q, out) in d.iter_mut().enumerate() {
        while z[j + 1] < q as f64 {
            j += 1;
        }
        let p = v[j];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
}
