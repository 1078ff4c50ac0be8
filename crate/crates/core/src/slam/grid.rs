//! Log-odds occupancy grid built by mapping with known poses, plus the map
//! confidence measures used by reward shaping.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point2, Pose};
use crate::world::{Bounds, LidarScan, RANGE_MAX};

/// Hit endpoints are pushed this far past the surface so that they land in
/// the cell behind it.
const ENDPOINT_NUDGE: f64 = 1e-6;
/// Cells of unobserved padding around the world bounds.
const MARGIN_CELLS: usize = 2;
pub const GRID_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("pose ({x}, {y}) lies outside the grid extent")]
    PoseOutsideGrid { x: f64, y: f64 },
    #[error("confidence requested over an empty cell set")]
    EmptyCellSet,
    #[error("invalid grid parameters: {0}")]
    InvalidParams(String),
    #[error("malformed grid file: {0}")]
    Malformed(String),
    #[error("grid file I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Inverse sensor model and discretization constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridParams {
    /// Meters per cell.
    pub resolution: f64,
    /// Log-odds added to a hit endpoint cell.
    pub l_occ: f64,
    /// Log-odds added to every cell a beam passes through.
    pub l_free: f64,
    /// Symmetric log-odds clamp; `f64::INFINITY` disables clamping.
    pub l_max: f64,
    /// Cells with probability above this are occupied.
    pub occupied_threshold: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            resolution: 0.05,
            l_occ: 0.85,
            l_free: -0.4,
            l_max: 10.0,
            occupied_threshold: 0.65,
        }
    }
}

impl GridParams {
    pub fn validate(&self) -> Result<(), GridError> {
        let bad = |m: &str| Err(GridError::InvalidParams(m.to_string()));
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return bad("resolution must be positive");
        }
        if !(self.l_occ > 0.0) || !(self.l_free < 0.0) {
            return bad("l_occ must be positive and l_free negative");
        }
        if !(self.l_max > 0.0) {
            return bad("l_max must be positive");
        }
        if !(self.occupied_threshold > 0.5 && self.occupied_threshold < 1.0) {
            return bad("occupied_threshold must lie in (0.5, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub ix: usize,
    pub iy: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellClass {
    Occupied,
    Free,
    Unknown,
}

/// How per-cell certainties are combined into one map confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMode {
    /// Geometric mean of per-cell certainties.
    #[default]
    GeometricMean,
    /// Literal product; underflows towards zero on large cell sets.
    Product,
}

/// An occupied cell in the robot's field of view and its center distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FovCell {
    pub cell: CellIndex,
    pub distance: f64,
}

pub fn probability_from_log_odds(l: f64) -> f64 {
    1.0 / (1.0 + (-l).exp())
}

pub fn log_odds_from_probability(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Combines per-cell certainties (each in [0.5, 1]) into one confidence.
pub fn confidence_from_certainties<I>(certainties: I, mode: ConfidenceMode) -> Result<f64, GridError>
where
    I: IntoIterator<Item = f64>,
{
    let mut count = 0usize;
    let value = match mode {
        ConfidenceMode::GeometricMean => {
            let mut log_sum = 0.0;
            for c in certainties {
                log_sum += c.ln();
                count += 1;
            }
            (log_sum / count.max(1) as f64).exp()
        }
        ConfidenceMode::Product => {
            let mut prod = 1.0;
            for c in certainties {
                prod *= c;
                count += 1;
            }
            prod
        }
    };
    if count == 0 {
        return Err(GridError::EmptyCellSet);
    }
    Ok(value.clamp(0.0, 1.0))
}

/// Publication gate: true iff the confidence moved by at least `threshold`.
pub fn should_publish(last_published: f64, current: f64, threshold: f64) -> bool {
    (current - last_published).abs() >= threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    params: GridParams,
    origin: Point2,
    width: usize,
    height: usize,
    log_odds: Vec<f64>,
    observed: Vec<bool>,
    update_counter: u64,
}

impl OccupancyGrid {
    /// All-unknown grid whose cell (0, 0) has its lower-left corner at `origin`.
    pub fn new(origin: Point2, width: usize, height: usize, params: GridParams) -> Result<Self, GridError> {
        params.validate()?;
        if width == 0 || height == 0 {
            return Err(GridError::InvalidParams("grid must have at least one cell".into()));
        }
        Ok(Self {
            params,
            origin,
            width,
            height,
            log_odds: vec![0.0; width * height],
            observed: vec![false; width * height],
            update_counter: 0,
        })
    }

    /// Grid covering `bounds` plus a small margin so wall hits stay on the map.
    pub fn covering(bounds: Bounds, params: GridParams) -> Result<Self, GridError> {
        params.validate()?;
        let margin = MARGIN_CELLS as f64 * params.resolution;
        let cells = |extent: f64| ((extent + 2.0 * margin) / params.resolution - 1e-9).ceil() as usize;
        Self::new(
            Point2::new(-margin, -margin),
            cells(bounds.width),
            cells(bounds.height),
            params,
        )
    }

    /// All-unknown grid with the same geometry and parameters.
    pub fn cleared(&self) -> Self {
        Self {
            params: self.params,
            origin: self.origin,
            width: self.width,
            height: self.height,
            log_odds: vec![0.0; self.log_odds.len()],
            observed: vec![false; self.observed.len()],
            update_counter: 0,
        }
    }

    pub fn params(&self) -> &GridParams {
        &self.params
    }

    pub fn origin(&self) -> Point2 {
        self.origin
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.params.resolution
    }

    pub fn update_counter(&self) -> u64 {
        self.update_counter
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn flat(&self, c: CellIndex) -> usize {
        c.iy * self.width + c.ix
    }

    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.height).flat_map(move |iy| (0..self.width).map(move |ix| CellIndex { ix, iy }))
    }

    /// Continuous grid coordinates of a world point.
    fn to_grid(&self, p: Point2) -> (f64, f64) {
        (
            (p.x - self.origin.x) / self.params.resolution,
            (p.y - self.origin.y) / self.params.resolution,
        )
    }

    pub fn cell_of(&self, p: Point2) -> Option<CellIndex> {
        let (gx, gy) = self.to_grid(p);
        let (ix, iy) = (gx.floor(), gy.floor());
        if ix >= 0.0 && iy >= 0.0 && (ix as usize) < self.width && (iy as usize) < self.height {
            Some(CellIndex {
                ix: ix as usize,
                iy: iy as usize,
            })
        } else {
            None
        }
    }

    pub fn cell_center(&self, c: CellIndex) -> Point2 {
        Point2::new(
            self.origin.x + (c.ix as f64 + 0.5) * self.params.resolution,
            self.origin.y + (c.iy as f64 + 0.5) * self.params.resolution,
        )
    }

    pub fn log_odds(&self, c: CellIndex) -> f64 {
        self.log_odds[self.flat(c)]
    }

    pub fn probability(&self, c: CellIndex) -> f64 {
        probability_from_log_odds(self.log_odds(c))
    }

    pub fn is_observed(&self, c: CellIndex) -> bool {
        self.observed[self.flat(c)]
    }

    pub fn class(&self, c: CellIndex) -> CellClass {
        if !self.is_observed(c) {
            CellClass::Unknown
        } else if self.probability(c) > self.params.occupied_threshold {
            CellClass::Occupied
        } else {
            CellClass::Free
        }
    }

    /// `max(p, 1 - p)`, with unknown cells at 0.5.
    pub fn certainty(&self, c: CellIndex) -> f64 {
        if !self.is_observed(c) {
            return 0.5;
        }
        let p = self.probability(c);
        p.max(1.0 - p)
    }

    pub fn has_occupied(&self) -> bool {
        self.cells().any(|c| self.class(c) == CellClass::Occupied)
    }

    /// Adds `delta` to a cell's log-odds, honoring the clamp.
    pub fn add_log_odds(&mut self, c: CellIndex, delta: f64) {
        let i = self.flat(c);
        let l_max = self.params.l_max;
        self.log_odds[i] = (self.log_odds[i] + delta).clamp(-l_max, l_max);
        self.observed[i] = true;
    }

    /// Overwrites a cell's probability (marks it observed).
    pub fn set_probability(&mut self, c: CellIndex, p: f64) {
        let i = self.flat(c);
        let l_max = self.params.l_max;
        self.log_odds[i] = log_odds_from_probability(p).clamp(-l_max, l_max);
        self.observed[i] = true;
    }

    /// Cells crossed by the segment `start -> end`, in order, the end cell
    /// last. Cells outside the grid are skipped.
    pub fn traverse(&self, start: Point2, end: Point2) -> Vec<CellIndex> {
        let (sx, sy) = self.to_grid(start);
        let (ex, ey) = self.to_grid(end);
        let (mut ix, mut iy) = (sx.floor() as i64, sy.floor() as i64);
        let (end_ix, end_iy) = (ex.floor() as i64, ey.floor() as i64);
        let (dx, dy) = (ex - sx, ey - sy);
        let step_x = if dx > 0.0 { 1 } else { -1 };
        let step_y = if dy > 0.0 { 1 } else { -1 };
        let t_delta_x = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
        let t_delta_y = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
        let mut t_max_x = if dx > 0.0 {
            (ix as f64 + 1.0 - sx) / dx
        } else if dx < 0.0 {
            (sx - ix as f64) / -dx
        } else {
            f64::INFINITY
        };
        let mut t_max_y = if dy > 0.0 {
            (iy as f64 + 1.0 - sy) / dy
        } else if dy < 0.0 {
            (sy - iy as f64) / -dy
        } else {
            f64::INFINITY
        };
        let steps = (end_ix - ix).unsigned_abs() + (end_iy - iy).unsigned_abs();
        let mut out = Vec::with_capacity(steps as usize + 1);
        let mut push = |ix: i64, iy: i64| {
            if ix >= 0 && iy >= 0 && (ix as usize) < self.width && (iy as usize) < self.height {
                out.push(CellIndex {
                    ix: ix as usize,
                    iy: iy as usize,
                });
            }
        };
        push(ix, iy);
        for _ in 0..steps {
            let x_done = ix == end_ix;
            let y_done = iy == end_iy;
            if !x_done && (y_done || t_max_x < t_max_y) {
                t_max_x += t_delta_x;
                ix += step_x;
            } else {
                t_max_y += t_delta_y;
                iy += step_y;
            }
            push(ix, iy);
        }
        out
    }

    /// Updates the map with one scan taken from a known `pose`.
    ///
    /// Every cell a beam passes through receives `l_free`; the endpoint cell
    /// receives `l_occ` unless the beam returned max range.
    pub fn integrate_scan(&mut self, pose: &Pose, scan: &LidarScan) -> Result<(), GridError> {
        let origin = pose.position();
        if self.cell_of(origin).is_none() {
            return Err(GridError::PoseOutsideGrid {
                x: pose.x,
                y: pose.y,
            });
        }
        let (l_occ, l_free) = (self.params.l_occ, self.params.l_free);
        for (bearing, range) in scan.beams() {
            let hit = range < RANGE_MAX;
            let reach = if hit { range + ENDPOINT_NUDGE } else { range };
            let end = origin + Point2::from_polar(reach, pose.heading + bearing);
            let cells = self.traverse(origin, end);
            let end_cell = self.cell_of(end);
            for c in cells {
                if hit && Some(c) == end_cell {
                    self.add_log_odds(c, l_occ);
                } else {
                    self.add_log_odds(c, l_free);
                }
            }
        }
        self.update_counter += 1;
        Ok(())
    }

    /// Combined certainty over `cells`.
    pub fn map_posterior_confidence(&self, cells: &[CellIndex], mode: ConfidenceMode) -> Result<f64, GridError> {
        confidence_from_certainties(cells.iter().map(|&c| self.certainty(c)), mode)
    }

    /// Every cell whose center lies in the half-disc of `range` ahead of `pose`.
    pub fn fov_cells(&self, pose: &Pose, range: f64) -> Vec<CellIndex> {
        let mut out = Vec::new();
        self.for_each_fov_cell(pose, range, |c, _| out.push(c));
        out
    }

    /// Occupied cells in the half-disc of `range` ahead of `pose`, with
    /// center distances.
    pub fn occupied_cells_in_fov(&self, pose: &Pose, range: f64) -> Vec<FovCell> {
        let mut out = Vec::new();
        self.for_each_fov_cell(pose, range, |cell, distance| {
            if self.class(cell) == CellClass::Occupied {
                out.push(FovCell { cell, distance });
            }
        });
        out
    }

    /// Occupied cells within `range` of `p` in every direction.
    pub fn occupied_cells_within(&self, p: Point2, range: f64) -> Vec<FovCell> {
        let mut out = Vec::new();
        self.for_each_cell_near(p, None, range, |cell, distance| {
            if self.class(cell) == CellClass::Occupied {
                out.push(FovCell { cell, distance });
            }
        });
        out
    }

    fn for_each_fov_cell(&self, pose: &Pose, range: f64, f: impl FnMut(CellIndex, f64)) {
        self.for_each_cell_near(pose.position(), Some(pose.direction()), range, f)
    }

    /// Cells whose centers lie within `range` of `p` and, given `dir`, not
    /// behind it.
    fn for_each_cell_near(&self, p: Point2, dir: Option<Point2>, range: f64, mut f: impl FnMut(CellIndex, f64)) {
        let res = self.params.resolution;
        let lo = |v: f64, o: f64| (((v - range - o) / res).floor().max(0.0)) as usize;
        let hi = |v: f64, o: f64, n: usize| (((v + range - o) / res).ceil().max(0.0) as usize).min(n);
        let (x0, x1) = (lo(p.x, self.origin.x), hi(p.x, self.origin.x, self.width));
        let (y0, y1) = (lo(p.y, self.origin.y), hi(p.y, self.origin.y, self.height));
        for iy in y0..y1 {
            for ix in x0..x1 {
                let cell = CellIndex { ix, iy };
                let rel = self.cell_center(cell) - p;
                let distance = rel.norm();
                if distance <= range && dir.is_none_or(|d| rel.dot(d) >= 0.0) {
                    f(cell, distance);
                }
            }
        }
    }

    /// Text export: one probability per cell, row-major from the bottom row,
    /// `-1` for unknown cells.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.len() * 8 + 64);
        s.push_str("# mapnav occupancy grid\n");
        s.push_str(&format!("format {GRID_FORMAT}\nsize {} {}\n", self.width, self.height));
        for iy in 0..self.height {
            let row: Vec<String> = (0..self.width)
                .map(|ix| {
                    let c = CellIndex { ix, iy };
                    if self.is_observed(c) {
                        format!("{}", self.probability(c))
                    } else {
                        "-1".to_string()
                    }
                })
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn metadata(&self, timestamp: Option<String>) -> GridMetadata {
        GridMetadata {
            format: GRID_FORMAT,
            resolution: self.params.resolution,
            origin: [self.origin.x, self.origin.y],
            width: self.width,
            height: self.height,
            l_occ: self.params.l_occ,
            l_free: self.params.l_free,
            l_max: self.params.l_max,
            occupied_threshold: self.params.occupied_threshold,
            timestamp,
        }
    }

    /// Rebuilds a grid from its text export and metadata sidecar.
    pub fn from_text(text: &str, meta: &GridMetadata) -> Result<Self, GridError> {
        if meta.format != GRID_FORMAT {
            return Err(GridError::Malformed(format!("unsupported format {}", meta.format)));
        }
        let params = GridParams {
            resolution: meta.resolution,
            l_occ: meta.l_occ,
            l_free: meta.l_free,
            l_max: meta.l_max,
            occupied_threshold: meta.occupied_threshold,
        };
        let mut grid = Self::new(Point2::new(meta.origin[0], meta.origin[1]), meta.width, meta.height, params)?;
        let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let mut header = |key: &str| -> Result<Vec<usize>, GridError> {
            let line = lines.next().ok_or_else(|| GridError::Malformed(format!("missing {key}")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(GridError::Malformed(format!("expected '{key}' line")));
            }
            parts
                .map(|p| p.parse().map_err(|_| GridError::Malformed(format!("bad {key} value"))))
                .collect()
        };
        if header("format")? != [GRID_FORMAT as usize] {
            return Err(GridError::Malformed("format mismatch".into()));
        }
        if header("size")? != [meta.width, meta.height] {
            return Err(GridError::Malformed("size disagrees with metadata".into()));
        }
        let mut rows = 0;
        for (iy, line) in lines.enumerate() {
            if iy >= meta.height {
                return Err(GridError::Malformed("too many rows".into()));
            }
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| GridError::Malformed(format!("bad value '{v}'"))))
                .collect::<Result<_, _>>()?;
            if values.len() != meta.width {
                return Err(GridError::Malformed(format!("row {iy} has {} values", values.len())));
            }
            for (ix, p) in values.into_iter().enumerate() {
                if p == -1.0 {
                    continue;
                }
                if !(p > 0.0 && p < 1.0) {
                    return Err(GridError::Malformed(format!("probability {p} out of range")));
                }
                grid.set_probability(CellIndex { ix, iy }, p);
            }
            rows += 1;
        }
        if rows != meta.height {
            return Err(GridError::Malformed(format!("expected {} rows, found {rows}", meta.height)));
        }
        Ok(grid)
    }

    pub fn load(grid_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<Self, GridError> {
        let text = std::fs::read_to_string(grid_path)?;
        let meta_text = std::fs::read_to_string(meta_path)?;
        let meta: GridMetadata =
            serde_json::from_str(&meta_text).map_err(|e| GridError::Malformed(e.to_string()))?;
        Self::from_text(&text, &meta)
    }
}

/// Sidecar describing an exported grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMetadata {
    pub format: u32,
    pub resolution: f64,
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub l_occ: f64,
    pub l_free: f64,
    pub l_max: f64,
    pub occupied_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{bundled, World, BEAM_COUNT};
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn grid_10x10() -> OccupancyGrid {
        OccupancyGrid::new(Point2::new(0.0, 0.0), 200, 200, GridParams::default()).unwrap()
    }

    #[test]
    fn single_hit_raises_endpoint_and_clears_path() {
        let mut g = grid_10x10();
        // Heading cancels beam 19's bearing so that beam runs along +x.
        let pose = Pose::new(2.025, 5.025, -LidarScan::bearing(19));
        let mut r = vec![RANGE_MAX; BEAM_COUNT];
        r[19] = 1.0;
        g.integrate_scan(&pose, &LidarScan::from_ranges(r).unwrap()).unwrap();
        let end = g.cell_of(Point2::new(3.025 + 1e-6, 5.025)).unwrap();
        assert_eq!(end, CellIndex { ix: 60, iy: 100 });
        assert!(g.probability(end) > 0.5);
        for ix in 40..60 {
            let c = CellIndex { ix, iy: 100 };
            assert!(g.probability(c) < 0.5, "cell {ix}");
        }
    }

    #[test]
    fn max_range_beam_marks_nothing_occupied() {
        let mut g = grid_10x10();
        let scan = LidarScan::from_ranges(vec![RANGE_MAX; BEAM_COUNT]).unwrap();
        g.integrate_scan(&Pose::new(5.0, 5.0, 0.3), &scan).unwrap();
        assert!(g.cells().all(|c| g.class(c) != CellClass::Occupied));
        assert!(g.cells().any(|c| g.class(c) == CellClass::Free));
    }

    #[test]
    fn pose_outside_grid_is_error() {
        let mut g = grid_10x10();
        let scan = LidarScan::from_ranges(vec![RANGE_MAX; BEAM_COUNT]).unwrap();
        assert!(matches!(
            g.integrate_scan(&Pose::new(-1.0, 5.0, 0.0), &scan),
            Err(GridError::PoseOutsideGrid { .. })
        ));
    }

    #[test]
    fn traverse_reaches_end_cell_and_is_connected() {
        let g = grid_10x10();
        let cells = g.traverse(Point2::new(1.01, 1.02), Point2::new(2.53, 1.97));
        assert_eq!(*cells.last().unwrap(), g.cell_of(Point2::new(2.53, 1.97)).unwrap());
        for w in cells.windows(2) {
            let d = w[0].ix.abs_diff(w[1].ix) + w[0].iy.abs_diff(w[1].iy);
            assert_eq!(d, 1);
        }
    }

    #[test]
    fn confidence_examples() {
        let g = grid_10x10();
        let cells: Vec<CellIndex> = g.cells().take(50).collect();
        let c = g.map_posterior_confidence(&cells, ConfidenceMode::GeometricMean).unwrap();
        assert!((c - 0.5).abs() < 1e-15);
        let gm = confidence_from_certainties([0.64, 1.0], ConfidenceMode::GeometricMean).unwrap();
        assert!((gm - 0.8).abs() < 1e-12);
        let prod = confidence_from_certainties([0.64, 1.0], ConfidenceMode::Product).unwrap();
        assert!((prod - 0.64).abs() < 1e-15);
        assert!(matches!(
            g.map_posterior_confidence(&[], ConfidenceMode::GeometricMean),
            Err(GridError::EmptyCellSet)
        ));
    }

    #[test]
    fn saturated_cells_approach_full_confidence() {
        let mut g = grid_10x10();
        let cells: Vec<CellIndex> = g.cells().take(200).collect();
        for (i, &c) in cells.iter().enumerate() {
            let delta = if i % 2 == 0 { 100.0 } else { -100.0 };
            g.add_log_odds(c, delta);
        }
        let conf = g.map_posterior_confidence(&cells, ConfidenceMode::GeometricMean).unwrap();
        assert!(conf > 0.9999 && conf <= 1.0);
    }

    #[test]
    fn unknown_grid_has_no_fov_cells() {
        let g = grid_10x10();
        assert!(g.occupied_cells_in_fov(&Pose::new(5.0, 5.0, 0.0), 2.0).is_empty());
    }

    #[test]
    fn cell_behind_robot_excluded_from_fov() {
        let mut g = grid_10x10();
        let behind = g.cell_of(Point2::new(4.0, 5.0)).unwrap();
        let ahead = g.cell_of(Point2::new(6.0, 5.0)).unwrap();
        g.add_log_odds(behind, 5.0);
        g.add_log_odds(ahead, 5.0);
        let fov = g.occupied_cells_in_fov(&Pose::new(5.0, 5.0, 0.0), 2.0);
        assert_eq!(fov.len(), 1);
        assert_eq!(fov[0].cell, ahead);
        let fov = g.occupied_cells_in_fov(&Pose::new(5.0, 5.0, PI), 2.0);
        assert_eq!(fov.len(), 1);
        assert_eq!(fov[0].cell, behind);
    }

    #[test]
    fn fov_matches_exhaustive_enumeration() {
        let world = bundled("env1").unwrap();
        let mut g = OccupancyGrid::covering(world.bounds(), GridParams::default()).unwrap();
        // Rasterize ground truth directly so the test does not depend on scans.
        for c in g.cells().collect::<Vec<_>>() {
            let center = g.cell_center(c);
            let inside = !world.bounds().contains(center) || world.obstacle_containing(center).is_some();
            g.add_log_odds(c, if inside { 3.0 } else { -3.0 });
        }
        for (x, y, h) in [(0.5, 0.5, 0.0), (2.0, 1.0, 1.2), (3.5, 2.5, -2.0), (5.0, 2.0, FRAC_PI_2)] {
            let pose = Pose::new(x, y, h);
            let got = g.occupied_cells_in_fov(&pose, 2.0);
            let mut expected = Vec::new();
            for iy in 0..g.height() {
                for ix in 0..g.width() {
                    let c = CellIndex { ix, iy };
                    let center = g.cell_center(c);
                    let dx = center.x - x;
                    let dy = center.y - y;
                    let dist = (dx * dx + dy * dy).sqrt();
                    let ahead = dx * h.cos() + dy * h.sin() >= 0.0;
                    if dist <= 2.0 && ahead && g.probability(c) > 0.65 && g.is_observed(c) {
                        expected.push((c, dist));
                    }
                }
            }
            assert_eq!(got.len(), expected.len());
            for (f, (c, d)) in got.iter().zip(&expected) {
                assert_eq!(f.cell, *c);
                assert!((f.distance - d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn should_publish_threshold() {
        assert!(!should_publish(0.5, 0.5, 0.25));
        assert!(should_publish(0.5, 0.75, 0.25));
        assert!(!should_publish(0.5, 0.74, 0.25));
        assert!(should_publish(0.75, 0.5, 0.25));
    }

    #[test]
    fn text_export_round_trip() {
        let world: World = bundled("box_room").unwrap();
        let mut g = OccupancyGrid::covering(world.bounds(), GridParams::default()).unwrap();
        let pose = Pose::new(0.6, 0.6, 0.7);
        g.integrate_scan(&pose, &world.scan(&pose).unwrap()).unwrap();
        let meta = g.metadata(Some("now".into()));
        let back = OccupancyGrid::from_text(&g.to_text(), &meta).unwrap();
        for c in g.cells() {
            assert_eq!(g.class(c), back.class(c));
            assert!((g.probability(c) - back.probability(c)).abs() < 1e-12);
        }
        assert!(OccupancyGrid::from_text("format 1\nsize 1 1\n0.5\n", &meta).is_err());
    }

    proptest! {
        #[test]
        fn log_odds_round_trip(l in -10.0f64..10.0) {
            let p = probability_from_log_odds(l);
            prop_assert!(p > 0.0 && p < 1.0);
            prop_assert!((log_odds_from_probability(p) - l).abs() < 1e-12 * l.abs().max(1.0) * 10.0);
        }

        #[test]
        fn scan_order_does_not_matter_without_clamp(seed in 0u64..1000) {
            use rand::{seq::SliceRandom, Rng, SeedableRng};
            let world = bundled("box_room").unwrap();
            let params = GridParams { l_max: f64::INFINITY, ..GridParams::default() };
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut poses = Vec::new();
            while poses.len() < 6 {
                let p = Point2::new(rng.random_range(0.2..2.8), rng.random_range(0.2..2.8));
                if world.obstacle_containing(p).is_none() {
                    poses.push(Pose::new(p.x, p.y, rng.random_range(-PI..PI)));
                }
            }
            let scans: Vec<_> = poses.iter().map(|p| (*p, world.scan(p).unwrap())).collect();
            let mut a = OccupancyGrid::covering(world.bounds(), params).unwrap();
            for (p, s) in &scans { a.integrate_scan(p, s).unwrap(); }
            let mut shuffled = scans.clone();
            shuffled.shuffle(&mut rng);
            let mut b = OccupancyGrid::covering(world.bounds(), params).unwrap();
            for (p, s) in &shuffled { b.integrate_scan(p, s).unwrap(); }
            // Sums of the same +/- terms in another order: equal up to rounding.
            for c in a.cells() {
                prop_assert!((a.log_odds(c) - b.log_odds(c)).abs() < 1e-9);
                prop_assert_eq!(a.is_observed(c), b.is_observed(c));
            }
        }

        #[test]
        fn confidence_monotone_in_certainty(base in proptest::collection::vec(0.5f64..1.0, 1..20), idx in 0usize..20, bump in 0.0f64..0.5) {
            let i = idx % base.len();
            let mut raised = base.clone();
            raised[i] = (raised[i] + bump).min(1.0);
            for mode in [ConfidenceMode::GeometricMean, ConfidenceMode::Product] {
                let a = confidence_from_certainties(base.iter().copied(), mode).unwrap();
                let b = confidence_from_certainties(raised.iter().copied(), mode).unwrap();
                prop_assert!(b >= a - 1e-15);
            }
        }
    }
}
