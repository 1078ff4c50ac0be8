//! Environment geometry: bounded rectangle with convex polygon obstacles,
//! analytic lidar raycasting and disc collision queries.
//!
//! Worlds live in `[0, width] x [0, height]`. The bounds edges are walls: rays
//! stop on them and the robot disc may not cross them.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point2, Pose};

/// Number of lidar beams.
pub const BEAM_COUNT: usize = 40;
/// Closest range the lidar reports, meters.
pub const RANGE_MIN: f64 = 0.2;
/// Farthest range the lidar reports, meters.
pub const RANGE_MAX: f64 = 2.0;
/// Supported environment file format version.
pub const WORLD_FORMAT: u32 = 1;

const PARALLEL_EPS: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("failed to read world file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse world file: {0}")]
    Parse(String),
    #[error("unsupported world format {0} (expected {WORLD_FORMAT})")]
    UnsupportedFormat(u32),
    #[error("bounds must be positive and finite, got {width} x {height}")]
    InvalidBounds { width: f64, height: f64 },
    #[error("obstacle {index} has {count} vertices, at least 3 required")]
    TooFewVertices { index: usize, count: usize },
    #[error("obstacle {index} has zero area")]
    ZeroArea { index: usize },
    #[error("obstacle {index} is not convex")]
    NotConvex { index: usize },
    #[error("obstacle {index} vertex {vertex} lies outside the bounds")]
    VertexOutOfBounds { index: usize, vertex: usize },
    #[error("obstacle {index} has a non-finite vertex")]
    NonFiniteVertex { index: usize },
    #[error("ray origin ({x}, {y}) lies inside obstacle {index}")]
    OriginInObstacle { index: usize, x: f64, y: f64 },
    #[error("ray origin ({x}, {y}) lies outside the world bounds")]
    OriginOutOfBounds { x: f64, y: f64 },
    #[error("unknown bundled world '{0}'")]
    UnknownBundled(String),
}

/// Axis-aligned world extent anchored at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub width: f64,
    pub height: f64,
}

impl Bounds {
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.height
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }

    fn corners(&self) -> [Point2; 4] {
        [
            Point2::new(0.0, 0.0),
            Point2::new(self.width, 0.0),
            Point2::new(self.width, self.height),
            Point2::new(0.0, self.height),
        ]
    }
}

/// Convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    vertices: Vec<Point2>,
}

impl Obstacle {
    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            vertices: vec![
                Point2::new(x0, y0),
                Point2::new(x1, y0),
                Point2::new(x1, y1),
                Point2::new(x0, y1),
            ],
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Strict interior test; points on the boundary are outside.
    pub fn contains(&self, p: Point2) -> bool {
        self.edges().all(|(a, b)| (b - a).cross(p - a) > 0.0)
    }

    /// Euclidean distance from `p` to the polygon; zero inside.
    pub fn distance(&self, p: Point2) -> f64 {
        if self.contains(p) {
            return 0.0;
        }
        self.edges()
            .map(|(a, b)| segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn signed_area(&self) -> f64 {
        0.5 * self.edges().map(|(a, b)| a.cross(b)).sum::<f64>()
    }
}

fn segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 {
        ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.distance(a + ab * t)
}

/// Distance along the ray `origin + t * dir` (unit `dir`) to segment `a-b`, if hit.
fn ray_segment(origin: Point2, dir: Point2, a: Point2, b: Point2) -> Option<f64> {
    let edge = b - a;
    let denom = dir.cross(edge);
    if denom.abs() < PARALLEL_EPS {
        return None;
    }
    let rel = a - origin;
    let t = rel.cross(edge) / denom;
    let u = rel.cross(dir) / denom;
    if t >= 0.0 && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

/// Nearest hit of a ray against a set of segments, clamped to `[0, r_max]`.
pub fn raycast_segments<I>(segments: I, origin: Point2, bearing: f64, r_max: f64) -> f64
where
    I: IntoIterator<Item = (Point2, Point2)>,
{
    let dir = Point2::from_polar(1.0, bearing);
    segments
        .into_iter()
        .filter_map(|(a, b)| ray_segment(origin, dir, a, b))
        .fold(r_max, f64::min)
        .clamp(0.0, r_max)
}

/// One 180° sweep of the planar lidar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    ranges: Vec<f64>,
}

impl LidarScan {
    /// Builds a scan from raw ranges, clamping each into `[RANGE_MIN, RANGE_MAX]`.
    pub fn from_ranges(ranges: Vec<f64>) -> Option<Self> {
        if ranges.len() != BEAM_COUNT || ranges.iter().any(|r| r.is_nan()) {
            return None;
        }
        let ranges = ranges
            .into_iter()
            .map(|r| r.clamp(RANGE_MIN, RANGE_MAX))
            .collect();
        Some(Self { ranges })
    }

    pub fn ranges(&self) -> &[f64] {
        &self.ranges
    }

    /// Bearing of beam `i` in the robot frame: evenly spaced over [-90°, +90°].
    pub fn bearing(i: usize) -> f64 {
        -FRAC_PI_2 + (i as f64) * std::f64::consts::PI / (BEAM_COUNT - 1) as f64
    }

    pub fn bearings() -> impl Iterator<Item = f64> {
        (0..BEAM_COUNT).map(Self::bearing)
    }

    /// Beams paired with bearings.
    pub fn beams(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.ranges.iter().enumerate().map(|(i, &r)| (Self::bearing(i), r))
    }
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct WorldFile {
    format: u32,
    #[serde(default)]
    name: String,
    bounds: [f64; 2],
    #[serde(default)]
    obstacles: Vec<Vec<[f64; 2]>>,
}

/// Immutable environment: bounds, obstacles and a display name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    name: String,
    bounds: Bounds,
    obstacles: Vec<Obstacle>,
}

impl World {
    /// Validates and builds a world. Clockwise polygons are reoriented.
    pub fn new(
        name: impl Into<String>,
        bounds: Bounds,
        obstacles: Vec<Vec<Point2>>,
    ) -> Result<Self, WorldError> {
        if !(bounds.width > 0.0 && bounds.height > 0.0)
            || !bounds.width.is_finite()
            || !bounds.height.is_finite()
        {
            return Err(WorldError::InvalidBounds {
                width: bounds.width,
                height: bounds.height,
            });
        }
        let mut validated = Vec::with_capacity(obstacles.len());
        for (index, mut vertices) in obstacles.into_iter().enumerate() {
            if vertices.len() < 3 {
                return Err(WorldError::TooFewVertices {
                    index,
                    count: vertices.len(),
                });
            }
            if vertices.iter().any(|v| !v.is_finite()) {
                return Err(WorldError::NonFiniteVertex { index });
            }
            if let Some(vertex) = vertices.iter().position(|v| !bounds.contains(*v)) {
                return Err(WorldError::VertexOutOfBounds { index, vertex });
            }
            let mut polygon = Obstacle { vertices };
            let area = polygon.signed_area();
            if area.abs() < 1e-12 {
                return Err(WorldError::ZeroArea { index });
            }
            if area < 0.0 {
                vertices = polygon.vertices;
                vertices.reverse();
                polygon = Obstacle { vertices };
            }
            let convex = {
                let v = &polygon.vertices;
                let n = v.len();
                (0..n).all(|i| {
                    let a = v[i];
                    let b = v[(i + 1) % n];
                    let c = v[(i + 2) % n];
                    (b - a).cross(c - b) >= 0.0
                })
            };
            if !convex {
                return Err(WorldError::NotConvex { index });
            }
            validated.push(polygon);
        }
        Ok(Self {
            name: name.into(),
            bounds,
            obstacles: validated,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, WorldError> {
        let file: WorldFile = toml::from_str(text).map_err(|e| WorldError::Parse(e.to_string()))?;
        if file.format != WORLD_FORMAT {
            return Err(WorldError::UnsupportedFormat(file.format));
        }
        let obstacles = file
            .obstacles
            .into_iter()
            .map(|poly| poly.into_iter().map(|[x, y]| Point2::new(x, y)).collect())
            .collect();
        Self::new(
            file.name,
            Bounds {
                width: file.bounds[0],
                height: file.bounds[1],
            },
            obstacles,
        )
    }

    pub fn to_toml_string(&self) -> String {
        let file = WorldFile {
            format: WORLD_FORMAT,
            name: self.name.clone(),
            bounds: [self.bounds.width, self.bounds.height],
            obstacles: self
                .obstacles
                .iter()
                .map(|o| o.vertices.iter().map(|v| [v.x, v.y]).collect())
                .collect(),
        };
        toml::to_string(&file).expect("world file serializes")
    }

    /// Resolves `bundled:<name>` to a shipped world, anything else as a path.
    pub fn resolve(spec: &str) -> Result<Self, WorldError> {
        match spec.strip_prefix("bundled:") {
            Some(name) => bundled(name),
            None => load_world(spec),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn diagonal(&self) -> f64 {
        self.bounds.diagonal()
    }

    /// Every wall and obstacle edge as a segment.
    pub fn segments(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let corners = self.bounds.corners();
        let walls = (0..4).map(move |i| (corners[i], corners[(i + 1) % 4]));
        walls.chain(self.obstacles.iter().flat_map(|o| o.edges()))
    }

    /// Index of the obstacle strictly containing `p`, if any.
    pub fn obstacle_containing(&self, p: Point2) -> Option<usize> {
        self.obstacles.iter().position(|o| o.contains(p))
    }

    /// Distance from `origin` along `bearing` to the first wall or obstacle,
    /// clamped to `[0, r_max]`.
    pub fn raycast(&self, origin: Point2, bearing: f64, r_max: f64) -> Result<f64, WorldError> {
        if !self.bounds.contains(origin) {
            return Err(WorldError::OriginOutOfBounds {
                x: origin.x,
                y: origin.y,
            });
        }
        if let Some(index) = self.obstacle_containing(origin) {
            return Err(WorldError::OriginInObstacle {
                index,
                x: origin.x,
                y: origin.y,
            });
        }
        Ok(raycast_segments(self.segments(), origin, bearing, r_max))
    }

    /// Noise-free 40-beam scan from `pose`.
    pub fn scan(&self, pose: &Pose) -> Result<LidarScan, WorldError> {
        let origin = pose.position();
        let ranges = LidarScan::bearings()
            .map(|b| self.raycast(origin, pose.heading + b, RANGE_MAX))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(LidarScan::from_ranges(ranges).expect("beam count matches"))
    }

    /// Scan with additive Gaussian range noise of standard deviation `sigma`.
    pub fn scan_noisy<R: Rng + ?Sized>(
        &self,
        pose: &Pose,
        sigma: f64,
        rng: &mut R,
    ) -> Result<LidarScan, WorldError> {
        let mut scan = self.scan(pose)?;
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("finite sigma");
            for r in &mut scan.ranges {
                *r = (*r + normal.sample(rng)).clamp(RANGE_MIN, RANGE_MAX);
            }
        }
        Ok(scan)
    }

    /// True iff the disc of `radius` around `position` overlaps an obstacle or
    /// leaves the bounds.
    pub fn collides(&self, position: Point2, radius: f64) -> bool {
        let b = self.bounds;
        if position.x - radius < 0.0
            || position.x + radius > b.width
            || position.y - radius < 0.0
            || position.y + radius > b.height
        {
            return true;
        }
        self.obstacles.iter().any(|o| o.distance(position) < radius)
    }
}

/// Reads and validates an environment file.
pub fn load_world(path: impl AsRef<Path>) -> Result<World, WorldError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| WorldError::Io {
        path: path.display().to_string(),
        source,
    })?;
    World::from_toml_str(&text)
}

const BUNDLED: &[(&str, &str)] = &[
    ("env1", include_str!("../worlds/env1.toml")),
    ("env2", include_str!("../worlds/env2.toml")),
    ("env3", include_str!("../worlds/env3.toml")),
    ("desk_train", include_str!("../worlds/desk_train.toml")),
    ("desk_unseen", include_str!("../worlds/desk_unseen.toml")),
    ("box_room", include_str!("../worlds/box_room.toml")),
];

/// Names of the worlds shipped with the crate.
pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

/// Loads one of the shipped worlds by name.
pub fn bundled(name: &str) -> Result<World, WorldError> {
    let text = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| WorldError::UnknownBundled(name.to_string()))?;
    World::from_toml_str(text)
}
