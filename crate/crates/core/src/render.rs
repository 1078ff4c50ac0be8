//! Raster output: world, occupancy grid and trajectories as one image, and
//! heatmaps of the shaped reward over a map.

use image::{Rgb, RgbImage};

use crate::geometry::{Point2, Pose};
use crate::reward::{shaped_reward, RewardError, RewardParams, StepOutcome};
use crate::slam::{CellClass, OccupancyGrid};
use crate::world::{World, RANGE_MAX};

pub const UNKNOWN: Rgb<u8> = Rgb([160, 160, 160]);
pub const FREE: Rgb<u8> = Rgb([255, 255, 255]);
pub const OCCUPIED: Rgb<u8> = Rgb([0, 0, 0]);
const OBSTACLE: Rgb<u8> = Rgb([200, 40, 40]);
const GOAL: Rgb<u8> = Rgb([20, 160, 20]);
const PATHS: [Rgb<u8>; 4] = [Rgb([30, 80, 220]), Rgb([230, 140, 0]), Rgb([150, 40, 180]), Rgb([0, 160, 160])];

pub fn class_color(class: CellClass) -> Rgb<u8> {
    match class {
        CellClass::Unknown => UNKNOWN,
        CellClass::Free => FREE,
        CellClass::Occupied => OCCUPIED,
    }
}

/// Maps world coordinates onto an image covering the world bounds, `y` up.
#[derive(Debug, Clone, Copy)]
pub struct Viewport {
    pub px_per_m: f64,
    pub width: u32,
    pub height: u32,
}

impl Viewport {
    pub fn for_world(world: &World, px_per_m: f64) -> Self {
        let b = world.bounds();
        Self {
            px_per_m,
            width: ((b.width * px_per_m).round() as u32).max(1),
            height: ((b.height * px_per_m).round() as u32).max(1),
        }
    }

    /// World point at the center of pixel `(px, py)`.
    pub fn pixel_center(&self, px: u32, py: u32) -> Point2 {
        Point2::new(
            (px as f64 + 0.5) / self.px_per_m,
            (self.height as f64 - py as f64 - 0.5) / self.px_per_m,
        )
    }

    pub fn to_pixel(&self, p: Point2) -> (f64, f64) {
        (p.x * self.px_per_m, self.height as f64 - p.y * self.px_per_m)
    }
}

fn put(img: &mut RgbImage, x: f64, y: f64, color: Rgb<u8>) {
    if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn line(img: &mut RgbImage, view: &Viewport, a: Point2, b: Point2, color: Rgb<u8>) {
    let (ax, ay) = view.to_pixel(a);
    let (bx, by) = view.to_pixel(b);
    let n = ((bx - ax).abs().max((by - ay).abs()) * 2.0).ceil().max(1.0) as usize;
    for i in 0..=n {
        let t = i as f64 / n as f64;
        put(img, ax + t * (bx - ax), ay + t * (by - ay), color);
    }
}

/// Grid layer alone: each pixel takes the class of the cell containing its
/// center; pixels off the grid are unknown.
pub fn render_grid(world: &World, grid: &OccupancyGrid, px_per_m: f64) -> RgbImage {
    let view = Viewport::for_world(world, px_per_m);
    RgbImage::from_fn(view.width, view.height, |px, py| {
        grid.cell_of(view.pixel_center(px, py))
            .map_or(UNKNOWN, |c| class_color(grid.class(c)))
    })
}

/// World outlines over the grid (or a blank canvas), then trajectories and
/// goal markers.
pub fn render_scene(
    world: &World,
    grid: Option<&OccupancyGrid>,
    trajectories: &[Vec<Pose>],
    goals: &[Point2],
    px_per_m: f64,
) -> RgbImage {
    let view = Viewport::for_world(world, px_per_m);
    let mut img = match grid {
        Some(g) => render_grid(world, g, px_per_m),
        None => RgbImage::from_pixel(view.width, view.height, FREE),
    };
    for obstacle in world.obstacles() {
        for (a, b) in obstacle.edges() {
            line(&mut img, &view, a, b, OBSTACLE);
        }
    }
    for (i, path) in trajectories.iter().enumerate() {
        let color = PATHS[i % PATHS.len()];
        for w in path.windows(2) {
            line(&mut img, &view, w[0].position(), w[1].position(), color);
        }
        if let [only] = path.as_slice() {
            let (x, y) = view.to_pixel(only.position());
            put(&mut img, x, y, color);
        }
    }
    let arm = 4.0 / px_per_m;
    for &g in goals {
        line(&mut img, &view, Point2::new(g.x - arm, g.y - arm), Point2::new(g.x + arm, g.y + arm), GOAL);
        line(&mut img, &view, Point2::new(g.x - arm, g.y + arm), Point2::new(g.x + arm, g.y - arm), GOAL);
    }
    img
}

/// Shaped reward a running robot at `p` would receive with the given map
/// confidence, counting occupied cells within lidar range in every direction
/// so the value does not depend on heading.
pub fn shaped_reward_at(
    grid: &OccupancyGrid,
    p: Point2,
    goal: Point2,
    confidence: f64,
    params: &RewardParams,
) -> Result<f64, RewardError> {
    let cells = grid.occupied_cells_within(p, RANGE_MAX);
    shaped_reward(p.distance(goal), StepOutcome::Running, &cells, confidence, params)
}

/// Reward sampled at the centers of a regular lattice, row-major from the
/// bottom row.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardSurface {
    pub width: usize,
    pub height: usize,
    pub spacing: f64,
    pub values: Vec<f64>,
}

impl RewardSurface {
    pub fn point(&self, ix: usize, iy: usize) -> Point2 {
        Point2::new((ix as f64 + 0.5) * self.spacing, (iy as f64 + 0.5) * self.spacing)
    }

    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.width + ix]
    }

    pub fn range(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

pub fn reward_surface(
    world: &World,
    grid: &OccupancyGrid,
    goal: Point2,
    confidence: f64,
    params: &RewardParams,
    spacing: f64,
) -> Result<RewardSurface, RewardError> {
    let b = world.bounds();
    let width = ((b.width / spacing).floor() as usize).max(1);
    let height = ((b.height / spacing).floor() as usize).max(1);
    let mut surface = RewardSurface {
        width,
        height,
        spacing,
        values: Vec::with_capacity(width * height),
    };
    for iy in 0..height {
        for ix in 0..width {
            let v = shaped_reward_at(grid, surface.point(ix, iy), goal, confidence, params)?;
            surface.values.push(v);
        }
    }
    Ok(surface)
}

/// Colors `surface` on a fixed `(lo, hi)` scale so heatmaps rendered with
/// the same scale are comparable. Low values are dark.
pub fn render_surface(surface: &RewardSurface, lo: f64, hi: f64, px_per_sample: u32) -> RgbImage {
    let k = px_per_sample.max(1);
    let span = if hi > lo { hi - lo } else { 1.0 };
    RgbImage::from_fn(surface.width as u32 * k, surface.height as u32 * k, |px, py| {
        let ix = (px / k) as usize;
        let iy = surface.height - 1 - (py / k) as usize;
        colormap(((surface.value(ix, iy) - lo) / span).clamp(0.0, 1.0))
    })
}

/// Dark blue through teal to yellow.
pub fn colormap(t: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let x = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let c = |j: usize| (STOPS[i][j] + f * (STOPS[i + 1][j] - STOPS[i][j])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slam::GridParams;
    use crate::world::bundled;

    fn mapped_box_room() -> (World, OccupancyGrid) {
        let w = bundled("box_room").unwrap();
        let mut g = OccupancyGrid::covering(w.bounds(), GridParams::default()).unwrap();
        let b = w.bounds();
        for i in 0..40 {
            for j in 0..40 {
                let p = Point2::new(0.2 + (b.width - 0.4) * i as f64 / 39.0, 0.2 + (b.height - 0.4) * j as f64 / 39.0);
                if w.collides(p, 0.15) {
                    continue;
                }
                for k in 0..4 {
                    let pose = Pose::new(p.x, p.y, k as f64 * std::f64::consts::FRAC_PI_2);
                    g.integrate_scan(&pose, &w.scan(&pose).unwrap()).unwrap();
                }
            }
        }
        (w, g)
    }

    #[test]
    fn empty_trajectory_renders_world_only() {
        let w = bundled("desk_train").unwrap();
        let img = render_scene(&w, None, &[], &[], 50.0);
        assert_eq!((img.width(), img.height()), (150, 150));
        assert!(img.pixels().all(|p| *p == FREE || *p == OBSTACLE));
        assert!(img.pixels().any(|p| *p == OBSTACLE));
    }

    #[test]
    fn pixel_classes_match_grid_classes() {
        let (w, g) = mapped_box_room();
        let view = Viewport::for_world(&w, 40.0);
        let img = render_grid(&w, &g, 40.0);
        let mut occupied = 0;
        for (px, py, color) in img.enumerate_pixels() {
            let cell = g.cell_of(view.pixel_center(px, py)).unwrap();
            assert_eq!(*color, class_color(g.class(cell)));
            occupied += (*color == OCCUPIED) as usize;
        }
        assert!(occupied > 0);
        // The box shows as an occupied ring around an unobserved interior.
        let occupied_near = |p: Point2| {
            img.enumerate_pixels()
                .any(|(x, y, c)| *c == OCCUPIED && view.pixel_center(x, y).distance(p) < 0.06)
        };
        for side in [(1.2, 1.5), (1.8, 1.5), (1.5, 1.2), (1.5, 1.8)] {
            assert!(occupied_near(Point2::new(side.0, side.1)), "{side:?}");
        }
        let (cx, cy) = view.to_pixel(Point2::new(1.5, 1.5));
        assert_eq!(*img.get_pixel(cx as u32, cy as u32), UNKNOWN);
    }

    #[test]
    fn reward_is_lower_near_obstacles_at_equal_goal_distance() {
        let (_, g) = mapped_box_room();
        let p = RewardParams::default();
        let goal = Point2::new(2.2, 0.6);
        let near = Point2::new(0.25, 0.6);
        let d = near.distance(goal);
        let angle = std::f64::consts::FRAC_PI_3;
        let open = Point2::new(goal.x - d * angle.cos(), goal.y + d * angle.sin());
        assert!((open.distance(goal) - d).abs() < 1e-12);
        let r_near = shaped_reward_at(&g, near, goal, 1.0, &p).unwrap();
        let r_open = shaped_reward_at(&g, open, goal, 1.0, &p).unwrap();
        assert!(r_near < r_open, "{r_near} vs {r_open}");
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), Rgb([68, 1, 84]));
        assert_eq!(colormap(1.0), Rgb([253, 231, 37]));
        assert_eq!(colormap(-3.0), colormap(0.0));
    }
}
