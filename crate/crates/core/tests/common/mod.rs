//! Criterion checks shared by the integration tests and the acceptance
//! target. Every check compares the library against an oracle written here.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use mapnav::ddpg::{Critic, OuNoise, OuParams, ReplayBuffer, StateVector, Transition, STATE_DIM};
use mapnav::geometry::{Point2, Pose};
use mapnav::nn::{polyak_update, Activation, AdamConfig, AdamState, Gradients, Matrix, Mlp};
use mapnav::reward::{dense_reward, map_term, shaped_reward, RewardParams, StepOutcome};
use mapnav::robot::{self, odometry_between, Action, OdomNoise, RobotState};
use mapnav::slam::{CellClass, CellIndex, FovCell, GridParams, OccupancyGrid, Slam, SlamParams};
use mapnav::world::{bundled, LidarScan, World};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub struct Outcome {
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

/// Runs `f` and fails the outcome when it exceeds `budget`.
pub fn timed(budget: Duration, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (passed, detail) = f();
    let elapsed = start.elapsed();
    Outcome {
        passed: passed && elapsed <= budget,
        detail: format!("{detail}; {:.2}s of {}s budget", elapsed.as_secs_f64(), budget.as_secs()),
        elapsed,
    }
}

/// Upper 1% point of the chi-square distribution.
pub fn chi2_critical(dof: usize) -> f64 {
    ChiSquared::new(dof as f64).expect("positive dof").inverse_cdf(0.99)
}

pub fn chi2_statistic(observed: &[u64], expected: &[f64]) -> f64 {
    observed.iter().zip(expected).map(|(&o, &e)| (o as f64 - e).powi(2) / e).sum()
}

const FD_STEP: f64 = 1e-5;

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn weighted_sum(y: &Matrix, w: &Matrix) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Central differences of `f` with respect to every parameter of `net`.
fn numeric_gradient(net: &Mlp, f: impl Fn(&Mlp) -> f64) -> Vec<f64> {
    (0..net.param_count())
        .map(|k| {
            let mut plus = net.clone();
            *plus.params_mut().nth(k).unwrap() += FD_STEP;
            let mut minus = net.clone();
            *minus.params_mut().nth(k).unwrap() -= FD_STEP;
            (f(&plus) - f(&minus)) / (2.0 * FD_STEP)
        })
        .collect()
}

fn worst(analytic: impl Iterator<Item = f64>, numeric: &[f64]) -> f64 {
    analytic.zip(numeric).map(|(a, &n)| relative_error(a, n)).fold(0.0, f64::max)
}

/// Worst relative error of actor and critic gradients for one seed.
pub fn gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let acts = [Activation::Relu, Activation::Relu, Activation::VelocityHead];
    let actor = Mlp::init_hidden(&[STATE_DIM, 12, 10, 2], &acts, &mut rng).unwrap();
    let x = random_matrix(4, STATE_DIM, &mut rng);
    let c = random_matrix(4, 2, &mut rng);
    let cache = actor.forward_batch(&x).unwrap();
    let (grads, _) = actor.backward(&cache, &c).unwrap();
    let numeric = numeric_gradient(&actor, |n| weighted_sum(&n.predict(&x).unwrap(), &c));
    let mut err = worst(grads.iter(), &numeric);

    let critic = Critic::init(STATE_DIM, &[12, 10], &mut rng).unwrap();
    let s = random_matrix(4, STATE_DIM, &mut rng);
    let a = random_matrix(4, 2, &mut rng);
    let dq = random_matrix(4, 1, &mut rng);
    let cache = critic.forward_batch(&s, &a).unwrap();
    let (pg, _, d_action) = critic.backward(&cache, &dq).unwrap();
    let q_of = |c: &Critic, a: &Matrix| weighted_sum(&c.predict(&s, a).unwrap(), &dq);
    let numeric_state = numeric_gradient(critic.state_layer(), |m| {
        let mut c = critic.clone();
        *c.state_layer_mut() = m.clone();
        q_of(&c, &a)
    });
    let numeric_head = numeric_gradient(critic.head(), |m| {
        let mut c = critic.clone();
        *c.head_mut() = m.clone();
        q_of(&c, &a)
    });
    err = err.max(worst(pg.state_layer.iter(), &numeric_state));
    err = err.max(worst(pg.head.iter(), &numeric_head));
    let numeric_action: Vec<f64> = (0..a.data().len())
        .map(|i| {
            let mut plus = a.clone();
            plus.data_mut()[i] += FD_STEP;
            let mut minus = a.clone();
            minus.data_mut()[i] -= FD_STEP;
            (q_of(&critic, &plus) - q_of(&critic, &minus)) / (2.0 * FD_STEP)
        })
        .collect();
    err.max(worst(d_action.data().iter().copied(), &numeric_action))
}

pub fn criterion_gradients() -> (bool, String) {
    let errors: Vec<f64> = (0..5).map(gradient_error).collect();
    let max = errors.iter().copied().fold(0.0, f64::max);
    (max < 1e-4, format!("max relative error {max:.2e} over {} seeds", errors.len()))
}

fn gradients_from(net: &Mlp, values: &[f64]) -> Gradients {
    let mut g = Gradients::zeros_like(net);
    let mut it = values.iter();
    for l in &mut g.layers {
        for x in l.weights.iter_mut().chain(l.bias.iter_mut()) {
            *x = *it.next().unwrap();
        }
    }
    g
}

/// Textbook Adam with coupled L2, one scalar at a time.
fn adam_reference(mut p: Vec<f64>, trace: &[Vec<f64>], cfg: &AdamConfig) -> Vec<f64> {
    let mut m = vec![0.0; p.len()];
    let mut v = vec![0.0; p.len()];
    for (t, g) in trace.iter().enumerate() {
        let t = (t + 1) as i32;
        for i in 0..p.len() {
            let gi = g[i] + cfg.l2 * p[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / (1.0 - cfg.beta1.powi(t));
            let v_hat = v[i] / (1.0 - cfg.beta2.powi(t));
            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    p
}

pub fn criterion_adam_polyak() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let acts = [Activation::Relu, Activation::Tanh, Activation::Linear];
    let mut adam_dev = 0.0f64;
    for l2 in [0.0, 0.01] {
        let mut net = Mlp::init_hidden(&[5, 8, 6, 2], &acts, &mut rng).unwrap();
        let start: Vec<f64> = net.params().collect();
        let trace: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..net.param_count()).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let cfg = AdamConfig { learning_rate: 1e-3, l2, ..AdamConfig::default() };
        let mut state = AdamState::new(&net, cfg);
        for g in &trace {
            let grads = gradients_from(&net, g);
            state.step(&mut net, &grads).unwrap();
        }
        let expected = adam_reference(start, &trace, &cfg);
        adam_dev = net.params().zip(&expected).map(|(a, b)| (a - b).abs()).fold(adam_dev, f64::max);
    }
    let online = Mlp::init(&[5, 8, 2], &[Activation::Relu, Activation::Linear], &mut rng).unwrap();
    let mut target = Mlp::init(&[5, 8, 2], &[Activation::Relu, Activation::Linear], &mut rng).unwrap();
    let before: Vec<f64> = target.params().collect();
    let tau = 0.001;
    polyak_update(&mut target, &online, tau).unwrap();
    let polyak_dev = target
        .params()
        .zip(online.params())
        .zip(&before)
        .map(|((t, o), b)| (t - (tau * o + (1.0 - tau) * b)).abs())
        .fold(0.0, f64::max);
    (
        adam_dev < 1e-10 && polyak_dev < 1e-15,
        format!("adam max deviation {adam_dev:.2e} after 100 steps; polyak max deviation {polyak_dev:.2e}"),
    )
}

/// Free pose at least `clearance` from every surface.
pub fn random_free_pose(world: &World, clearance: f64, rng: &mut ChaCha8Rng) -> Pose {
    let b = world.bounds();
    loop {
        let p = Point2::new(rng.random_range(0.0..b.width), rng.random_range(0.0..b.height));
        if !world.collides(p, clearance) {
            return Pose::new(p.x, p.y, rng.random_range(-PI..PI));
        }
    }
}

fn floor_cell(grid: &OccupancyGrid, p: Point2) -> Option<CellIndex> {
    let o = grid.origin();
    let ix = ((p.x - o.x) / grid.resolution()).floor();
    let iy = ((p.y - o.y) / grid.resolution()).floor();
    (ix >= 0.0 && iy >= 0.0 && (ix as usize) < grid.width() && (iy as usize) < grid.height())
        .then(|| CellIndex { ix: ix as usize, iy: iy as usize })
}

/// Cells crossed by any wall or obstacle edge, each surface point attributed
/// to the cell just behind the surface as seen from free space.
pub fn surface_cells(world: &World, grid: &OccupancyGrid) -> Vec<bool> {
    let mut occupied = vec![false; grid.width() * grid.height()];
    let b = world.bounds();
    let corners = [
        Point2::new(0.0, 0.0),
        Point2::new(b.width, 0.0),
        Point2::new(b.width, b.height),
        Point2::new(0.0, b.height),
    ];
    // Segments are oriented with free space on their left: walls
    // counterclockwise, obstacle edges clockwise.
    let mut segments: Vec<(Point2, Point2)> = (0..4).map(|i| (corners[i], corners[(i + 1) % 4])).collect();
    for o in world.obstacles() {
        let v = o.vertices();
        let signed: f64 = (0..v.len()).map(|i| v[i].cross(v[(i + 1) % v.len()])).sum();
        for i in 0..v.len() {
            let (a, c) = (v[i], v[(i + 1) % v.len()]);
            segments.push(if signed > 0.0 { (c, a) } else { (a, c) });
        }
    }
    for (a, c) in segments {
        let len = a.distance(c);
        let dir = Point2::new((c.x - a.x) / len, (c.y - a.y) / len);
        let behind = Point2::new(dir.y * 1e-6, -dir.x * 1e-6);
        let n = (len / 1e-3).ceil() as usize;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            let p = Point2::new(a.x + t * (c.x - a.x) + behind.x, a.y + t * (c.y - a.y) + behind.y);
            if let Some(cell) = floor_cell(grid, p) {
                occupied[cell.iy * grid.width() + cell.ix] = true;
            }
        }
    }
    occupied
}

/// Fraction of observed cells whose class matches the rasterized surfaces.
pub fn mapping_agreement(world: &World, grid: &OccupancyGrid) -> (f64, usize) {
    let truth = surface_cells(world, grid);
    let mut observed = 0;
    let mut agree = 0;
    for c in grid.cells() {
        let class = grid.class(c);
        if class == CellClass::Unknown {
            continue;
        }
        observed += 1;
        agree += ((class == CellClass::Occupied) == truth[c.iy * grid.width() + c.ix]) as usize;
    }
    (agree as f64 / observed as f64, observed)
}

/// Grid built from `n` noiseless scans at random known poses.
pub fn mapped_grid(world: &World, n: usize, seed: u64) -> OccupancyGrid {
    let mut grid = OccupancyGrid::covering(world.bounds(), GridParams::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        let pose = random_free_pose(world, 0.15, &mut rng);
        grid.integrate_scan(&pose, &world.scan(&pose).unwrap()).unwrap();
    }
    grid
}

pub fn criterion_mapping() -> (bool, String) {
    let world = bundled("box_room").unwrap();
    let grid = mapped_grid(&world, 200, 31);
    let (agreement, observed) = mapping_agreement(&world, &grid);
    (
        agreement >= 0.95,
        format!("{:.2}% agreement over {observed} observed cells", agreement * 100.0),
    )
}

/// Steers away from whatever is ahead; never drives into a collision.
pub fn wander_action(world: &World, state: &RobotState, scan: &LidarScan, t: usize) -> Action {
    let front = scan
        .beams()
        .filter(|(b, _)| b.abs() < 0.6)
        .map(|(_, r)| r)
        .fold(f64::INFINITY, f64::min);
    let action = if front < 0.5 {
        Action { v: 0.05, omega: 1.0 }
    } else {
        Action { v: 0.2, omega: 0.5 * (t as f64 * 0.03).sin() }
    };
    let next = robot::step(state, action, robot::DEFAULT_DT).unwrap();
    if world.collides(next.pose().position(), 0.15) {
        Action { v: 0.0, omega: 1.0 }
    } else {
        action
    }
}

pub struct TrackingRun {
    pub errors: Vec<f64>,
    pub resamples: u64,
}

/// Drives `steps` wander steps with the filter tracking on a premapped world.
pub fn track(world: &World, noise: OdomNoise, steps: usize, seed: u64) -> TrackingRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = random_free_pose(world, 0.4, &mut rng);
    let mut slam = Slam::new(world.bounds(), start, SlamParams::default()).unwrap();
    let mut map_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    for _ in 0..200 {
        let pose = random_free_pose(world, 0.15, &mut map_rng);
        slam.integrate_known_pose(&pose, &world.scan(&pose).unwrap()).unwrap();
    }
    let mut truth = RobotState::at(start);
    let mut scan = world.scan(&start).unwrap();
    let mut errors = Vec::with_capacity(steps);
    for t in 0..steps {
        let action = wander_action(world, &truth, &scan, t);
        let next = robot::step(&truth, action, robot::DEFAULT_DT).unwrap();
        let odom = odometry_between(&truth, &next, &noise, &mut rng);
        scan = world.scan(&next.pose()).unwrap();
        let estimate = slam.step(&odom, &noise, &scan, &mut rng);
        errors.push(estimate.position().distance(next.pose().position()));
        truth = next;
    }
    TrackingRun {
        errors,
        resamples: slam.stats().resamples,
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn criterion_tracking() -> (bool, String) {
    let world = bundled("box_room").unwrap();
    let run = track(&world, OdomNoise::default(), 500, 41);
    let med = median(&run.errors);
    (
        med < 0.15 && run.resamples >= 1,
        format!("median pose error {med:.4} m over 500 steps, {} resamples", run.resamples),
    )
}

fn fov(distances: &[f64]) -> Vec<FovCell> {
    distances
        .iter()
        .enumerate()
        .map(|(i, &distance)| FovCell { cell: CellIndex { ix: i, iy: 0 }, distance })
        .collect()
}

pub fn criterion_reward() -> (bool, String) {
    let p = RewardParams::default();
    let running = StepOutcome::Running;
    let decreasing = (0..400).all(|i| {
        let d = i as f64 * 0.01;
        dense_reward(d + 0.01, running, &p).unwrap() < dense_reward(d, running, &p).unwrap()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let bounded = (0..1000).all(|_| {
        let d = rng.random_range(0.0..5.0);
        let cells: Vec<f64> = (0..rng.random_range(0..8)).map(|_| rng.random_range(0.0..2.0)).collect();
        let conf = rng.random_range(0.0..=1.0);
        shaped_reward(d, running, &fov(&cells), conf, &p).unwrap() <= dense_reward(d, running, &p).unwrap()
    });
    let hand = 0.8 * ((-0.5f64).exp() + (-1.0f64).exp()) / 2.0;
    let example = (map_term(&fov(&[0.5, 1.0]), 0.8).unwrap() - hand).abs() < 1e-9
        && map_term(&fov(&[]), 1.0).unwrap() == 0.0
        && (map_term(&fov(&[0.0]), 1.0).unwrap() - 1.0).abs() < 1e-12;
    let terminal = [StepOutcome::Reached, StepOutcome::Crashed, StepOutcome::TimedOut]
        .into_iter()
        .all(|o| {
            let dense = dense_reward(0.2, o, &p).unwrap();
            [0.0, 0.5, 1.0].iter().all(|&c| shaped_reward(0.2, o, &fov(&[0.1, 0.4]), c, &p).unwrap() == dense)
        });
    (
        decreasing && bounded && example && terminal,
        format!("decreasing {decreasing}, shaped<=dense {bounded}, map term examples {example}, terminal invariance {terminal}"),
    )
}

pub fn criterion_ou() -> (bool, String) {
    let params = OuParams::default();
    let mut noise = OuNoise::new(params);
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for _ in 0..1000 {
        noise.sample(&mut rng);
    }
    let n = 1_000_000;
    let (mut sum, mut sq) = ([0.0; 2], [0.0; 2]);
    for _ in 0..n {
        let x = noise.sample(&mut rng);
        for k in 0..2 {
            sum[k] += x[k];
            sq[k] += x[k] * x[k];
        }
    }
    let target = 0.2 / 0.3f64.sqrt();
    let rel: Vec<f64> = (0..2)
        .map(|k| {
            let mean = sum[k] / n as f64;
            ((sq[k] / n as f64 - mean * mean).sqrt() - target).abs() / target
        })
        .collect();
    let worst = rel.iter().copied().fold(0.0, f64::max);
    (worst < 0.05, format!("stationary std off by at most {:.2}% from {target:.4}", worst * 100.0))
}

fn transition(k: usize) -> Transition {
    let s = StateVector::from_features(vec![0.0; STATE_DIM]).unwrap();
    Transition {
        state: s.clone(),
        action: Action::default(),
        reward: k as f64,
        next_state: s,
        terminal: false,
    }
}

pub fn criterion_replay() -> (bool, String) {
    let capacity = 100_000;
    let mut buffer = ReplayBuffer::new(capacity).unwrap();
    for k in 0..capacity {
        buffer.push(&transition(k));
    }
    let full_before_evict = buffer.len() == capacity && buffer.get(0).unwrap().reward == 0.0;
    buffer.push(&transition(capacity));
    let fifo = full_before_evict
        && buffer.len() == capacity
        && buffer.get(0).unwrap().reward == 1.0
        && buffer.get(capacity - 1).unwrap().reward == capacity as f64;

    let mut small = ReplayBuffer::new(1000).unwrap();
    for k in 0..1000 {
        small.push(&transition(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut counts = vec![0u64; 1000];
    for _ in 0..1000 {
        for i in small.sample_indices(100, &mut rng).unwrap() {
            counts[i] += 1;
        }
    }
    let stat = chi2_statistic(&counts, &vec![100.0; 1000]);
    let critical = chi2_critical(999);
    (
        fifo && stat < critical,
        format!("fifo eviction {fifo}; chi-square {stat:.1} vs 1% critical {critical:.1}"),
    )
}
