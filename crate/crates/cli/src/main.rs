//! `mapnav` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use mapnav::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use mapnav::config::RunConfig;
use mapnav::geometry::{Point2, Pose};
use mapnav::persist::write_atomic;
use mapnav::render::{render_scene, render_surface, reward_surface};
use mapnav::reward::RewardParams;
use mapnav::slam::OccupancyGrid;
use mapnav::trainer::{self, trajectory_csv, EvalReport, ObserverError, TrainObserver, TrainingState};
use mapnav::world::World;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(name = "mapnav", version, about = "Map-aware goal-directed navigation: train, evaluate and inspect agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write checkpoints, episode logs and a summary.
    Train(TrainArgs),
    /// Evaluate one checkpoint on a shared set of random targets.
    Eval(EvalArgs),
    /// Evaluate two checkpoints on identical targets and print a table.
    Compare(CompareArgs),
    /// Follow an ordered list of goals with a trained policy.
    Waypoint(WaypointArgs),
    /// Draw the world, a map and trajectories, or a reward heatmap.
    Render(RenderArgs),
    /// Run the built-in invariant suite.
    Check,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML overlay merged over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `paper` or `desk`; a `preset` key in the config file takes precedence.
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `bundled:<name>` or a path to an environment file.
    #[arg(long)]
    world: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Continue from a checkpoint instead of starting fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    n_targets: Option<usize>,
    /// Write one trajectory CSV per target into this directory.
    #[arg(long)]
    trajectories: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    checkpoint_a: PathBuf,
    checkpoint_b: PathBuf,
    #[arg(long, default_value = "A")]
    label_a: String,
    #[arg(long, default_value = "B")]
    label_b: String,
    #[arg(long)]
    n_targets: Option<usize>,
    /// Extra worlds to compare on, besides `--world`.
    #[arg(long = "also")]
    also: Vec<String>,
}

#[derive(Args)]
struct WaypointArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Start pose `x,y,heading`.
    #[arg(long, value_parser = parse_pose)]
    start: Pose,
    /// Goal `x,y`; repeat in visiting order.
    #[arg(long = "goal", value_parser = parse_point, required = true)]
    goals: Vec<Point2>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long, default_value = "bundled:env1")]
    world: String,
    /// Occupancy grid text export; its metadata sidecar is `<grid>.json`.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Take the map from a checkpoint's SLAM state.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Trajectory CSV; repeatable.
    #[arg(long = "trajectory")]
    trajectories: Vec<PathBuf>,
    #[arg(long, default_value_t = 100.0)]
    px_per_m: f64,
    /// Output PNG.
    #[arg(long)]
    output: PathBuf,
    /// Also write a shaped-reward heatmap for this goal `x,y`.
    #[arg(long, value_parser = parse_point)]
    heatmap_goal: Option<Point2>,
    #[arg(long, default_value_t = 1.0)]
    confidence: f64,
    #[arg(long)]
    heatmap_output: Option<PathBuf>,
}

fn parse_numbers(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() != n || v.iter().any(|x| !x.is_finite()) {
        return Err(format!("expected {n} comma-separated finite numbers, got '{s}'"));
    }
    Ok(v)
}

fn parse_point(s: &str) -> Result<Point2, String> {
    let v = parse_numbers(s, 2)?;
    Ok(Point2::new(v[0], v[1]))
}

fn parse_pose(s: &str) -> Result<Pose, String> {
    let v = parse_numbers(s, 3)?;
    Ok(Pose::new(v[0], v[1], v[2]))
}

/// Failure classes mapped onto exit statuses.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
    Check,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn config_error(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path, &common.preset).map_err(config_error)?,
        None => RunConfig::preset(&common.preset).map_err(config_error)?,
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out = out.clone();
    }
    if let Some(world) = &common.world {
        config.world = world.clone();
    }
    config.validate().map_err(config_error)?;
    Ok(config)
}

fn load_world(spec: &str) -> Result<World, Failure> {
    World::resolve(spec).map_err(|e| config_error(anyhow!(e).context(format!("cannot load world '{spec}'"))))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn to_json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

/// Streams episode lines and writes checkpoints under the output directory.
struct RunWriter<'a> {
    config: &'a RunConfig,
    log: Vec<u8>,
    log_path: PathBuf,
}

impl TrainObserver for RunWriter<'_> {
    fn episode_finished(&mut self, summary: &trainer::EpisodeSummary, _: &trainer::EpisodeRecord) -> Result<(), ObserverError> {
        serde_json::to_writer(&mut self.log, summary)?;
        self.log.push(b'\n');
        if summary.episode % 10 == 9 {
            log::info!(
                "episode {}: rolling success {:.2}, collisions {:.2}",
                summary.episode + 1,
                summary.rolling_success,
                summary.rolling_collision
            );
        }
        Ok(())
    }

    fn checkpoint(&mut self, state: &TrainingState) -> Result<(), ObserverError> {
        let dir = self.config.out.join("checkpoints");
        let path = dir.join(format!("episode_{:06}.ckpt", state.episode));
        save_checkpoint(&path, self.config, state, self.config.train.checkpoint_buffer)?;
        // The log on disk always covers at least the checkpointed episodes.
        write_atomic(&self.log_path, &self.log)?;
        log::info!("wrote {}", path.display());
        Ok(())
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let (config, mut state) = match &args.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path).map_err(config_error)?;
            let mut config = ckpt.config.clone();
            if let Some(out) = &args.common.out {
                config.out = out.clone();
            }
            (config, Some(ckpt.into_state().map_err(config_error)?))
        }
        None => (load_config(&args.common)?, None),
    };
    let world = load_world(&config.world)?;
    std::fs::create_dir_all(&config.out).with_context(|| format!("cannot create {}", config.out.display()))?;
    write_file(&config.out.join("config.toml"), config.to_toml_string().as_bytes())?;
    let log_path = config.out.join("episodes.ndjson");
    let mut writer = RunWriter {
        config: &config,
        log: Vec::new(),
        log_path: log_path.clone(),
    };
    let mut state = match state.take() {
        Some(s) => {
            for summary in &s.summaries {
                serde_json::to_writer(&mut writer.log, summary)?;
                writer.log.push(b'\n');
            }
            s
        }
        None => TrainingState::new(&config, &world)?,
    };
    log::info!("training {} episodes on {} (seed {})", config.train.episodes, world.name(), config.seed);
    let report = trainer::resume(&config, &world, &mut state, &mut writer)?;
    write_file(&log_path, &writer.log)?;
    save_checkpoint(&config.out.join("final.ckpt"), &config, &state, config.train.checkpoint_buffer)?;
    write_file(&config.out.join("summary.json"), &to_json(&report))?;
    println!(
        "episodes {}  success {} crash {} timeout {}  final success ratio {:.2}  convergence {}",
        report.episodes,
        report.successes,
        report.crashes,
        report.timeouts,
        report.final_success_ratio,
        report
            .convergence
            .map_or("not reached".to_string(), |c| format!("episode {} ({} steps)", c.episode, c.steps))
    );
    Ok(())
}

fn load_policy_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    load_checkpoint(path).map_err(|e| config_error(anyhow!(e).context(format!("cannot load checkpoint {}", path.display()))))
}

fn format_actions(r: &EvalReport) -> String {
    match (r.actions_mean, r.actions_std) {
        (Some(m), Some(s)) => format!("{m:.1} ± {s:.1}"),
        _ => "n/a".to_string(),
    }
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let mut config = load_config(&args.common)?;
    if let Some(n) = args.n_targets {
        config.eval.n_targets = n;
    }
    let ckpt = load_policy_checkpoint(&args.checkpoint)?;
    let world = load_world(&config.world)?;
    let report = trainer::evaluate(&ckpt.policy(), &world, &config, config.seed)?;
    println!(
        "{}: success {:.1}% ({}/{}), actions {}",
        report.world,
        report.success_ratio * 100.0,
        report.successes,
        report.n_targets,
        format_actions(&report)
    );
    write_file(&config.out.join(format!("eval_{}.json", world.name())), &to_json(&report))?;
    if let Some(dir) = &args.trajectories {
        for (i, record) in report.records.iter().enumerate() {
            write_file(&dir.join(format!("target_{i:03}.csv")), trajectory_csv(record).as_bytes())?;
        }
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), Failure> {
    let mut config = load_config(&args.common)?;
    if let Some(n) = args.n_targets {
        config.eval.n_targets = n;
    }
    let a = load_policy_checkpoint(&args.checkpoint_a)?;
    let b = load_policy_checkpoint(&args.checkpoint_b)?;
    let mut worlds = vec![config.world.clone()];
    worlds.extend(args.also.iter().cloned());
    let mut rows = Vec::new();
    println!("{:<14} | {:<16} | {:>9} | {:>17}", "world", "approach", "success %", "actions mean ± std");
    for spec in &worlds {
        let world = load_world(spec)?;
        for (label, ckpt) in [(&args.label_a, &a), (&args.label_b, &b)] {
            let report = trainer::evaluate(&ckpt.policy(), &world, &config, config.seed)?;
            println!(
                "{:<14} | {:<16} | {:>9.1} | {:>17}",
                world.name(),
                label,
                report.success_ratio * 100.0,
                format_actions(&report)
            );
            rows.push(serde_json::json!({
                "world": world.name(),
                "approach": label,
                "success_percent": report.success_ratio * 100.0,
                "actions_mean": report.actions_mean,
                "actions_std": report.actions_std,
                "report": report,
            }));
        }
    }
    write_file(&config.out.join("compare.json"), &to_json(&rows))?;
    Ok(())
}

fn cmd_waypoint(args: WaypointArgs) -> Result<(), Failure> {
    let config = load_config(&args.common)?;
    let ckpt = load_policy_checkpoint(&args.checkpoint)?;
    let world = load_world(&config.world)?;
    let mut policy = ckpt.policy();
    let run = trainer::waypoint_run(&mut policy, &world, args.start, &args.goals, &config, config.seed)?;
    for (i, leg) in run.legs.iter().enumerate() {
        println!("goal {i} ({:.2}, {:.2}): {:?} after {} steps", leg.goal.x, leg.goal.y, leg.outcome, leg.steps);
    }
    write_file(&config.out.join("waypoints.csv"), trajectory_csv(&run.record).as_bytes())?;
    let img = render_scene(&world, None, &[run.record.trajectory.clone()], &args.goals, 100.0);
    save_png(&img, &config.out.join("waypoints.png"))?;
    Ok(())
}

fn save_png(img: &image::RgbImage, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    write_file(path, &bytes)
}

fn read_trajectory(path: &Path) -> Result<Vec<Pose>, Failure> {
    let malformed = |e: csv::Error| config_error(anyhow!(e).context(format!("malformed trajectory {}", path.display())));
    let mut reader = csv::Reader::from_path(path).map_err(malformed)?;
    let mut poses = Vec::new();
    for row in reader.deserialize::<(f64, f64, f64, f64, f64, f64, f64)>() {
        let (_, x, y, heading, ..) = row.map_err(malformed)?;
        poses.push(Pose::new(x, y, heading));
    }
    Ok(poses)
}

fn cmd_render(args: RenderArgs) -> Result<(), Failure> {
    let world = load_world(&args.world)?;
    let grid: Option<OccupancyGrid> = match (&args.grid, &args.checkpoint) {
        (Some(path), _) => {
            let meta = path.with_extension("json");
            Some(OccupancyGrid::load(path, &meta).map_err(|e| {
                config_error(anyhow!(e).context(format!("malformed grid {}", path.display())))
            })?)
        }
        (None, Some(path)) => Some(load_policy_checkpoint(path)?.slam.grid().clone()),
        (None, None) => None,
    };
    let paths = args.trajectories.iter().map(|p| read_trajectory(p)).collect::<Result<Vec<_>, _>>()?;
    let img = render_scene(&world, grid.as_ref(), &paths, &[], args.px_per_m);
    save_png(&img, &args.output)?;
    if let Some(goal) = args.heatmap_goal {
        let grid = grid.ok_or_else(|| config_error(anyhow!("a heatmap needs --grid or --checkpoint")))?;
        let out = args.heatmap_output.unwrap_or_else(|| args.output.with_extension("heatmap.png"));
        let surface = reward_surface(&world, &grid, goal, args.confidence, &RewardParams::default(), 0.05)
            .map_err(config_error)?;
        let (lo, hi) = surface.range();
        save_png(&render_surface(&surface, lo, hi, 2), &out)?;
    }
    Ok(())
}

fn cmd_check() -> Result<(), Failure> {
    let results = mapnav::check::run_checks();
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if results.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Waypoint(a) => cmd_waypoint(a),
        Command::Render(a) => cmd_render(a),
        Command::Check => cmd_check(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
        Err(Failure::Check) => ExitCode::from(EXIT_CHECK),
    }
}
