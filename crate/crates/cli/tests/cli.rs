use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"
[reward]
max_steps = 40

[agent]
actor_hidden = [8, 8]
critic_hidden = [8, 8]
warmup = 32
batch_size = 8
buffer_capacity = 1000

[train]
episodes = 3
checkpoint_every = 2

[eval]
n_targets = 6
"#;

fn mapnav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mapnav"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path
}

fn train_tiny(dir: &Path, out: &str, seed: &str) -> PathBuf {
    let config = tiny_config(dir);
    let out = dir.join(out);
    let o = mapnav(&["train", "--config", s(&config), "--seed", seed, "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn missing_world_file_is_a_config_error_naming_the_path() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nowhere/room.toml");
    let o = mapnav(&["train", "--world", s(&missing), "--out", s(&tmp.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(s(&missing)));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "[train]\nepisodez = 3\n").unwrap();
    let o = mapnav(&["train", "--config", s(&path), "--out", s(&tmp.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("episodez"));
}

#[test]
fn check_passes() {
    let o = mapnav(&["check"]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().count() >= 5);
    assert!(stdout.lines().all(|l| l.starts_with("PASS ")), "{stdout}");
}

#[test]
fn same_seed_twice_gives_identical_output_directories() {
    let tmp = TempDir::new().unwrap();
    let config = tiny_config(tmp.path());
    // Same relative output path from two working directories, so even the
    // recorded config matches.
    let mut dirs = Vec::new();
    for name in ["a", "b"] {
        let cwd = tmp.path().join(name);
        fs::create_dir_all(&cwd).unwrap();
        let o = Command::new(env!("CARGO_BIN_EXE_mapnav"))
            .args(["train", "--config", s(&config), "--seed", "7", "--out", "run"])
            .current_dir(&cwd)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        dirs.push(files(&cwd.join("run")));
    }
    let names: Vec<_> = dirs[0].iter().map(|(p, _)| p.to_string_lossy().into_owned()).collect();
    for expected in ["config.toml", "episodes.ndjson", "final.ckpt", "summary.json", "checkpoints/episode_000002.ckpt"] {
        assert!(names.iter().any(|n| n == expected), "{expected} missing from {names:?}");
    }
    assert!(dirs[0] == dirs[1], "output directories differ");
}

#[test]
fn checkpoints_drive_eval_compare_waypoint_and_render() {
    let tmp = TempDir::new().unwrap();
    let run = train_tiny(tmp.path(), "run", "3");
    let ckpt = run.join("final.ckpt");
    let config = tiny_config(tmp.path());
    let out = tmp.path().join("out");

    let o = mapnav(&["compare", s(&ckpt), s(&ckpt), "--config", s(&config), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let rows: Vec<Vec<&str>> = stdout.lines().skip(1).map(|l| l.split('|').map(str::trim).collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][1], "A");
    assert_eq!(rows[1][1], "B");
    assert_eq!(rows[0][2..], rows[1][2..]);
    assert!(out.join("compare.json").exists());

    let traj = tmp.path().join("traj");
    let o = mapnav(&["eval", "--checkpoint", s(&ckpt), "--config", s(&config), "--out", s(&out), "--trajectories", s(&traj)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_dir(&traj).unwrap().count(), 6);

    let o = mapnav(&[
        "waypoint", "--checkpoint", s(&ckpt), "--config", s(&config), "--out", s(&out),
        "--start", "0.5,0.5,0", "--goal", "1.0,0.5", "--goal", "1.0,0.5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("waypoints.csv")).unwrap();
    assert!(csv.starts_with("t,x,y,heading,v,omega,reward"));

    let png = tmp.path().join("scene.png");
    let heat = tmp.path().join("heat.png");
    let o = mapnav(&[
        "render", "--world", "bundled:desk_train", "--checkpoint", s(&ckpt), "--trajectory",
        s(&out.join("waypoints.csv")), "--output", s(&png), "--heatmap-goal", "2.5,2.5", "--heatmap-output", s(&heat),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(png.exists() && heat.exists());
}

#[test]
fn world_only_render_has_world_dimensions() {
    let tmp = TempDir::new().unwrap();
    let png = tmp.path().join("world.png");
    let o = mapnav(&["render", "--world", "bundled:desk_train", "--px-per-m", "40", "--output", s(&png)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bytes = fs::read(&png).unwrap();
    assert_eq!(&bytes[1..4], b"PNG");
    // IHDR width and height, big endian.
    let width = u32::from_be_bytes(bytes[16..20].try_into().unwrap());
    let height = u32::from_be_bytes(bytes[20..24].try_into().unwrap());
    assert_eq!((width, height), (120, 120));
}

#[test]
fn checkpoint_with_another_version_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let run = train_tiny(tmp.path(), "run", "1");
    let mut bytes = fs::read(run.join("final.ckpt")).unwrap();
    bytes[4] = bytes[4].wrapping_add(1);
    let bad = tmp.path().join("bad.ckpt");
    fs::write(&bad, bytes).unwrap();
    let good = run.join("final.ckpt");
    let o = mapnav(&["compare", s(&good), s(&bad), "--out", s(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("version"));
}
