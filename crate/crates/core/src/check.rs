//! Fast invariant suite run by `mapnav check`: each check exercises one
//! component against an independent computation and reports pass or fail.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::ddpg::{Critic, OuNoise, OuParams, ReplayBuffer, StateVector, Transition, STATE_DIM};
use crate::nn::{polyak_update, Activation, Matrix, Mlp};
use crate::reward::{dense_reward, map_term, shaped_reward, RewardParams, StepOutcome};
use crate::robot::Action;
use crate::slam::{CellIndex, FovCell};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

const FD_STEP: f64 = 1e-5;

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn actor_gradients(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let acts = [Activation::Relu, Activation::Relu, Activation::VelocityHead];
    let net = Mlp::init_hidden(&[STATE_DIM, 12, 10, 2], &acts, &mut rng).expect("valid dims");
    let x = Matrix::from_vec(4, STATE_DIM, (0..4 * STATE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect());
    let c = Matrix::from_vec(4, 2, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect());
    let objective = |n: &Mlp| -> f64 {
        let y = n.predict(&x).expect("shapes match");
        y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
    };
    let cache = net.forward_batch(&x).expect("shapes match");
    let (grads, _) = net.backward(&cache, &c).expect("shapes match");
    let mut worst = 0.0f64;
    for (k, a) in grads.iter().enumerate() {
        let mut plus = net.clone();
        *plus.params_mut().nth(k).expect("index in range") += FD_STEP;
        let mut minus = net.clone();
        *minus.params_mut().nth(k).expect("index in range") -= FD_STEP;
        worst = worst.max(relative_error(a, (objective(&plus) - objective(&minus)) / (2.0 * FD_STEP)));
    }
    worst
}

fn critic_action_gradients(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let critic = Critic::init(STATE_DIM, &[12, 10], &mut rng).expect("valid dims");
    let s = Matrix::from_vec(4, STATE_DIM, (0..4 * STATE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect());
    let a = Matrix::from_vec(4, 2, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect());
    let dq = Matrix::from_vec(4, 1, (0..4).map(|_| rng.random_range(-1.0..1.0)).collect());
    let objective = |a: &Matrix| -> f64 {
        let q = critic.predict(&s, a).expect("shapes match");
        q.data().iter().zip(dq.data()).map(|(q, w)| q * w).sum()
    };
    let cache = critic.forward_batch(&s, &a).expect("shapes match");
    let (_, _, d_action) = critic.backward(&cache, &dq).expect("shapes match");
    let mut worst = 0.0f64;
    for i in 0..a.data().len() {
        let mut plus = a.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = a.clone();
        minus.data_mut()[i] -= FD_STEP;
        worst = worst.max(relative_error(
            d_action.data()[i],
            (objective(&plus) - objective(&minus)) / (2.0 * FD_STEP),
        ));
    }
    worst
}

fn check_gradients() -> CheckResult {
    let worst = (0..5).map(|s| actor_gradients(s).max(critic_action_gradients(s))).fold(0.0, f64::max);
    result("gradients", worst < 1e-4, format!("max relative error {worst:.2e} over 5 seeds"))
}

fn check_polyak() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let acts = [Activation::Relu, Activation::Linear];
    let online = Mlp::init(&[4, 6, 2], &acts, &mut rng).expect("valid dims");
    let mut target = Mlp::init(&[4, 6, 2], &acts, &mut rng).expect("valid dims");
    let before: Vec<f64> = target.params().collect();
    let tau = 0.001;
    polyak_update(&mut target, &online, tau).expect("same architecture");
    let worst = target
        .params()
        .zip(online.params())
        .zip(&before)
        .map(|((t, o), b)| (t - (tau * o + (1.0 - tau) * b)).abs())
        .fold(0.0, f64::max);
    result("polyak", worst <= 1e-15, format!("max elementwise deviation {worst:.2e}"))
}

fn check_reward() -> CheckResult {
    let p = RewardParams::default();
    let running = StepOutcome::Running;
    let decreasing = (0..100).all(|i| {
        let d = i as f64 * 0.05;
        dense_reward(d + 0.05, running, &p).unwrap() < dense_reward(d, running, &p).unwrap()
    });
    let cells = [
        FovCell { cell: CellIndex { ix: 0, iy: 0 }, distance: 0.5 },
        FovCell { cell: CellIndex { ix: 1, iy: 0 }, distance: 1.0 },
    ];
    let expected = 0.8 * ((-0.5f64).exp() + (-1.0f64).exp()) / 2.0;
    let term_ok = (map_term(&cells, 0.8).unwrap() - expected).abs() < 1e-12;
    let bounded = shaped_reward(1.0, running, &cells, 0.8, &p).unwrap() <= dense_reward(1.0, running, &p).unwrap();
    let terminal = [StepOutcome::Reached, StepOutcome::Crashed, StepOutcome::TimedOut]
        .into_iter()
        .all(|o| shaped_reward(0.1, o, &cells, 1.0, &p).unwrap() == dense_reward(0.1, o, &p).unwrap());
    let passed = decreasing && term_ok && bounded && terminal;
    result(
        "reward",
        passed,
        format!("decreasing {decreasing}, map term {term_ok}, shaped<=dense {bounded}, terminal invariant {terminal}"),
    )
}

fn check_ou() -> CheckResult {
    let params = OuParams::default();
    let mut noise = OuNoise::new(params);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let burn_in = 1_000;
    let n = 1_000_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for i in 0..burn_in + n {
        let x = noise.sample(&mut rng)[0];
        if i >= burn_in {
            sum += x;
            sq += x * x;
        }
    }
    let mean = sum / n as f64;
    let std = (sq / n as f64 - mean * mean).sqrt();
    let target = params.sigma / (2.0 * params.theta).sqrt();
    let rel = (std - target).abs() / target;
    result("ou_noise", rel < 0.05, format!("std {std:.4} vs {target:.4} ({:.2}% off)", rel * 100.0))
}

fn check_buffer() -> CheckResult {
    let capacity = 1000;
    let mut buffer = ReplayBuffer::new(capacity).expect("nonzero capacity");
    let state = |k: usize| StateVector::from_features(vec![k as f64; STATE_DIM]).expect("state width");
    for k in 0..capacity + 250 {
        buffer.push(&Transition {
            state: state(k),
            action: Action::default(),
            reward: k as f64,
            next_state: state(k),
            terminal: false,
        });
    }
    let oldest = buffer.get(0).map(|t| t.reward);
    let newest = buffer.get(capacity - 1).map(|t| t.reward);
    let passed = buffer.len() == capacity && oldest == Some(250.0) && newest == Some((capacity + 249) as f64);
    result("replay_fifo", passed, format!("len {}, oldest {oldest:?}, newest {newest:?}", buffer.len()))
}

fn check_config() -> CheckResult {
    let mut passed = true;
    for c in [RunConfig::paper(), RunConfig::desk()] {
        passed &= RunConfig::from_toml_str(&c.to_toml_string(), "paper").is_ok_and(|back| back == c);
    }
    result("config_round_trip", passed, "presets dump and reload unchanged".to_string())
}

pub fn run_checks() -> Vec<CheckResult> {
    vec![
        check_gradients(),
        check_polyak(),
        check_reward(),
        check_ou(),
        check_buffer(),
        check_config(),
    ]
}
