mod common;

use ndarray::{Array1, Array2};
use photospike::envs::{Pendulum, PendulumParams};
use photospike::nn::{Adam, AdamConfig, Linear};
use photospike::snn::{ActorArch, ActorNet};
use photospike::td3::{
    actor_loss_and_grads, actor_update, train, CriticNet, L2Source, Td3Agent, Td3Config, Transition,
};
use photospike::hybrid::MeshBackend;
use rand::Rng;

use common::rng;

#[test]
fn critic_gradients_match_finite_differences() {
    for seed in 0..25 {
        let e = common::critic_gradient_error(seed);
        assert!(e < 1e-4, "instance {seed}: relative error {e:.3e}");
    }
}

#[test]
fn frozen_spike_actor_gradients_match_finite_differences() {
    for seed in 0..25 {
        let e = common::actor_gradient_error(seed);
        assert!(e < 1e-4, "instance {seed}: relative error {e:.3e}");
    }
}

fn pendulum_actor(seed: u64) -> ActorNet {
    ActorNet::new(ActorArch::pendulum(), vec![2.0], &mut rng(seed)).unwrap()
}

fn random_states(n: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((n, 3), |(_, c)| match c {
        2 => r.random_range(-8.0..8.0),
        _ => r.random_range(-1.0..1.0),
    })
}

/// `Q(s, a) = −|a|` written as a two-layer ReLU network.
fn abs_critic() -> CriticNet {
    let mut hidden = Linear::zeros(4, 2);
    hidden.weight[[0, 3]] = 1.0;
    hidden.weight[[1, 3]] = -1.0;
    let mut out = Linear::zeros(2, 1);
    out.weight[[0, 0]] = -1.0;
    out.weight[[0, 1]] = -1.0;
    CriticNet { layers: vec![hidden, out] }
}

#[test]
fn policy_gradient_ascends_the_critic() {
    let mut actor = pendulum_actor(3);
    let critic = abs_critic();
    let states = random_states(64, 4);
    let mut opt = Adam::new(AdamConfig::with_lr(3e-3), &actor.layers());
    let (before, _) = actor_loss_and_grads(&actor, &critic, &states, L2Source::Software).unwrap();
    for k in 1..=40 {
        actor_update(&mut actor, &critic, &states, L2Source::Software, &mut opt, 2 * k, 2).unwrap();
    }
    let (after, _) = actor_loss_and_grads(&actor, &critic, &states, L2Source::Software).unwrap();
    assert!(after < before, "−mean Q went from {before} to {after}");
}

#[test]
fn frozen_l2_receives_no_gradient_and_keeps_its_bits() {
    let mut actor = pendulum_actor(5);
    let critic = abs_critic();
    let states = random_states(32, 6);
    let backend = MeshBackend::exact(actor.l2.weight.mapv(|w| 0.9 * w), 0.0, 0);
    actor.l2.weight = photospike::snn::LinearBackend::matrix(&backend).clone();
    let (_, g) = actor_loss_and_grads(&actor, &critic, &states, L2Source::Frozen(&backend)).unwrap();
    assert!(g.l2.weight.iter().all(|x| *x == 0.0));
    let frozen = actor.l2.weight.clone();
    let mut opt = Adam::new(AdamConfig::with_lr(1e-2), &actor.layers());
    for k in 1..=10 {
        actor_update(&mut actor, &critic, &states, L2Source::Frozen(&backend), &mut opt, k, 1).unwrap();
    }
    assert_eq!(actor.l2.weight, frozen);
}

#[test]
fn actor_updates_follow_the_policy_delay() {
    let cfg = Td3Config {
        batch: 32,
        ..Default::default()
    };
    let mut agent = Td3Agent::new(pendulum_actor(0), cfg).unwrap();
    let mut r = rng(1);
    for _ in 0..100 {
        let s: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        agent
            .buffer
            .push(Transition {
                s2: s.clone(),
                s,
                a: vec![r.random_range(-2.0..2.0)],
                r: r.random_range(-10.0..0.0),
                done: false,
            })
            .unwrap();
    }
    let (mut a, mut b) = (rng(2), rng(3));
    for _ in 0..1000 {
        agent.update(L2Source::Software, &mut a, &mut b).unwrap();
    }
    assert_eq!(agent.critic_updates(), 1000);
    assert_eq!(agent.actor_updates(), 500);
}

#[test]
fn zero_step_budget_is_a_no_op() {
    let cfg = Td3Config {
        total_steps: 0,
        ..Default::default()
    };
    let actor = pendulum_actor(0);
    let mut agent = Td3Agent::new(actor.clone(), cfg).unwrap();
    let mut env = Pendulum::new(PendulumParams::default(), 0).unwrap();
    let report = train(&mut env, &mut agent, L2Source::Software).unwrap();
    assert_eq!(report.steps, 0);
    assert!(report.trace.rows.is_empty());
    assert_eq!(agent.actor, actor);
    assert!(agent.buffer.is_empty());
}

fn short_run(seed: u64) -> (photospike::td3::RewardTrace, ActorNet) {
    let cfg = Td3Config {
        seed,
        total_steps: 1500,
        warmup_steps: 400,
        batch: 32,
        eval_every: 600,
        eval_episodes: 2,
        ..Default::default()
    };
    let mut agent = Td3Agent::new(pendulum_actor(seed), cfg).unwrap();
    let mut env = Pendulum::new(PendulumParams::default(), seed).unwrap();
    let report = train(&mut env, &mut agent, L2Source::Software).unwrap();
    (report.trace, agent.actor)
}

#[test]
fn same_seed_gives_identical_traces() {
    let (t1, a1) = short_run(11);
    let (t2, a2) = short_run(11);
    assert_eq!(t1, t2);
    assert_eq!(a1, a2);
    assert_eq!(t1.episode_returns().len(), 7);
    assert_eq!(t1.evaluations().len(), 2);
    let (t3, _) = short_run(12);
    assert_ne!(t1, t3);
}

#[test]
fn critic_loss_is_the_mean_squared_error() {
    let critic = abs_critic();
    let x = Array2::from_shape_vec((2, 4), vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -2.0]).unwrap();
    let y = Array1::from_vec(vec![0.0, 0.0]);
    let (loss, _) = photospike::td3::critic_loss_and_grads(&critic, &x, &y).unwrap();
    assert!((loss - 2.5).abs() < 1e-12);
}
