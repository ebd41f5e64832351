//! Finite-difference gradient checks shared by the integration targets.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use photospike::nn::Linear;
use photospike::snn::{ActorArch, ActorNet, DenseBackend};
use photospike::td3::{critic_loss_and_grads, CriticNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom < 1e-12 {
        diff
    } else {
        diff / denom
    }
}

fn flatten(l: &Linear) -> Vec<f64> {
    l.weight.iter().chain(l.bias.iter()).copied().collect()
}

/// Central differences of `f` over every weight and bias of `layer`.
fn fd_layer(layer: &mut Linear, f: &mut dyn FnMut(&Linear) -> f64) -> Vec<f64> {
    let (rows, cols) = layer.weight.dim();
    let mut out = Vec::with_capacity(rows * cols + rows);
    for r in 0..rows {
        for c in 0..cols {
            let w0 = layer.weight[[r, c]];
            layer.weight[[r, c]] = w0 + H;
            let fp = f(layer);
            layer.weight[[r, c]] = w0 - H;
            let fm = f(layer);
            layer.weight[[r, c]] = w0;
            out.push((fp - fm) / (2.0 * H));
        }
    }
    for r in 0..rows {
        let b0 = layer.bias[r];
        layer.bias[r] = b0 + H;
        let fp = f(layer);
        layer.bias[r] = b0 - H;
        let fm = f(layer);
        layer.bias[r] = b0;
        out.push((fp - fm) / (2.0 * H));
    }
    out
}

/// Worst relative error of the critic's MSE gradients over all layers, for a
/// random network, batch and target drawn from `seed`.
pub fn critic_gradient_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let input = r.random_range(2..7);
    let hidden = vec![r.random_range(3..10), r.random_range(3..10)];
    let critic = CriticNet::new(input, &hidden, &mut r);
    let n = r.random_range(1..8);
    let x = Array2::from_shape_fn((n, input), |_| r.random_range(-2.0..2.0));
    let y = Array1::from_shape_fn(n, |_| r.random_range(-3.0..3.0));
    let (_, grads) = critic_loss_and_grads(&critic, &x, &y).unwrap();

    let mut worst: f64 = 0.0;
    for k in 0..critic.layers.len() {
        let mut probe = critic.clone();
        let mut layer = probe.layers[k].clone();
        let numeric = fd_layer(&mut layer, &mut |l| {
            probe.layers[k] = l.clone();
            critic_loss_and_grads(&probe, &x, &y).unwrap().0
        });
        worst = worst.max(rel_err(&flatten(&grads[k]), &numeric));
    }
    worst
}

/// Worst relative error of the actor's linear-layer gradients with the spike
/// pattern held fixed. L3 is checked against the smooth head end to end; L1
/// and L2 against the linear current maps driven by the backpropagated
/// current gradients.
pub fn actor_gradient_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let arch = ActorArch {
        state_dim: r.random_range(1..6),
        hidden: r.random_range(2..17),
        action_dim: r.random_range(1..4),
        time_steps: r.random_range(1..5),
    };
    let scale: Vec<f64> = (0..arch.action_dim).map(|_| r.random_range(0.5..3.0)).collect();
    let actor = ActorNet::new(arch, scale.clone(), &mut r).unwrap();
    let state: Vec<f64> = (0..arch.state_dim).map(|_| r.random_range(-3.0..3.0)).collect();
    let upstream: Vec<f64> = (0..arch.action_dim).map(|_| r.random_range(-1.0..1.0)).collect();
    let cache = actor.forward_cached(&state, &DenseBackend(&actor.l2.weight)).unwrap();
    let (grads, cur) = actor.backward_detailed(&cache, &upstream, &actor.l2.weight, false).unwrap();

    let avg = cache.avg.clone();
    let head = |l3: &Linear| -> f64 {
        let z = photospike::linalg::matvec(&l3.weight, &avg);
        z.iter()
            .zip(l3.bias.iter())
            .zip(&scale)
            .zip(&upstream)
            .map(|(((z, b), a), u)| u * a * (z + b).tanh())
            .sum()
    };
    let mut l3 = actor.l3.clone();
    let e3 = rel_err(&flatten(&grads.l3), &fd_layer(&mut l3, &mut |l| head(l)));

    let current_map = |l: &Linear, inputs: &[Vec<f64>], dcur: &[Vec<f64>]| -> f64 {
        inputs
            .iter()
            .zip(dcur)
            .map(|(x, d)| {
                let y = photospike::linalg::matvec(&l.weight, x);
                y.iter().zip(l.bias.iter()).zip(d).map(|((y, b), g)| g * (y + b)).sum::<f64>()
            })
            .sum()
    };
    let mut l2 = actor.l2.clone();
    let e2 = rel_err(&flatten(&grads.l2), &fd_layer(&mut l2, &mut |l| current_map(l, &cache.s1, &cur.d_i2)));
    let states = vec![state.clone(); arch.time_steps];
    let mut l1 = actor.l1.clone();
    let e1 = rel_err(&flatten(&grads.l1), &fd_layer(&mut l1, &mut |l| current_map(l, &states, &cur.d_i1)));
    e1.max(e2).max(e3)
}
