//! Twin-delayed deterministic policy gradient training for the spiking actor.
//!
//! Critics are plain ReLU perceptrons evaluated in mini-batches; the actor is
//! the spiking network from [`crate::snn`], optionally with its second layer
//! served by a frozen backend (for co-training against a photonic mesh).

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::nn::{soft_update, Adam, AdamConfig, Linear};
use crate::snn::{ActorCache, ActorGrads, ActorNet, LinearBackend};

/// Fully connected critic `Q(s, a)` with ReLU hidden layers and a scalar output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticNet {
    pub layers: Vec<Linear>,
}

/// Intermediate activations of a batched critic evaluation.
#[derive(Clone, Debug)]
pub struct CriticCache {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
    pub q: Array1<f64>,
}

impl CriticNet {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let layers = dims.windows(2).map(|w| Linear::uniform(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = !self.layers.is_empty()
            && self.layers.windows(2).all(|w| w[0].output_dim() == w[1].input_dim())
            && self.layers.last().map(Linear::output_dim) == Some(1);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("critic layers do not chain to a scalar output".into()))
        }
    }

    /// Batched forward over rows of `x` (`N × (d_s + d_a)`).
    pub fn forward_cached(&self, x: &Array2<f64>) -> Result<CriticCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dim(self.input_dim(), x.ncols()));
        }
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(last);
        for (k, layer) in self.layers.iter().enumerate() {
            let inp = if k == 0 { x } else { &post[k - 1] };
            let z = inp.dot(&layer.weight.t()) + &layer.bias;
            if k < last {
                post.push(z.mapv(|v| v.max(0.0)));
            }
            pre.push(z);
        }
        let q = pre[last].column(0).to_owned();
        Ok(CriticCache {
            input: x.clone(),
            pre,
            post,
            q,
        })
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward_cached(x)?.q)
    }

    pub fn q(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let x = join_rows(&[state], &[action]);
        Ok(self.forward(&x)?[0])
    }

    /// Gradients of `Σ dq_i·Q(x_i)` with respect to every layer and to the input.
    pub fn backward(&self, cache: &CriticCache, dq: &Array1<f64>) -> Result<(Vec<Linear>, Array2<f64>)> {
        if dq.len() != cache.q.len() {
            return Err(Error::dim(cache.q.len(), dq.len()));
        }
        let n_layers = self.layers.len();
        let mut grads = vec![Linear::zeros(0, 0); n_layers];
        let mut delta = dq.clone().insert_axis(Axis(1));
        for k in (0..n_layers).rev() {
            let inp = if k == 0 { &cache.input } else { &cache.post[k - 1] };
            grads[k] = Linear {
                weight: delta.t().dot(inp),
                bias: delta.sum_axis(Axis(0)),
            };
            let mut d_in = delta.dot(&self.layers[k].weight);
            if k > 0 {
                d_in.zip_mut_with(&cache.pre[k - 1], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            delta = d_in;
        }
        Ok((grads, delta))
    }
}

fn join_rows(a: &[&[f64]], b: &[&[f64]]) -> Array2<f64> {
    let n = a.len();
    let (da, db) = (a.first().map_or(0, |r| r.len()), b.first().map_or(0, |r| r.len()));
    let mut x = Array2::zeros((n, da + db));
    for i in 0..n {
        for (j, v) in a[i].iter().chain(b[i].iter()).enumerate() {
            x[[i, j]] = *v;
        }
    }
    x
}

fn concat_cols(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("row counts match")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s2: Vec<f64>,
    /// Cuts the bootstrap term in the target.
    pub done: bool,
}

/// Column-stacked mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub s: Array2<f64>,
    pub a: Array2<f64>,
    pub r: Array1<f64>,
    pub s2: Array2<f64>,
    pub done: Array1<f64>,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Result<Self> {
        let first = ts.first().ok_or_else(|| Error::Config("empty batch".into()))?;
        let (ds, da) = (first.s.len(), first.a.len());
        let n = ts.len();
        let mut b = Batch {
            s: Array2::zeros((n, ds)),
            a: Array2::zeros((n, da)),
            r: Array1::zeros(n),
            s2: Array2::zeros((n, ds)),
            done: Array1::zeros(n),
        };
        for (i, t) in ts.iter().enumerate() {
            if t.s.len() != ds || t.s2.len() != ds || t.a.len() != da {
                return Err(Error::Config("transitions of mixed shapes in one batch".into()));
            }
            b.s.row_mut(i).assign(&ndarray::aview1(&t.s));
            b.a.row_mut(i).assign(&ndarray::aview1(&t.a));
            b.s2.row_mut(i).assign(&ndarray::aview1(&t.s2));
            b.r[i] = t.r;
            b.done[i] = if t.done { 1.0 } else { 0.0 };
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

/// Bounded FIFO store of transitions with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !t.r.is_finite() {
            return Err(Error::Numeric(format!("non-finite reward {}", t.r)));
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(())
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `n` uniform draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        if self.items.is_empty() {
            return Err(Error::Config("cannot sample from an empty replay buffer".into()));
        }
        let picks: Vec<&Transition> = (0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect();
        Batch::from_transitions(&picks)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmupPolicy {
    /// Uniform random actions within the bounds.
    Random,
    /// The current actor plus exploration noise.
    Policy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Td3Config {
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: usize,
    /// Exploration noise std, in units of the largest action bound.
    pub explore_sigma: f64,
    /// Target smoothing noise std, in units of the largest action bound.
    pub target_sigma: f64,
    /// Target smoothing clip, in units of the largest action bound.
    pub target_clip: f64,
    pub batch: usize,
    pub buffer_capacity: usize,
    pub warmup_steps: usize,
    pub warmup_policy: WarmupPolicy,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub critic_hidden: Vec<usize>,
    pub total_steps: usize,
    pub seed: u64,
    /// Time-limit truncations keep their bootstrap term.
    pub truncation_bootstraps: bool,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Evaluation return marking a run as solved.
    pub solve_return: Option<f64>,
    /// Episodes used to confirm a periodic evaluation that crossed `solve_return`.
    pub confirm_episodes: usize,
    pub stop_when_solved: bool,
    pub ma_window: usize,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            explore_sigma: 0.1,
            target_sigma: 0.2,
            target_clip: 0.5,
            batch: 256,
            buffer_capacity: 1_000_000,
            warmup_steps: 10_000,
            warmup_policy: WarmupPolicy::Random,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            critic_hidden: vec![32, 32],
            total_steps: 150_000,
            seed: 0,
            truncation_bootstraps: true,
            eval_every: 5_000,
            eval_episodes: 10,
            solve_return: None,
            confirm_episodes: 100,
            stop_when_solved: false,
            ma_window: 50,
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.policy_delay == 0 {
            return bad("policy_delay must be at least 1");
        }
        if !(self.target_clip > 0.0) || !(self.explore_sigma >= 0.0) || !(self.target_sigma >= 0.0) {
            return bad("noise scales must be non-negative and target_clip positive");
        }
        if self.batch == 0 || self.buffer_capacity == 0 {
            return bad("batch and buffer capacity must be positive");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.eval_every == 0 || self.eval_episodes == 0 || self.ma_window == 0 {
            return bad("evaluation cadence, episodes and window must be positive");
        }
        Ok(())
    }
}

/// Where the actor's second layer comes from during training.
#[derive(Clone, Copy)]
pub enum L2Source<'a> {
    /// The actor's own trainable weights.
    Software,
    /// A fixed external backend; its digital matrix is used for backprop and
    /// the layer receives no update.
    Frozen(&'a dyn LinearBackend),
}

impl std::fmt::Debug for L2Source<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            L2Source::Software => write!(f, "Software"),
            L2Source::Frozen(_) => write!(f, "Frozen"),
        }
    }
}

fn actor_cache(actor: &ActorNet, l2: L2Source, s: &[f64]) -> Result<ActorCache> {
    match l2 {
        L2Source::Software => actor.forward_cached(s, &crate::snn::DenseBackend(&actor.l2.weight)),
        L2Source::Frozen(b) => actor.forward_cached(s, b),
    }
}

pub fn policy_action(actor: &ActorNet, l2: L2Source, s: &[f64]) -> Result<Vec<f64>> {
    Ok(actor_cache(actor, l2, s)?.action)
}

fn action_max(actor: &ActorNet) -> f64 {
    actor.action_scale.iter().cloned().fold(0.0, f64::max)
}

/// Policy output plus `N(0, σ²)` per dimension, clipped to the action bounds.
pub fn select_action<R: Rng + ?Sized>(
    actor: &ActorNet,
    l2: L2Source,
    s: &[f64],
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut a = policy_action(actor, l2, s)?;
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
        for (x, m) in a.iter_mut().zip(&actor.action_scale) {
            *x = (*x + normal.sample(rng)).clamp(-m, *m);
        }
    }
    Ok(a)
}

/// `r + γ·(1 − done)·min(q1, q2)`.
pub fn bootstrap_target(r: f64, gamma: f64, done: bool, q1: f64, q2: f64) -> f64 {
    if done {
        r
    } else {
        r + gamma * q1.min(q2)
    }
}

/// Smoothed target values for a batch.
pub fn compute_targets<R: Rng + ?Sized>(
    batch: &Batch,
    target_actor: &ActorNet,
    l2: L2Source,
    target_critics: [&CriticNet; 2],
    cfg: &Td3Config,
    rng: &mut R,
) -> Result<Array1<f64>> {
    let n = batch.len();
    let a_max = action_max(target_actor);
    let (sigma, clip) = (cfg.target_sigma * a_max, cfg.target_clip * a_max);
    let normal = if sigma > 0.0 {
        Some(Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let da = target_actor.action_scale.len();
    let mut a2 = Array2::zeros((n, da));
    for i in 0..n {
        let s2 = batch.s2.row(i);
        let act = policy_action(target_actor, l2, s2.as_slice().expect("standard layout"))?;
        for (j, (x, m)) in act.iter().zip(&target_actor.action_scale).enumerate() {
            let eps = normal.map_or(0.0, |d| d.sample(rng).clamp(-clip, clip));
            a2[[i, j]] = (x + eps).clamp(-m, *m);
        }
    }
    let x2 = concat_cols(&batch.s2, &a2);
    let q1 = target_critics[0].forward(&x2)?;
    let q2 = target_critics[1].forward(&x2)?;
    Ok(Array1::from_shape_fn(n, |i| {
        bootstrap_target(batch.r[i], cfg.gamma, batch.done[i] > 0.5, q1[i], q2[i])
    }))
}

/// Single-transition form of [`compute_targets`].
#[allow(clippy::too_many_arguments)]
pub fn compute_target<R: Rng + ?Sized>(
    r: f64,
    s2: &[f64],
    done: bool,
    target_actor: &ActorNet,
    l2: L2Source,
    target_critics: [&CriticNet; 2],
    cfg: &Td3Config,
    rng: &mut R,
) -> Result<f64> {
    let t = Transition {
        s: s2.to_vec(),
        a: vec![0.0; target_actor.action_scale.len()],
        r,
        s2: s2.to_vec(),
        done,
    };
    let batch = Batch::from_transitions(&[&t])?;
    Ok(compute_targets(&batch, target_actor, l2, target_critics, cfg, rng)?[0])
}

/// Mean squared error of one critic and its gradients.
pub fn critic_loss_and_grads(critic: &CriticNet, x: &Array2<f64>, y: &Array1<f64>) -> Result<(f64, Vec<Linear>)> {
    let cache = critic.forward_cached(x)?;
    let n = y.len() as f64;
    let diff = &cache.q - y;
    let loss = diff.mapv(|d| d * d).sum() / n;
    let dq = diff.mapv(|d| 2.0 * d / n);
    let (grads, _) = critic.backward(&cache, &dq)?;
    Ok((loss, grads))
}

/// One optimizer step per critic towards `y`; returns both losses.
pub fn critic_update(critics: &mut [CriticNet; 2], opts: &mut [Adam; 2], batch: &Batch, y: &Array1<f64>) -> Result<(f64, f64)> {
    let x = concat_cols(&batch.s, &batch.a);
    let mut losses = [0.0; 2];
    for k in 0..2 {
        let (loss, grads) = critic_loss_and_grads(&critics[k], &x, y)?;
        let mut refs: Vec<&mut Linear> = critics[k].layers.iter_mut().collect();
        let g: Vec<Option<&Linear>> = grads.iter().map(Some).collect();
        opts[k].step(&mut refs, &g);
        losses[k] = loss;
    }
    Ok((losses[0], losses[1]))
}

/// Deterministic policy gradient `−mean Q1(s, π(s))` and its actor gradients.
pub fn actor_loss_and_grads(actor: &ActorNet, critic: &CriticNet, states: &Array2<f64>, l2: L2Source) -> Result<(f64, ActorGrads)> {
    let n = states.nrows();
    if n == 0 {
        return Err(Error::Config("empty state batch".into()));
    }
    let da = actor.action_scale.len();
    let mut caches = Vec::with_capacity(n);
    let mut actions = Array2::zeros((n, da));
    for i in 0..n {
        let c = actor_cache(actor, l2, states.row(i).as_slice().expect("standard layout"))?;
        actions.row_mut(i).assign(&ndarray::aview1(&c.action));
        caches.push(c);
    }
    let x = concat_cols(states, &actions);
    let cache = critic.forward_cached(&x)?;
    let loss = -cache.q.mean().unwrap_or(0.0);
    let dq = Array1::from_elem(n, -1.0 / n as f64);
    let (_, dx) = critic.backward(&cache, &dq)?;
    let ds = states.ncols();
    let (l2_matrix, freeze) = match l2 {
        L2Source::Software => (&actor.l2.weight, false),
        L2Source::Frozen(b) => (b.matrix(), true),
    };
    let mut total = ActorGrads::zeros_like(actor);
    for (i, c) in caches.iter().enumerate() {
        let upstream = dx.slice(s![i, ds..]).to_vec();
        let (g, _) = actor.backward_detailed(c, &upstream, l2_matrix, freeze)?;
        total.add_assign(&g);
    }
    Ok((loss, total))
}

/// Policy step, allowed only when `update_index` is a multiple of `policy_delay`.
pub fn actor_update(
    actor: &mut ActorNet,
    critic: &CriticNet,
    states: &Array2<f64>,
    l2: L2Source,
    opt: &mut Adam,
    update_index: usize,
    policy_delay: usize,
) -> Result<f64> {
    if policy_delay == 0 || !update_index.is_multiple_of(policy_delay) {
        return Err(Error::Schedule(format!(
            "actor update requested at update {update_index}, delay is {policy_delay}"
        )));
    }
    let (loss, grads) = actor_loss_and_grads(actor, critic, states, l2)?;
    let frozen = matches!(l2, L2Source::Frozen(_));
    let [l1, l2w, l3] = actor.layers_mut();
    opt.step(
        &mut [l1, l2w, l3],
        &[Some(&grads.l1), if frozen { None } else { Some(&grads.l2) }, Some(&grads.l3)],
    );
    Ok(loss)
}

pub fn soft_update_actor(live: &ActorNet, target: &mut ActorNet, tau: f64) -> Result<()> {
    for (l, t) in live.layers().into_iter().zip(target.layers_mut()) {
        soft_update(l, t, tau)?;
    }
    Ok(())
}

pub fn soft_update_critic(live: &CriticNet, target: &mut CriticNet, tau: f64) -> Result<()> {
    if live.layers.len() != target.layers.len() {
        return Err(Error::Config("critic depth mismatch in soft update".into()));
    }
    for (l, t) in live.layers.iter().zip(target.layers.iter_mut()) {
        soft_update(l, t, tau)?;
    }
    Ok(())
}

/// The pair of critics, serialized next to an actor snapshot so that a later
/// run can resume with them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticPair {
    pub critics: [CriticNet; 2],
}

impl CriticPair {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p: CriticPair = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        p.critics[0].validate()?;
        p.critics[1].validate()?;
        Ok(p)
    }
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(k);
    r
}

/// Live and target networks, optimizers and the replay buffer.
#[derive(Clone, Debug)]
pub struct Td3Agent {
    pub cfg: Td3Config,
    pub actor: ActorNet,
    pub actor_target: ActorNet,
    pub critics: [CriticNet; 2],
    pub critic_targets: [CriticNet; 2],
    pub buffer: ReplayBuffer,
    actor_opt: Adam,
    critic_opts: [Adam; 2],
    critic_updates: usize,
    actor_updates: usize,
}

impl Td3Agent {
    /// Fresh critics seeded from `cfg.seed`.
    pub fn new(actor: ActorNet, cfg: Td3Config) -> Result<Self> {
        let input = actor.arch().state_dim + actor.arch().action_dim;
        let mut rng = stream(cfg.seed, 1);
        let critics = [
            CriticNet::new(input, &cfg.critic_hidden, &mut rng),
            CriticNet::new(input, &cfg.critic_hidden, &mut rng),
        ];
        Self::with_critics(actor, critics, cfg)
    }

    pub fn with_critics(actor: ActorNet, critics: [CriticNet; 2], cfg: Td3Config) -> Result<Self> {
        cfg.validate()?;
        actor.validate()?;
        let input = actor.arch().state_dim + actor.arch().action_dim;
        for c in &critics {
            c.validate()?;
            if c.input_dim() != input {
                return Err(Error::dim(input, c.input_dim()));
            }
        }
        let actor_opt = Adam::new(AdamConfig::with_lr(cfg.actor_lr), &actor.layers());
        let critic_opts = [
            Adam::new(AdamConfig::with_lr(cfg.critic_lr), &critics[0].layers.iter().collect::<Vec<_>>()),
            Adam::new(AdamConfig::with_lr(cfg.critic_lr), &critics[1].layers.iter().collect::<Vec<_>>()),
        ];
        Ok(Self {
            buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor,
            critics,
            actor_opt,
            critic_opts,
            critic_updates: 0,
            actor_updates: 0,
            cfg,
        })
    }

    pub fn critic_updates(&self) -> usize {
        self.critic_updates
    }

    pub fn actor_updates(&self) -> usize {
        self.actor_updates
    }

    pub fn critic_pair(&self) -> CriticPair {
        CriticPair {
            critics: self.critics.clone(),
        }
    }

    /// One critic step and, on the delayed cadence, an actor step followed by
    /// soft target updates.
    pub fn update<R: Rng + ?Sized>(&mut self, l2: L2Source, sample_rng: &mut R, noise_rng: &mut R) -> Result<()> {
        let batch = self.buffer.sample(self.cfg.batch, sample_rng)?;
        let y = compute_targets(
            &batch,
            &self.actor_target,
            l2,
            [&self.critic_targets[0], &self.critic_targets[1]],
            &self.cfg,
            noise_rng,
        )?;
        critic_update(&mut self.critics, &mut self.critic_opts, &batch, &y)?;
        self.critic_updates += 1;
        if self.critic_updates.is_multiple_of(self.cfg.policy_delay) {
            actor_update(
                &mut self.actor,
                &self.critics[0],
                &batch.s,
                l2,
                &mut self.actor_opt,
                self.critic_updates,
                self.cfg.policy_delay,
            )?;
            self.actor_updates += 1;
            let tau = self.cfg.tau;
            soft_update_actor(&self.actor, &mut self.actor_target, tau)?;
            for k in 0..2 {
                soft_update_critic(&self.critics[k], &mut self.critic_targets[k], tau)?;
            }
        }
        Ok(())
    }
}

/// One line of the reward trace. Episode rows carry `ret`; evaluation rows
/// carry `eval_mean` and `eval_std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub episode: usize,
    pub ret: Option<f64>,
    pub eval_mean: Option<f64>,
    pub eval_std: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTrace {
    pub rows: Vec<TraceRow>,
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl RewardTrace {
    pub fn episode_returns(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.ret).collect()
    }

    pub fn evaluations(&self) -> Vec<(usize, f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| Some((r.step, r.eval_mean?, r.eval_std?)))
            .collect()
    }

    /// Trailing mean of episode returns over up to `window` episodes.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        let rets = self.episode_returns();
        let w = window.max(1);
        (0..rets.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w);
                rets[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,episode,return,eval_mean,eval_std")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.step,
                r.episode,
                opt_cell(r.ret),
                opt_cell(r.eval_mean),
                opt_cell(r.eval_std)
            )?;
        }
        Ok(())
    }

    /// Parses the layout written by [`RewardTrace::write_csv`].
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let cell = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| Error::Config(format!("bad number {s:?} in reward trace")))
            }
        };
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            if rec.len() != 5 {
                return Err(Error::Config(format!("reward trace row has {} fields, expected 5", rec.len())));
            }
            let int = |s: &str| s.parse().map_err(|_| Error::Config(format!("bad count {s:?} in reward trace")));
            rows.push(TraceRow {
                step: int(&rec[0])?,
                episode: int(&rec[1])?,
                ret: cell(&rec[2])?,
                eval_mean: cell(&rec[3])?,
                eval_std: cell(&rec[4])?,
            });
        }
        Ok(Self { rows })
    }

    /// Raw and moving-average episode returns.
    pub fn write_ma_csv<W: Write>(&self, mut w: W, window: usize) -> Result<()> {
        writeln!(w, "episode,return,ma")?;
        for (k, (r, m)) in self.episode_returns().iter().zip(self.moving_average(window)).enumerate() {
            writeln!(w, "{},{r},{m}", k + 1)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub trace: RewardTrace,
    pub steps: usize,
    /// First step at which the confirmed evaluation reached `solve_return`.
    pub solved_at: Option<usize>,
    pub last_eval: Option<(f64, f64)>,
    pub critic_updates: usize,
    pub actor_updates: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Deterministic-policy returns over `episodes` episodes with fixed reset seeds.
pub fn evaluate(env: &mut dyn Environment, actor: &ActorNet, l2: L2Source, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(episodes);
    for k in 0..episodes {
        let mut s = env.reset(Some(seed.wrapping_add(k as u64)))?;
        let mut total = 0.0;
        loop {
            let a = policy_action(actor, l2, &s)?;
            let st = env.step(&a)?;
            total += st.reward;
            s = st.state;
            if st.done {
                break;
            }
        }
        out.push(total);
    }
    Ok(out)
}

const EVAL_SEED: u64 = 0x5eed_e7a1;

/// Runs the training loop for `cfg.total_steps` environment steps.
pub fn train(env: &mut dyn Environment, agent: &mut Td3Agent, l2: L2Source) -> Result<TrainReport> {
    let cfg = agent.cfg.clone();
    let spec = env.spec().clone();
    spec.validate()?;
    let arch = agent.actor.arch();
    if spec.state_dim != arch.state_dim || spec.action_dim != arch.action_dim {
        return Err(Error::Config(format!(
            "environment is {}→{}, actor is {}→{}",
            spec.state_dim, spec.action_dim, arch.state_dim, arch.action_dim
        )));
    }
    let mut explore_rng = stream(cfg.seed, 2);
    let mut sample_rng = stream(cfg.seed, 3);
    let mut noise_rng = stream(cfg.seed, 4);
    let mut env_rng = stream(cfg.seed, 5);
    let sigma = cfg.explore_sigma * action_max(&agent.actor);

    let mut report = TrainReport {
        trace: RewardTrace::default(),
        steps: 0,
        solved_at: None,
        last_eval: None,
        critic_updates: 0,
        actor_updates: 0,
    };
    if cfg.total_steps == 0 {
        return Ok(report);
    }
    let mut s = env.reset(Some(env_rng.random()))?;
    let mut ep_return = 0.0;
    let mut episodes = 0usize;
    let mut eval_pending = false;

    for t in 0..cfg.total_steps {
        let a = if t < cfg.warmup_steps && cfg.warmup_policy == WarmupPolicy::Random {
            spec.action_low
                .iter()
                .zip(&spec.action_high)
                .map(|(l, h)| explore_rng.random_range(*l..=*h))
                .collect()
        } else {
            select_action(&agent.actor, l2, &s, sigma, &mut explore_rng)?
        };
        let st = env.step(&a)?;
        if st.state.len() != spec.state_dim {
            return Err(Error::Protocol(format!(
                "environment returned {} state entries, expected {}",
                st.state.len(),
                spec.state_dim
            )));
        }
        let terminal = st.done && !(st.truncated && cfg.truncation_bootstraps);
        agent.buffer.push(Transition {
            s: std::mem::take(&mut s),
            a,
            r: st.reward,
            s2: st.state.clone(),
            done: terminal,
        })?;
        ep_return += st.reward;
        s = st.state;
        report.steps = t + 1;

        if t + 1 >= cfg.warmup_steps && agent.buffer.len() >= cfg.batch.min(agent.buffer.capacity()) {
            agent.update(l2, &mut sample_rng, &mut noise_rng)?;
        }
        if (t + 1) % cfg.eval_every == 0 {
            eval_pending = true;
        }

        if st.done {
            episodes += 1;
            report.trace.rows.push(TraceRow {
                step: t + 1,
                episode: episodes,
                ret: Some(ep_return),
                eval_mean: None,
                eval_std: None,
            });
            ep_return = 0.0;
            if eval_pending {
                eval_pending = false;
                let rets = evaluate(env, &agent.actor, l2, cfg.eval_episodes, EVAL_SEED)?;
                let (m, sd) = mean_std(&rets);
                report.trace.rows.push(TraceRow {
                    step: t + 1,
                    episode: episodes,
                    ret: None,
                    eval_mean: Some(m),
                    eval_std: Some(sd),
                });
                report.last_eval = Some((m, sd));
                if let Some(goal) = cfg.solve_return {
                    if m >= goal && report.solved_at.is_none() {
                        let confirmed = if cfg.confirm_episodes > cfg.eval_episodes {
                            let rets = evaluate(env, &agent.actor, l2, cfg.confirm_episodes, EVAL_SEED ^ 0xc0ff)?;
                            let (cm, csd) = mean_std(&rets);
                            report.last_eval = Some((cm, csd));
                            cm >= goal
                        } else {
                            true
                        };
                        if confirmed {
                            report.solved_at = Some(t + 1);
                            if cfg.stop_when_solved {
                                break;
                            }
                        }
                    }
                }
            }
            s = env.reset(Some(env_rng.random()))?;
        }
    }
    report.critic_updates = agent.critic_updates;
    report.actor_updates = agent.actor_updates;
    Ok(report)
}
