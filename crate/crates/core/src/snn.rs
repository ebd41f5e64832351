//! Spiking actor: LIF dynamics, direct-current encoding, a temporally
//! unrolled forward pass and surrogate-gradient backpropagation through time.
//!
//! Discrete LIF recurrence with hard reset to zero:
//!
//! ```text
//! u_t = λ·u_{t−1}·(1 − s_{t−1}) + I_t
//! s_t = [u_t ≥ V_th]
//! ```
//!
//! The actor is `state → L1 → LIF → L2 → LIF → mean over T → L3 → tanh · a_max`.
//! The second linear layer is supplied by a [`LinearBackend`], so the same
//! network runs against a dense digital matrix or a simulated photonic mesh.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matvec, matvec_t};
use crate::nn::Linear;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    #[default]
    HardZero,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifConfig {
    /// Membrane leak factor λ in [0, 1).
    pub decay: f64,
    pub threshold: f64,
    #[serde(default)]
    pub reset: ResetMode,
    /// Half-width `a` of the rectangular pseudo-derivative.
    pub surrogate_width: f64,
}

impl Default for LifConfig {
    fn default() -> Self {
        Self {
            decay: 0.5,
            threshold: 1.0,
            reset: ResetMode::HardZero,
            surrogate_width: 0.5,
        }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.decay) {
            return Err(Error::Config(format!("LIF decay {} outside [0, 1)", self.decay)));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::Config(format!("LIF threshold {} must be positive", self.threshold)));
        }
        if !(self.surrogate_width > 0.0 && self.surrogate_width.is_finite()) {
            return Err(Error::Config(format!(
                "surrogate width {} must be positive",
                self.surrogate_width
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LifState {
    pub membrane: Vec<f64>,
    pub last_spikes: Vec<f64>,
}

impl LifState {
    pub fn rest(size: usize) -> Self {
        Self {
            membrane: vec![0.0; size],
            last_spikes: vec![0.0; size],
        }
    }
}

/// Advances a LIF population by one step. The returned state carries the new
/// membrane and spikes; the reset is applied on the following step.
pub fn lif_step(state: &LifState, cfg: &LifConfig, current: &[f64]) -> Result<(LifState, Vec<f64>)> {
    let n = state.membrane.len();
    if current.len() != n || state.last_spikes.len() != n {
        return Err(Error::dim(n, current.len()));
    }
    if let Some(bad) = current.iter().find(|c| !c.is_finite()) {
        return Err(Error::Numeric(format!("non-finite input current {bad}")));
    }
    let mut membrane = Vec::with_capacity(n);
    let mut spikes = Vec::with_capacity(n);
    for k in 0..n {
        let u = lif_membrane(cfg, state.membrane[k], state.last_spikes[k], current[k]);
        membrane.push(u);
        spikes.push(spike(cfg, u));
    }
    Ok((
        LifState {
            membrane,
            last_spikes: spikes.clone(),
        },
        spikes,
    ))
}

#[inline]
fn lif_membrane(cfg: &LifConfig, u: f64, s: f64, current: f64) -> f64 {
    cfg.decay * u * (1.0 - s) + current
}

#[inline]
fn spike(cfg: &LifConfig, u: f64) -> f64 {
    if u >= cfg.threshold {
        1.0
    } else {
        0.0
    }
}

/// Direct-current coding: the observation is injected unchanged at every step.
pub fn encode(observation: &[f64], time_steps: usize) -> Vec<Vec<f64>> {
    vec![observation.to_vec(); time_steps]
}

/// Rectangular pseudo-derivative of the spike function at `u − V_th`.
#[inline]
pub fn surrogate_grad(u_minus_th: f64, width: f64) -> f64 {
    if u_minus_th.abs() < width {
        1.0 / (2.0 * width)
    } else {
        0.0
    }
}

/// Provider of the second linear layer's matrix product `y = W x`.
pub trait LinearBackend {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// Digital stand-in for `W`, used to backpropagate through the layer.
    fn matrix(&self) -> &Array2<f64>;
}

/// Plain digital matrix product.
#[derive(Clone, Copy, Debug)]
pub struct DenseBackend<'a>(pub &'a Array2<f64>);

impl LinearBackend for DenseBackend<'_> {
    fn input_dim(&self) -> usize {
        self.0.ncols()
    }

    fn output_dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.0.ncols() {
            return Err(Error::dim(self.0.ncols(), x.len()));
        }
        Ok(matvec(self.0, x))
    }

    fn matrix(&self) -> &Array2<f64> {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorArch {
    pub state_dim: usize,
    pub hidden: usize,
    pub action_dim: usize,
    pub time_steps: usize,
}

impl ActorArch {
    pub fn pendulum() -> Self {
        Self {
            state_dim: 3,
            hidden: 16,
            action_dim: 1,
            time_steps: 1,
        }
    }

    pub fn half_cheetah() -> Self {
        Self {
            state_dim: 17,
            hidden: 16,
            action_dim: 6,
            time_steps: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.hidden == 0 || self.action_dim == 0 {
            return Err(Error::Config(format!("degenerate actor architecture {self:?}")));
        }
        if self.time_steps == 0 {
            return Err(Error::Config("spike time steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Layer-2 spikes of every step and their temporal mean.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTrace {
    pub spikes: Vec<Vec<f64>>,
    pub spike_count_avg: Vec<f64>,
    /// Layer-1 spikes entering the second linear layer, per step.
    pub l2_inputs: Vec<Vec<f64>>,
    /// Pure matrix products leaving the second linear layer (no bias), per step.
    pub l2_products: Vec<Vec<f64>>,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorCache {
    pub state: Vec<f64>,
    pub u1: Vec<Vec<f64>>,
    pub s1: Vec<Vec<f64>>,
    pub l2_products: Vec<Vec<f64>>,
    pub u2: Vec<Vec<f64>>,
    pub s2: Vec<Vec<f64>>,
    pub avg: Vec<f64>,
    pub pre_tanh: Vec<f64>,
    pub action: Vec<f64>,
}

impl ActorCache {
    pub fn trace(&self) -> SpikeTrace {
        SpikeTrace {
            spikes: self.s2.clone(),
            spike_count_avg: self.avg.clone(),
            l2_inputs: self.s1.clone(),
            l2_products: self.l2_products.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorGrads {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
}

impl ActorGrads {
    pub fn zeros_like(net: &ActorNet) -> Self {
        Self {
            l1: net.l1.zeros_like(),
            l2: net.l2.zeros_like(),
            l3: net.l3.zeros_like(),
        }
    }

    pub fn add_assign(&mut self, other: &ActorGrads) {
        self.l1.add_assign(&other.l1);
        self.l2.add_assign(&other.l2);
        self.l3.add_assign(&other.l3);
    }

    pub fn scale(&mut self, k: f64) {
        self.l1.scale(k);
        self.l2.scale(k);
        self.l3.scale(k);
    }
}

/// Gradients with respect to each step's input currents, exposed for
/// layer-local gradient checks.
#[derive(Clone, Debug, PartialEq)]
pub struct CurrentGrads {
    pub d_i1: Vec<Vec<f64>>,
    pub d_i2: Vec<Vec<f64>>,
    pub d_pre_tanh: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorNet {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
    pub lif1: LifConfig,
    pub lif2: LifConfig,
    pub time_steps: usize,
    pub action_scale: Vec<f64>,
}

impl ActorNet {
    /// Uniform `±1/sqrt(fan_in)` weights. Spiking layers get their biases
    /// shifted up by the firing threshold so that roughly half of the
    /// neurons start inside the surrogate window.
    pub fn new<R: Rng + ?Sized>(arch: ActorArch, action_scale: Vec<f64>, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        if action_scale.len() != arch.action_dim {
            return Err(Error::dim(arch.action_dim, action_scale.len()));
        }
        let lif = LifConfig::default();
        let mut l1 = Linear::uniform(arch.state_dim, arch.hidden, rng);
        let mut l2 = Linear::uniform(arch.hidden, arch.hidden, rng);
        let l3 = Linear::uniform(arch.hidden, arch.action_dim, rng);
        l1.bias += lif.threshold;
        l2.bias += lif.threshold;
        Ok(Self {
            l1,
            l2,
            l3,
            lif1: lif,
            lif2: lif,
            time_steps: arch.time_steps,
            action_scale,
        })
    }

    pub fn zeros(arch: ActorArch, action_scale: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if action_scale.len() != arch.action_dim {
            return Err(Error::dim(arch.action_dim, action_scale.len()));
        }
        Ok(Self {
            l1: Linear::zeros(arch.state_dim, arch.hidden),
            l2: Linear::zeros(arch.hidden, arch.hidden),
            l3: Linear::zeros(arch.hidden, arch.action_dim),
            lif1: LifConfig::default(),
            lif2: LifConfig::default(),
            time_steps: arch.time_steps,
            action_scale,
        })
    }

    pub fn arch(&self) -> ActorArch {
        ActorArch {
            state_dim: self.l1.input_dim(),
            hidden: self.l1.output_dim(),
            action_dim: self.l3.output_dim(),
            time_steps: self.time_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.arch();
        a.validate()?;
        self.lif1.validate()?;
        self.lif2.validate()?;
        let shape_ok = self.l1.bias.len() == a.hidden
            && self.l2.weight.dim() == (a.hidden, a.hidden)
            && self.l2.bias.len() == a.hidden
            && self.l3.weight.ncols() == a.hidden
            && self.l3.bias.len() == a.action_dim
            && self.action_scale.len() == a.action_dim;
        if !shape_ok {
            return Err(Error::Config("inconsistent actor layer shapes".into()));
        }
        if self.action_scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("action scale must be positive".into()));
        }
        Ok(())
    }

    pub fn layers(&self) -> [&Linear; 3] {
        [&self.l1, &self.l2, &self.l3]
    }

    pub fn layers_mut(&mut self) -> [&mut Linear; 3] {
        [&mut self.l1, &mut self.l2, &mut self.l3]
    }

    /// Software inference with the digital L2 matrix.
    pub fn forward(&self, state: &[f64]) -> Result<(Vec<f64>, SpikeTrace)> {
        self.forward_with(state, &DenseBackend(&self.l2.weight))
    }

    pub fn forward_with(&self, state: &[f64], backend: &dyn LinearBackend) -> Result<(Vec<f64>, SpikeTrace)> {
        let cache = self.forward_cached(state, backend)?;
        let trace = cache.trace();
        Ok((cache.action, trace))
    }

    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(state)?.0)
    }

    /// Forward pass keeping every intermediate needed by [`Self::backward`].
    pub fn forward_cached(&self, state: &[f64], backend: &dyn LinearBackend) -> Result<ActorCache> {
        if state.len() != self.l1.input_dim() {
            return Err(Error::dim(self.l1.input_dim(), state.len()));
        }
        if let Some(bad) = state.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite observation {bad}")));
        }
        let (u1, s1) = self.layer1(state);
        self.tail(state.to_vec(), u1, s1, backend)
    }

    /// Layer-1 spike vectors entering L2, one per time step.
    pub fn l2_inputs(&self, state: &[f64]) -> Result<Vec<Vec<f64>>> {
        if state.len() != self.l1.input_dim() {
            return Err(Error::dim(self.l1.input_dim(), state.len()));
        }
        Ok(self.layer1(state).1)
    }

    /// Runs L2 onwards from recorded layer-1 spikes.
    pub fn forward_from_l2_inputs(&self, s1: &[Vec<f64>], backend: &dyn LinearBackend) -> Result<ActorCache> {
        if s1.len() != self.time_steps {
            return Err(Error::dim(self.time_steps, s1.len()));
        }
        let h = self.l1.output_dim();
        if let Some(bad) = s1.iter().find(|s| s.len() != h) {
            return Err(Error::dim(h, bad.len()));
        }
        self.tail(Vec::new(), Vec::new(), s1.to_vec(), backend)
    }

    fn layer1(&self, state: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let h = self.l1.output_dim();
        let currents = encode(state, self.time_steps);
        let mut u = vec![0.0; h];
        let mut s = vec![0.0; h];
        let mut us = Vec::with_capacity(self.time_steps);
        let mut ss = Vec::with_capacity(self.time_steps);
        for x in &currents {
            let i1 = matvec(&self.l1.weight, x);
            for k in 0..h {
                u[k] = lif_membrane(&self.lif1, u[k], s[k], i1[k] + self.l1.bias[k]);
                s[k] = spike(&self.lif1, u[k]);
            }
            us.push(u.clone());
            ss.push(s.clone());
        }
        (us, ss)
    }

    fn tail(
        &self,
        state: Vec<f64>,
        u1: Vec<Vec<f64>>,
        s1: Vec<Vec<f64>>,
        backend: &dyn LinearBackend,
    ) -> Result<ActorCache> {
        let h = self.l2.output_dim();
        if backend.input_dim() != self.l1.output_dim() || backend.output_dim() != h {
            return Err(Error::Config(format!(
                "L2 backend is {}×{}, actor hidden size is {h}",
                backend.output_dim(),
                backend.input_dim()
            )));
        }
        let t_steps = self.time_steps as f64;
        let mut u = vec![0.0; h];
        let mut s = vec![0.0; h];
        let mut avg = vec![0.0; h];
        let mut products = Vec::with_capacity(self.time_steps);
        let mut us = Vec::with_capacity(self.time_steps);
        let mut ss = Vec::with_capacity(self.time_steps);
        for x in &s1 {
            let y = backend.apply(x)?;
            if y.len() != h {
                return Err(Error::Config(format!("L2 backend returned {} outputs, expected {h}", y.len())));
            }
            for k in 0..h {
                u[k] = lif_membrane(&self.lif2, u[k], s[k], y[k] + self.l2.bias[k]);
                s[k] = spike(&self.lif2, u[k]);
                avg[k] += s[k];
            }
            products.push(y);
            us.push(u.clone());
            ss.push(s.clone());
        }
        avg.iter_mut().for_each(|a| *a /= t_steps);
        let mut pre_tanh = matvec(&self.l3.weight, &avg);
        for (z, b) in pre_tanh.iter_mut().zip(self.l3.bias.iter()) {
            *z += b;
        }
        let action = pre_tanh
            .iter()
            .zip(&self.action_scale)
            .map(|(z, a)| z.tanh() * a)
            .collect();
        Ok(ActorCache {
            state,
            u1,
            s1,
            l2_products: products,
            u2: us,
            s2: ss,
            avg,
            pre_tanh,
            action,
        })
    }

    /// Parameter gradients for `dLoss/daction = upstream`, using the digital L2.
    pub fn backward(&self, cache: &ActorCache, upstream: &[f64]) -> Result<ActorGrads> {
        Ok(self.backward_detailed(cache, upstream, &self.l2.weight, false)?.0)
    }

    /// Backpropagation through time. `l2_matrix` is the matrix the forward
    /// pass effectively used for L2; with `freeze_l2` the L2 gradient stays
    /// zero while the signal still flows through it to L1.
    pub fn backward_detailed(
        &self,
        cache: &ActorCache,
        upstream: &[f64],
        l2_matrix: &Array2<f64>,
        freeze_l2: bool,
    ) -> Result<(ActorGrads, CurrentGrads)> {
        let ArchDims { h, t } = self.dims();
        if cache.s1.len() != t || cache.u1.len() != t || cache.s2.len() != t || cache.state.len() != self.l1.input_dim()
        {
            return Err(Error::Usage(
                "backward needs a full forward cache for this network".into(),
            ));
        }
        if upstream.len() != self.l3.output_dim() {
            return Err(Error::dim(self.l3.output_dim(), upstream.len()));
        }
        let mut grads = ActorGrads::zeros_like(self);

        // Output head.
        let d_pre: Vec<f64> = upstream
            .iter()
            .zip(&cache.pre_tanh)
            .zip(&self.action_scale)
            .map(|((g, z), a)| {
                let th = z.tanh();
                g * a * (1.0 - th * th)
            })
            .collect();
        for (r, &g) in d_pre.iter().enumerate() {
            grads.l3.bias[r] = g;
            for c in 0..h {
                grads.l3.weight[[r, c]] = g * cache.avg[c];
            }
        }
        let d_avg = matvec_t(&self.l3.weight, &d_pre);

        let t_f = t as f64;
        let direct2: Vec<Vec<f64>> = vec![d_avg.iter().map(|g| g / t_f).collect(); t];
        let d_i2 = bptt_lif(&self.lif2, &cache.u2, &cache.s2, &direct2);

        let mut direct1 = Vec::with_capacity(t);
        for (step, d) in d_i2.iter().enumerate() {
            if !freeze_l2 {
                accumulate_outer(&mut grads.l2, d, &cache.s1[step]);
            }
            direct1.push(matvec_t(l2_matrix, d));
        }
        let d_i1 = bptt_lif(&self.lif1, &cache.u1, &cache.s1, &direct1);
        for d in &d_i1 {
            accumulate_outer(&mut grads.l1, d, &cache.state);
        }
        Ok((
            grads,
            CurrentGrads {
                d_i1,
                d_i2,
                d_pre_tanh: d_pre,
            },
        ))
    }

    fn dims(&self) -> ArchDims {
        ArchDims {
            h: self.l1.output_dim(),
            t: self.time_steps,
        }
    }

    pub fn to_snapshot(&self) -> ActorSnapshot {
        let a = self.arch();
        ActorSnapshot {
            arch: [a.state_dim, a.hidden, a.hidden, a.action_dim],
            time_steps: self.time_steps,
            lif: LifPair {
                layer1: self.lif1,
                layer2: self.lif2,
            },
            w1: rows(&self.l1.weight),
            b1: self.l1.bias.to_vec(),
            w2: rows(&self.l2.weight),
            b2: self.l2.bias.to_vec(),
            w3: rows(&self.l3.weight),
            b3: self.l3.bias.to_vec(),
            action_scale: self.action_scale.clone(),
        }
    }

    pub fn from_snapshot(s: &ActorSnapshot) -> Result<Self> {
        let [ds, h1, h2, da] = s.arch;
        if h1 != h2 {
            return Err(Error::Config(format!("hidden sizes {h1} and {h2} differ")));
        }
        let net = Self {
            l1: linear_from(&s.w1, &s.b1, ds, h1, "W1")?,
            l2: linear_from(&s.w2, &s.b2, h1, h2, "W2")?,
            l3: linear_from(&s.w3, &s.b3, h2, da, "W3")?,
            lif1: s.lif.layer1,
            lif2: s.lif.layer2,
            time_steps: s.time_steps,
            action_scale: s.action_scale.clone(),
        };
        net.validate()?;
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_snapshot())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_snapshot(&serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

struct ArchDims {
    h: usize,
    t: usize,
}

/// Gradient of the loss with respect to each step's input current, given the
/// direct gradient reaching each step's spikes. Follows the reset path
/// `∂u_{t+1}/∂s_t = −λ·u_t` as well as the leak `∂u_{t+1}/∂u_t = λ·(1 − s_t)`.
fn bptt_lif(cfg: &LifConfig, u: &[Vec<f64>], s: &[Vec<f64>], direct: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let t = u.len();
    let h = u.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; h]; t];
    let mut du_next = vec![0.0; h];
    for step in (0..t).rev() {
        let last = step + 1 == t;
        for k in 0..h {
            let mut ds = direct[step][k];
            if !last {
                ds -= du_next[k] * cfg.decay * u[step][k];
            }
            let mut du = ds * surrogate_grad(u[step][k] - cfg.threshold, cfg.surrogate_width);
            if !last {
                du += du_next[k] * cfg.decay * (1.0 - s[step][k]);
            }
            out[step][k] = du;
        }
        du_next.copy_from_slice(&out[step]);
    }
    out
}

fn accumulate_outer(g: &mut Linear, d: &[f64], x: &[f64]) {
    for (r, &dr) in d.iter().enumerate() {
        if dr == 0.0 {
            continue;
        }
        g.bias[r] += dr;
        for (c, &xc) in x.iter().enumerate() {
            g.weight[[r, c]] += dr * xc;
        }
    }
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn linear_from(w: &[Vec<f64>], b: &[f64], input: usize, output: usize, name: &str) -> Result<Linear> {
    if w.len() != output || w.iter().any(|r| r.len() != input) || b.len() != output {
        return Err(Error::Config(format!("{name} does not match a {output}×{input} layer")));
    }
    let flat: Vec<f64> = w.iter().flatten().copied().collect();
    Ok(Linear {
        weight: Array2::from_shape_vec((output, input), flat).expect("shape checked"),
        bias: Array1::from_vec(b.to_vec()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifPair {
    pub layer1: LifConfig,
    pub layer2: LifConfig,
}

/// Weight snapshot file: the interchange format between training,
/// calibration and inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorSnapshot {
    pub arch: [usize; 4],
    #[serde(rename = "T")]
    pub time_steps: usize,
    pub lif: LifPair,
    #[serde(rename = "W1")]
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    #[serde(rename = "W2")]
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
    #[serde(rename = "W3")]
    pub w3: Vec<Vec<f64>>,
    pub b3: Vec<f64>,
    pub action_scale: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lif_quiescent() {
        let cfg = LifConfig::default();
        let (st, s) = lif_step(&LifState::rest(3), &cfg, &[0.0; 3]).unwrap();
        assert_eq!(s, vec![0.0; 3]);
        assert_eq!(st.membrane, vec![0.0; 3]);
    }

    #[test]
    fn lif_constant_drive_fires_on_third_step() {
        let cfg = LifConfig::default();
        let mut st = LifState::rest(1);
        let mut us = Vec::new();
        let mut first = None;
        for t in 1..=3 {
            let (next, s) = lif_step(&st, &cfg, &[0.6]).unwrap();
            us.push(next.membrane[0]);
            if s[0] == 1.0 && first.is_none() {
                first = Some(t);
            }
            st = next;
        }
        assert!((us[0] - 0.6).abs() < 1e-15);
        assert!((us[1] - 0.9).abs() < 1e-15);
        assert!((us[2] - 1.05).abs() < 1e-15);
        assert_eq!(first, Some(3));
    }

    #[test]
    fn lif_saturating_drive_fires_every_step_with_reset() {
        let cfg = LifConfig::default();
        let mut st = LifState::rest(2);
        for _ in 0..6 {
            let (next, s) = lif_step(&st, &cfg, &[10.0, 10.0]).unwrap();
            assert_eq!(s, vec![1.0, 1.0]);
            // Previous spike gates the leak term away: u' = I exactly.
            assert_eq!(next.membrane, vec![10.0, 10.0]);
            st = next;
        }
    }

    #[test]
    fn lif_rejects_bad_input() {
        let cfg = LifConfig::default();
        assert!(lif_step(&LifState::rest(2), &cfg, &[1.0]).is_err());
        assert!(matches!(
            lif_step(&LifState::rest(1), &cfg, &[f64::NAN]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn encoding_repeats_the_observation() {
        assert_eq!(encode(&[1.0, 2.0, 3.0], 4), vec![vec![1.0, 2.0, 3.0]; 4]);
        assert_eq!(encode(&[0.5], 1), vec![vec![0.5]]);
        assert!(encode(&[0.0, 0.0], 3).iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn surrogate_examples() {
        assert_eq!(surrogate_grad(0.0, 0.5), 1.0);
        assert_eq!(surrogate_grad(0.0, 0.25), 2.0);
        assert_eq!(surrogate_grad(1.0, 0.5), 0.0);
        assert_eq!(surrogate_grad(-1.0, 0.5), 0.0);
        assert_eq!(surrogate_grad(0.3, 0.5), 1.0);
    }

    #[test]
    fn zero_network_outputs_zero_action() {
        let net = ActorNet::zeros(ActorArch::half_cheetah(), vec![1.0; 6]).unwrap();
        let (a, trace) = net.forward(&[0.3; 17]).unwrap();
        assert_eq!(a, vec![0.0; 6]);
        assert_eq!(trace.spikes.len(), 4);
    }

    #[test]
    fn single_step_average_is_the_spike_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = ActorNet::new(ActorArch::pendulum(), vec![2.0], &mut rng).unwrap();
        for _ in 0..50 {
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (_, tr) = net.forward(&s).unwrap();
            assert_eq!(tr.spike_count_avg, tr.spikes[0]);
        }
    }

    #[test]
    fn wrong_backend_shape_is_a_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = ActorNet::new(ActorArch::pendulum(), vec![2.0], &mut rng).unwrap();
        let w = Array2::zeros((8, 16));
        assert!(matches!(
            net.forward_with(&[0.0; 3], &DenseBackend(&w)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = ActorNet::new(ActorArch::pendulum(), vec![2.0], &mut rng).unwrap();
        let b = ActorNet::new(ActorArch::half_cheetah(), vec![1.0; 6], &mut rng).unwrap();
        let cache = b.forward_cached(&[0.1; 17], &DenseBackend(&b.l2.weight)).unwrap();
        assert!(matches!(a.backward(&cache, &[1.0]), Err(Error::Usage(_))));
        // A cache replayed from L2 inputs has no layer-1 record.
        let partial = a
            .forward_from_l2_inputs(&[vec![1.0; 16]], &DenseBackend(&a.l2.weight))
            .unwrap();
        assert!(matches!(a.backward(&partial, &[1.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn snapshot_json_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = ActorNet::new(ActorArch::half_cheetah(), vec![1.0; 6], &mut rng).unwrap();
        let v: serde_json::Value = serde_json::from_str(&net.to_json().unwrap()).unwrap();
        assert_eq!(v["arch"], serde_json::json!([17, 16, 16, 6]));
        assert_eq!(v["T"], 4);
        assert_eq!(v["W2"].as_array().unwrap().len(), 16);
        assert_eq!(v["W1"][0].as_array().unwrap().len(), 17);
        assert!(v["lif"]["layer1"]["threshold"].is_number());
        assert_eq!(ActorNet::from_json(&net.to_json().unwrap()).unwrap(), net);
        let mut bad = v.clone();
        bad["b3"] = serde_json::json!([0.0]);
        assert!(ActorNet::from_json(&bad.to_string()).is_err());
    }
}
