//! Software/hardware pipeline: pull the actor's second layer and a test set
//! out of a trained network, realize the layer on the mesh, compare hardware
//! against software inference, and fine-tune around the frozen hardware layer.

use std::cell::RefCell;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::linalg::{cosine_similarity, matvec, max_abs};
use crate::mesh::{PhotonicMesh, VoltageTable};
use crate::snn::{ActorNet, ActorSnapshot, LinearBackend, SpikeTrace};
use crate::spgd::{calibrate, CalibrationRecord, SpgdConfig};
use crate::td3::{train, CriticNet, CriticPair, L2Source, RewardTrace, Td3Agent, Td3Config, TrainReport};

/// One recorded pass through L2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSample {
    pub state: Vec<f64>,
    /// Layer-1 spikes entering L2, one vector per time step.
    pub inputs: Vec<Vec<f64>>,
    /// Pure products `W2·input` (no bias), one vector per time step.
    pub expected: Vec<Vec<f64>>,
    pub action: Vec<f64>,
}

/// Everything exported from software for the hardware stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSnapshot {
    pub actor: ActorSnapshot,
    pub l2_target: Array2<f64>,
    /// `max |W2|`, or 1 for an all-zero matrix.
    pub scale: f64,
    pub test_set: Vec<TestSample>,
}

impl WeightSnapshot {
    /// Count of spike values sent through the hardware layer.
    pub fn transmitted_values(&self) -> usize {
        self.test_set.iter().map(|t| t.inputs.iter().map(Vec::len).sum::<usize>()).sum()
    }

    pub fn actor(&self) -> Result<ActorNet> {
        ActorNet::from_snapshot(&self.actor)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let s: WeightSnapshot = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let actor = s.actor()?;
        if actor.l2.weight != s.l2_target {
            return Err(Error::Config("snapshot L2 target differs from the actor's W2".into()));
        }
        Ok(s)
    }
}

pub fn l2_scale(w2: &Array2<f64>) -> f64 {
    let m = max_abs(w2);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Rolls out the deterministic policy for `n_samples` steps and records what
/// passes through L2 at each one.
pub fn extract_l2(actor: &ActorNet, env: &mut dyn Environment, n_samples: usize, seed: u64) -> Result<WeightSnapshot> {
    actor.validate()?;
    if n_samples == 0 {
        return Err(Error::Config("need at least one test sample".into()));
    }
    let a = actor.arch();
    if env.spec().state_dim != a.state_dim || env.spec().action_dim != a.action_dim {
        return Err(Error::Config("environment does not match the actor".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = env.reset(Some(rng.random()))?;
    let mut test_set = Vec::with_capacity(n_samples);
    while test_set.len() < n_samples {
        let (action, trace) = actor.forward(&s)?;
        test_set.push(TestSample {
            state: s.clone(),
            inputs: trace.l2_inputs,
            expected: trace.l2_products,
            action: action.clone(),
        });
        let st = env.step(&action)?;
        s = if st.done { env.reset(Some(rng.random()))? } else { st.state };
    }
    Ok(WeightSnapshot {
        actor: actor.to_snapshot(),
        l2_target: actor.l2.weight.clone(),
        scale: l2_scale(&actor.l2.weight),
        test_set,
    })
}

/// A realized L2 layer: voltages, the matrix they produce, and the digital
/// factors that bring it back to the software scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardwareLayer {
    pub voltages: VoltageTable,
    /// Noiseless chip matrix.
    pub w_eff: Array2<f64>,
    pub scale: f64,
    /// Least-squares electronic gain on the detector outputs.
    pub gain: f64,
    /// `scale · gain · w_eff`, the digital twin used in the actor.
    pub w_eff_scaled: Array2<f64>,
    /// Cosine similarity against the normalized target, `None` if undefined.
    pub similarity: Option<f64>,
}

impl HardwareLayer {
    /// Evaluates `voltages` on the noiseless chip against `l2_target`.
    pub fn realize(mesh: &PhotonicMesh, voltages: VoltageTable, l2_target: &Array2<f64>) -> Result<Self> {
        let n = mesh.n();
        if l2_target.dim() != (n, n) {
            return Err(Error::dim(n, l2_target.nrows()));
        }
        let scale = l2_scale(l2_target);
        let target = l2_target / scale;
        let w_eff = mesh.noiseless().effective_weight(&voltages, &mut ChaCha8Rng::seed_from_u64(0))?;
        let energy: f64 = w_eff.iter().map(|w| w * w).sum();
        let gain = if energy > 0.0 {
            w_eff.iter().zip(target.iter()).map(|(w, t)| w * t).sum::<f64>() / energy
        } else {
            1.0
        };
        let k = scale * gain;
        let w_eff_scaled = w_eff.mapv(|w| w * k);
        let similarity = cosine_similarity(&w_eff, &target).ok();
        Ok(Self {
            voltages,
            w_eff,
            scale,
            gain,
            w_eff_scaled,
            similarity,
        })
    }

    pub fn is_degenerate(&self) -> bool {
        self.similarity.is_none()
    }
}

/// Calibrates the mesh against `l2_target / s` and returns the rescaled
/// realized matrix. An all-zero target skips calibration and closes every
/// output attenuator.
pub fn map_to_hardware(snapshot: &WeightSnapshot, mesh: &PhotonicMesh, cfg: &SpgdConfig) -> Result<(CalibrationRecord, HardwareLayer)> {
    let target = &snapshot.l2_target;
    let n = mesh.n();
    if target.dim() != (n, n) {
        return Err(Error::Dimension {
            expected: n,
            got: target.nrows(),
        });
    }
    if target.iter().all(|w| *w == 0.0) {
        let off = mesh
            .map
            .voltage_for_phase(0.0)
            .ok_or_else(|| Error::Config("phase map cannot reach zero transmission".into()))?;
        let mut v = VoltageTable::uniform(&mesh.topology, mesh.map.mid());
        v.diag.iter_mut().for_each(|d| *d = off);
        let layer = HardwareLayer::realize(mesh, v.clone(), target)?;
        let record = CalibrationRecord {
            history: Vec::new(),
            best_voltages: v,
            best_similarity: f64::NAN,
            realized_matrix: layer.w_eff.clone(),
            converged: false,
        };
        return Ok((record, layer));
    }
    let normalized = target / snapshot.scale;
    let record = calibrate(mesh, &normalized, cfg)?;
    let layer = HardwareLayer::realize(mesh, record.best_voltages.clone(), target)?;
    Ok((record, layer))
}

/// L2 provider backed by the mesh (or by an exact digital matrix).
///
/// Without noise the product is the twin matrix applied by [`matvec`], so an
/// exact backend is bit-identical to the software path. Readout noise is
/// added in chip units and then rescaled; phase jitter re-simulates the chip
/// on every call.
#[derive(Debug)]
pub struct MeshBackend {
    matrix: Array2<f64>,
    post_scale: f64,
    readout_sigma: f64,
    chip: Option<(PhotonicMesh, VoltageTable)>,
    rng: RefCell<ChaCha8Rng>,
}

impl MeshBackend {
    /// Exact digital `W2` with optional detector noise in output units.
    pub fn exact(w2: Array2<f64>, readout_sigma: f64, seed: u64) -> Self {
        Self {
            matrix: w2,
            post_scale: 1.0,
            readout_sigma,
            chip: None,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    /// Realized layer on `mesh`, using the mesh's own noise model and seed.
    pub fn from_layer(mesh: &PhotonicMesh, layer: &HardwareLayer) -> Self {
        let jitter = mesh.noise.phase_jitter_sigma > 0.0;
        Self {
            matrix: layer.w_eff_scaled.clone(),
            post_scale: layer.scale * layer.gain,
            readout_sigma: mesh.noise.readout_sigma,
            chip: jitter.then(|| (mesh.clone(), layer.voltages.clone())),
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(mesh.noise.seed)),
        }
    }

    /// Digital twin only: noise off.
    pub fn twin(layer: &HardwareLayer) -> Self {
        Self::exact(layer.w_eff_scaled.clone(), 0.0, 0)
    }

    pub fn is_noiseless(&self) -> bool {
        self.readout_sigma == 0.0 && self.chip.is_none()
    }
}

impl LinearBackend for MeshBackend {
    fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }

    fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.matrix.ncols() {
            return Err(Error::dim(self.matrix.ncols(), x.len()));
        }
        let mut rng = self.rng.borrow_mut();
        if let Some((mesh, v)) = &self.chip {
            let y = mesh.forward(v, x, &mut *rng)?;
            return Ok(y.into_iter().map(|y| y * self.post_scale).collect());
        }
        let mut y = matvec(&self.matrix, x);
        if self.readout_sigma > 0.0 {
            let k = self.readout_sigma * self.post_scale;
            for yi in &mut y {
                *yi += k * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(y)
    }

    fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }
}

/// Actor inference with L2 served by `backend`; bias `b2` stays electronic.
pub fn hybrid_forward(actor: &ActorNet, backend: &MeshBackend, state: &[f64]) -> Result<(Vec<f64>, SpikeTrace)> {
    actor.forward_with(state, backend)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleDeviation {
    pub software: Vec<f64>,
    pub hardware: Vec<f64>,
    pub abs_deviation: Vec<f64>,
    /// `100·|a_hw − a_sw| / (a_max − a_min)` per action dimension.
    pub pct_deviation: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub channel: usize,
    pub mean_error: f64,
    pub std_error: f64,
    pub max_abs_error: f64,
}

/// One L2 output channel at one transmitted vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    /// Index of the transmitted vector: `test sample · T + time step`.
    pub sample: usize,
    pub channel: usize,
    pub target: f64,
    pub measured: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub n_samples: usize,
    pub mean_pct_deviation: f64,
    pub max_pct_deviation: f64,
    pub pooled_error_mean: f64,
    pub pooled_error_std: f64,
    pub channels: Vec<ChannelStats>,
    #[serde(skip)]
    pub samples: Vec<SampleDeviation>,
    #[serde(skip)]
    pub series: Vec<SeriesPoint>,
}

impl DeviationReport {
    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn write_series_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "sample,channel,target,measured,error")?;
        for p in &self.series {
            writeln!(w, "{},{},{},{},{}", p.sample, p.channel, p.target, p.measured, p.measured - p.target)?;
        }
        Ok(())
    }

    /// Pooled L2-output errors, for histograms.
    pub fn errors(&self) -> Vec<f64> {
        self.series.iter().map(|p| p.measured - p.target).collect()
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

/// Replays the test set through `backend` and compares against software.
pub fn offline_compare(snapshot: &WeightSnapshot, backend: &dyn LinearBackend) -> Result<DeviationReport> {
    if snapshot.test_set.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }
    let actor = snapshot.actor()?;
    let range: Vec<f64> = actor.action_scale.iter().map(|a| 2.0 * a).collect();
    let h = actor.l2.output_dim();
    let mut samples = Vec::with_capacity(snapshot.test_set.len());
    let mut series = Vec::new();
    let mut per_channel: Vec<Vec<f64>> = vec![Vec::new(); h];
    for (k, t) in snapshot.test_set.iter().enumerate() {
        let cache = actor.forward_from_l2_inputs(&t.inputs, backend)?;
        for (step, (target, measured)) in t.expected.iter().zip(&cache.l2_products).enumerate() {
            for c in 0..h {
                series.push(SeriesPoint {
                    sample: k * t.inputs.len() + step,
                    channel: c,
                    target: target[c],
                    measured: measured[c],
                });
                per_channel[c].push(measured[c] - target[c]);
            }
        }
        let abs: Vec<f64> = cache.action.iter().zip(&t.action).map(|(a, b)| (a - b).abs()).collect();
        let pct = abs.iter().zip(&range).map(|(d, r)| (100.0 * d / r).min(100.0)).collect();
        samples.push(SampleDeviation {
            software: t.action.clone(),
            hardware: cache.action,
            abs_deviation: abs,
            pct_deviation: pct,
        });
    }
    let all_pct: Vec<f64> = samples.iter().flat_map(|s| s.pct_deviation.iter().copied()).collect();
    let pooled: Vec<f64> = per_channel.iter().flatten().copied().collect();
    let (pm, ps) = mean_std(&pooled);
    Ok(DeviationReport {
        n_samples: samples.len(),
        mean_pct_deviation: all_pct.iter().sum::<f64>() / all_pct.len() as f64,
        max_pct_deviation: all_pct.iter().cloned().fold(0.0, f64::max),
        pooled_error_mean: pm,
        pooled_error_std: ps,
        channels: per_channel
            .iter()
            .enumerate()
            .map(|(c, e)| {
                let (m, s) = mean_std(e);
                ChannelStats {
                    channel: c,
                    mean_error: m,
                    std_error: s,
                    max_abs_error: e.iter().map(|x| x.abs()).fold(0.0, f64::max),
                }
            })
            .collect(),
        samples,
        series,
    })
}

#[derive(Clone, Debug)]
pub struct CotrainOutcome {
    pub actor: ActorNet,
    pub critics: CriticPair,
    pub report: TrainReport,
}

/// Resumes training with L2 pinned to the hardware matrix. Critics carry over
/// when given; L1, L3 and both critics keep learning.
pub fn cotrain(
    actor: &ActorNet,
    critics: Option<[CriticNet; 2]>,
    backend: &MeshBackend,
    env: &mut dyn Environment,
    cfg: Td3Config,
) -> Result<CotrainOutcome> {
    let mut start = actor.clone();
    if backend.matrix().dim() != start.l2.weight.dim() {
        return Err(Error::dim(start.l2.weight.nrows(), backend.matrix().nrows()));
    }
    start.l2.weight = backend.matrix().clone();
    let mut agent = match critics {
        Some(c) => Td3Agent::with_critics(start, c, cfg)?,
        None => Td3Agent::new(start, cfg)?,
    };
    let report = train(env, &mut agent, L2Source::Frozen(backend))?;
    Ok(CotrainOutcome {
        critics: agent.critic_pair(),
        actor: agent.actor,
        report,
    })
}

/// First step at which a periodic evaluation reached `threshold`.
pub fn steps_to_threshold(trace: &RewardTrace, threshold: f64) -> Option<usize> {
    trace.evaluations().into_iter().find(|(_, m, _)| *m >= threshold).map(|(s, _, _)| s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub software_steps: Option<usize>,
    pub cotrain_steps: Option<usize>,
    /// `100·(software − cotrain)/software`, absent if either run never crossed.
    pub reduction_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub threshold: f64,
    pub seeds: Vec<SeedComparison>,
    pub mean_reduction_pct: Option<f64>,
    pub non_convergent: Vec<u64>,
}

impl ConvergenceReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "seed,software_steps,cotrain_steps,reduction_pct")?;
        let cell = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &self.seeds {
            writeln!(
                w,
                "{},{},{},{}",
                s.seed,
                cell(s.software_steps),
                cell(s.cotrain_steps),
                s.reduction_pct.map(|x| x.to_string()).unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

/// Steps-to-threshold of both pipelines for every seed. Descriptive only.
pub fn convergence_report(runs: &[(u64, &RewardTrace, &RewardTrace)], threshold: f64) -> ConvergenceReport {
    let mut seeds = Vec::with_capacity(runs.len());
    let mut non_convergent = Vec::new();
    for (seed, sw, co) in runs {
        let software_steps = steps_to_threshold(sw, threshold);
        let cotrain_steps = steps_to_threshold(co, threshold);
        let reduction_pct = match (software_steps, cotrain_steps) {
            (Some(a), Some(b)) if a > 0 => Some(100.0 * (a as f64 - b as f64) / a as f64),
            _ => {
                non_convergent.push(*seed);
                None
            }
        };
        seeds.push(SeedComparison {
            seed: *seed,
            software_steps,
            cotrain_steps,
            reduction_pct,
        });
    }
    let r: Vec<f64> = seeds.iter().filter_map(|s| s.reduction_pct).collect();
    ConvergenceReport {
        threshold,
        mean_reduction_pct: (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64),
        seeds,
        non_convergent,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Pendulum, PendulumParams};
    use crate::snn::ActorArch;
    use crate::td3::TraceRow;

    fn actor(seed: u64) -> ActorNet {
        ActorNet::new(ActorArch::pendulum(), vec![2.0], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn trace_crossing(at: usize) -> RewardTrace {
        let mut t = RewardTrace::default();
        for step in (10_000..=150_000).step_by(10_000) {
            t.rows.push(TraceRow {
                step,
                episode: step / 200,
                ret: None,
                eval_mean: Some(if step >= at { -150.0 } else { -800.0 }),
                eval_std: Some(0.0),
            });
        }
        t
    }

    #[test]
    fn extraction_records_binary_inputs_and_pure_products() {
        let a = actor(0);
        let mut env = Pendulum::new(PendulumParams::default(), 1).unwrap();
        let snap = extract_l2(&a, &mut env, 50, 2).unwrap();
        assert_eq!(snap.l2_target, a.l2.weight);
        assert_eq!(snap.scale, max_abs(&a.l2.weight));
        assert_eq!(snap.transmitted_values(), 50 * 16);
        for t in &snap.test_set {
            assert!(t.inputs.iter().flatten().all(|&x| x == 0.0 || x == 1.0));
            for (x, y) in t.inputs.iter().zip(&t.expected) {
                assert_eq!(&matvec(&a.l2.weight, x), y);
            }
        }
        assert!(extract_l2(&a, &mut env, 0, 2).is_err());
    }

    #[test]
    fn exact_backend_gives_zero_deviation() {
        let a = actor(3);
        let mut env = Pendulum::new(PendulumParams::default(), 1).unwrap();
        let snap = extract_l2(&a, &mut env, 100, 2).unwrap();
        let exact = MeshBackend::exact(a.l2.weight.clone(), 0.0, 0);
        let rep = offline_compare(&snap, &exact).unwrap();
        assert_eq!(rep.mean_pct_deviation, 0.0);
        assert_eq!(rep.max_pct_deviation, 0.0);
        assert_eq!(rep.pooled_error_std, 0.0);
    }

    #[test]
    fn zero_spikes_give_bias_only_output() {
        let a = actor(4);
        let layer_mesh = PhotonicMesh::ideal(16).unwrap();
        let v = VoltageTable::random(&layer_mesh.topology, &layer_mesh.map, &mut ChaCha8Rng::seed_from_u64(1));
        let layer = HardwareLayer::realize(&layer_mesh, v, &a.l2.weight).unwrap();
        let b = MeshBackend::from_layer(&layer_mesh, &layer);
        assert_eq!(b.apply(&[0.0; 16]).unwrap(), vec![0.0; 16]);
    }

    #[test]
    fn zero_target_is_degenerate() {
        let mut a = actor(5);
        a.l2.weight.fill(0.0);
        let mut env = Pendulum::new(PendulumParams::default(), 1).unwrap();
        let snap = extract_l2(&a, &mut env, 5, 0).unwrap();
        assert_eq!(snap.scale, 1.0);
        let mesh = PhotonicMesh::ideal(16).unwrap();
        let (rec, layer) = map_to_hardware(&snap, &mesh, &SpgdConfig::default()).unwrap();
        assert!(layer.is_degenerate());
        assert!(!rec.converged);
        assert!(layer.w_eff.iter().all(|w| w.abs() < 1e-30));
    }

    #[test]
    fn size_mismatch_is_a_dimension_error() {
        let a = ActorNet::new(
            ActorArch {
                state_dim: 3,
                hidden: 8,
                action_dim: 1,
                time_steps: 1,
            },
            vec![2.0],
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let mut env = Pendulum::new(PendulumParams::default(), 1).unwrap();
        let snap = extract_l2(&a, &mut env, 3, 0).unwrap();
        let mesh = PhotonicMesh::ideal(16).unwrap();
        assert!(matches!(
            map_to_hardware(&snap, &mesh, &SpgdConfig::default()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn scale_round_trip_preserves_similarity() {
        let mesh = PhotonicMesh::ideal(16).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let target = actor(8).l2.weight;
        let v = VoltageTable::random(&mesh.topology, &mesh.map, &mut r);
        let layer = HardwareLayer::realize(&mesh, v, &target).unwrap();
        let a = cosine_similarity(&layer.w_eff_scaled, &target).unwrap();
        let b = cosine_similarity(&layer.w_eff, &(&target / layer.scale)).unwrap();
        if layer.gain > 0.0 {
            assert!((a - b).abs() < 1e-12);
        } else {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn convergence_report_examples() {
        let a = trace_crossing(70_000);
        let b = trace_crossing(100_000);
        let r = convergence_report(&[(0, &b, &a), (1, &a, &a)], -200.0);
        assert!((r.seeds[0].reduction_pct.unwrap() - 30.0).abs() < 1e-12);
        assert_eq!(r.seeds[1].reduction_pct, Some(0.0));
        let never = trace_crossing(usize::MAX);
        let r = convergence_report(&[(7, &never, &a)], -200.0);
        assert_eq!(r.non_convergent, vec![7]);
        assert_eq!(r.mean_reduction_pct, None);
    }
}
