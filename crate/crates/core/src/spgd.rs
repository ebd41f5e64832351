//! Stochastic parallel gradient descent calibration of mesh voltages.
//!
//! Every shifter is perturbed at once by `±σ_p`; the measured objective at
//! `V + δ` and `V − δ` gives a two-sided gradient estimate along `δ`, and the
//! voltages move by `γ·(J⁺ − J⁻)·δ / (2σ_p)`, clamped to the drive range.
//! The objective is measured on probed matrices, so readout and phase noise
//! enter the estimate exactly as they would on the bench.

use std::io::Write;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cosine_similarity, mean_squared_error};
use crate::mesh::{PhotonicMesh, VoltageTable};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Cosine,
    NegMse,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainSchedule {
    #[default]
    Constant,
    /// `γ_t = γ / sqrt(1 + t)`.
    InvSqrt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpgdConfig {
    /// Update gain γ_s, volts per unit objective.
    pub gain: f64,
    /// Perturbation amplitude σ_p, volts.
    pub perturb_amp: f64,
    pub max_iters: usize,
    pub target_similarity: f64,
    pub seed: u64,
    pub objective: Objective,
    pub schedule: GainSchedule,
    /// Half-width of the uniform jitter around mid-range at start, as a
    /// fraction of the voltage span.
    pub init_jitter: f64,
}

impl Default for SpgdConfig {
    fn default() -> Self {
        Self {
            gain: 1.5,
            perturb_amp: 0.05,
            max_iters: 2500,
            target_similarity: 0.999,
            seed: 0,
            objective: Objective::Cosine,
            schedule: GainSchedule::Constant,
            init_jitter: 0.05,
        }
    }
}

impl SpgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::Config(format!("SPGD gain must be positive, got {}", self.gain)));
        }
        if !(self.perturb_amp > 0.0 && self.perturb_amp.is_finite()) {
            return Err(Error::Config(format!(
                "SPGD perturbation must be positive, got {}",
                self.perturb_amp
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("SPGD needs at least one iteration".into()));
        }
        if !(self.target_similarity > 0.0 && self.target_similarity <= 1.0) {
            return Err(Error::Config(format!(
                "target similarity must lie in (0, 1], got {}",
                self.target_similarity
            )));
        }
        if !(0.0..=0.5).contains(&self.init_jitter) {
            return Err(Error::Config("init_jitter must lie in [0, 0.5]".into()));
        }
        Ok(())
    }

    fn gain_at(&self, iteration: usize) -> f64 {
        match self.schedule {
            GainSchedule::Constant => self.gain,
            GainSchedule::InvSqrt => self.gain / ((1 + iteration) as f64).sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub iteration: usize,
    pub objective: f64,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub history: Vec<CalibrationPoint>,
    pub best_voltages: VoltageTable,
    pub best_similarity: f64,
    /// Noiseless realized weight at `best_voltages`.
    pub realized_matrix: Array2<f64>,
    pub converged: bool,
}

impl CalibrationRecord {
    /// Running maximum of the similarity column.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.history
            .iter()
            .map(|p| {
                best = best.max(p.similarity);
                best
            })
            .collect()
    }

    /// Trace CSV: `iteration,objective,similarity,best_similarity`.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["iteration", "objective", "similarity", "best_similarity"])?;
        for (p, best) in self.history.iter().zip(self.best_so_far()) {
            wtr.write_record([
                p.iteration.to_string(),
                p.objective.to_string(),
                p.similarity.to_string(),
                best.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `(objective, cosine similarity)` of a measured matrix against the target.
/// An all-zero measurement scores zero similarity.
fn score(measured: &Array2<f64>, target: &Array2<f64>, objective: Objective) -> (f64, f64) {
    let sim = cosine_similarity(measured, target).unwrap_or(0.0);
    let obj = match objective {
        Objective::Cosine => sim,
        Objective::NegMse => -mean_squared_error(measured, target),
    };
    (obj, sim)
}

fn check_target(mesh: &PhotonicMesh, target: &Array2<f64>) -> Result<()> {
    let n = mesh.n();
    if target.dim() != (n, n) {
        return Err(Error::Config(format!(
            "target is {:?}, mesh realizes {n}×{n}",
            target.dim()
        )));
    }
    if target.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite target entry".into()));
    }
    Ok(())
}

struct StepOutcome {
    voltages: VoltageTable,
    objective: f64,
    similarity: f64,
}

fn step_inner<R: Rng + ?Sized>(
    mesh: &PhotonicMesh,
    voltages: &VoltageTable,
    target: &Array2<f64>,
    cfg: &SpgdConfig,
    iteration: usize,
    rng: &mut R,
) -> Result<StepOutcome> {
    let map = &mesh.map;
    let flat = voltages.flat();
    let delta: Vec<f64> = (0..flat.len())
        .map(|_| if rng.random::<bool>() { cfg.perturb_amp } else { -cfg.perturb_amp })
        .collect();
    let shifted = |sign: f64| -> Result<VoltageTable> {
        let v: Vec<f64> = flat
            .iter()
            .zip(&delta)
            .map(|(v, d)| map.clamp(v + sign * d))
            .collect();
        VoltageTable::from_flat(&mesh.topology, &v)
    };
    let plus = mesh.probe(&shifted(1.0)?, rng)?;
    let minus = mesh.probe(&shifted(-1.0)?, rng)?;
    let (j_plus, _) = score(&plus, target, cfg.objective);
    let (j_minus, _) = score(&minus, target, cfg.objective);
    let dj = j_plus - j_minus;

    let next = if dj == 0.0 {
        voltages.clone()
    } else {
        let k = cfg.gain_at(iteration) * dj / (2.0 * cfg.perturb_amp);
        let v: Vec<f64> = flat
            .iter()
            .zip(&delta)
            .map(|(v, d)| map.clamp(v + k * d))
            .collect();
        VoltageTable::from_flat(&mesh.topology, &v)?
    };
    let measured = mesh.probe(&next, rng)?;
    let (objective, similarity) = score(&measured, target, cfg.objective);
    Ok(StepOutcome {
        voltages: next,
        objective,
        similarity,
    })
}

/// One bilateral SPGD iteration. Returns the updated voltages and the
/// objective measured there. `iteration` only drives the gain schedule.
pub fn spgd_step<R: Rng + ?Sized>(
    mesh: &PhotonicMesh,
    voltages: &VoltageTable,
    target: &Array2<f64>,
    cfg: &SpgdConfig,
    iteration: usize,
    rng: &mut R,
) -> Result<(VoltageTable, f64)> {
    cfg.validate()?;
    check_target(mesh, target)?;
    voltages.check(&mesh.topology, &mesh.map)?;
    let out = step_inner(mesh, voltages, target, cfg, iteration, rng)?;
    Ok((out.voltages, out.objective))
}

/// Mid-range voltages plus seeded uniform jitter.
pub fn initial_voltages<R: Rng + ?Sized>(mesh: &PhotonicMesh, cfg: &SpgdConfig, rng: &mut R) -> VoltageTable {
    let map = &mesh.map;
    let half = cfg.init_jitter * map.span();
    let flat: Vec<f64> = (0..mesh.topology.n_shifters())
        .map(|_| {
            let j = if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 };
            map.clamp(map.mid() + j)
        })
        .collect();
    VoltageTable::from_flat(&mesh.topology, &flat).expect("length matches topology")
}

/// Runs SPGD from [`initial_voltages`] until the best measured similarity
/// reaches `target_similarity` or the budget runs out.
pub fn calibrate(mesh: &PhotonicMesh, target: &Array2<f64>, cfg: &SpgdConfig) -> Result<CalibrationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = initial_voltages(mesh, cfg, &mut rng);
    calibrate_from(mesh, target, cfg, start, &mut rng)
}

/// [`calibrate`] from caller-supplied starting voltages.
pub fn calibrate_from<R: Rng + ?Sized>(
    mesh: &PhotonicMesh,
    target: &Array2<f64>,
    cfg: &SpgdConfig,
    start: VoltageTable,
    rng: &mut R,
) -> Result<CalibrationRecord> {
    cfg.validate()?;
    check_target(mesh, target)?;
    start.check(&mesh.topology, &mesh.map)?;

    let mut voltages = start;
    let mut best_voltages = voltages.clone();
    let mut best_similarity = f64::NEG_INFINITY;
    let mut history = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    for it in 0..cfg.max_iters {
        let out = step_inner(mesh, &voltages, target, cfg, it, rng)?;
        history.push(CalibrationPoint {
            iteration: it + 1,
            objective: out.objective,
            similarity: out.similarity,
        });
        if out.similarity > best_similarity {
            best_similarity = out.similarity;
            best_voltages = out.voltages.clone();
        }
        voltages = out.voltages;
        if best_similarity >= cfg.target_similarity {
            converged = true;
            break;
        }
    }
    let realized_matrix = mesh.noiseless().effective_weight(&best_voltages, rng)?;
    Ok(CalibrationRecord {
        history,
        best_voltages,
        best_similarity,
        realized_matrix,
        converged,
    })
}
