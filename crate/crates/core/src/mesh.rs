//! Physics-level simulator of the simplified MZI mesh.
//!
//! The chip is modelled as a rectangular (Clements-style) arrangement of MZIs
//! on `n + 1` optical modes followed by `n` diagonal attenuator stages. Each
//! MZI carries a single internal thermo-optic phase shifter; each diagonal
//! stage carries one more. Drive voltages map to phases through a
//! [`PhaseVoltageMap`], phases to 2×2 transfer blocks, and the blocks compose
//! into the `(n + 1) × (n + 1)` mesh unitary. The last mode is a dump port:
//! its input carries no field and its output is discarded.
//!
//! The signed `n × n` weight realized by the chip is
//! `W[i][j] = d_i · Re(M[i][j])` with `d_i = sin²(θ_i / 2)` (coherent readout),
//! or `d_i · |M[i][j]|²` when [`ReadoutMode::Intensity`] is selected.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::matvec;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseMode {
    Linear,
    Quadratic,
}

/// Voltage to optical phase response of a thermo-optic shifter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseVoltageMap {
    /// rad/V (linear) or rad/V² (quadratic).
    pub alpha: f64,
    pub phi0: f64,
    pub mode: PhaseMode,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for PhaseVoltageMap {
    /// Linear map sweeping two periods over [0, 10] V, with mid-range at
    /// quadrature so that no shifter starts against a clamp wall.
    fn default() -> Self {
        Self {
            alpha: 4.0 * PI / 10.0,
            phi0: PI / 2.0,
            mode: PhaseMode::Linear,
            v_min: 0.0,
            v_max: 10.0,
        }
    }
}

impl PhaseVoltageMap {
    /// Quadratic (heater power) response covering a full 2π over [0, 10] V.
    pub fn quadratic() -> Self {
        Self {
            alpha: 2.0 * PI / 100.0,
            phi0: 0.0,
            mode: PhaseMode::Quadratic,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.phi0.is_finite()) {
            return Err(Error::Config("phase map coefficients must be finite".into()));
        }
        if !(self.v_min.is_finite() && self.v_max.is_finite() && self.v_min < self.v_max) {
            return Err(Error::Config(format!(
                "invalid voltage range [{}, {}]",
                self.v_min, self.v_max
            )));
        }
        Ok(())
    }

    /// Phase produced by voltage `v`.
    pub fn phase(&self, v: f64) -> Result<f64> {
        self.checked_phase(None, v)
    }

    pub(crate) fn checked_phase(&self, shifter: Option<usize>, v: f64) -> Result<f64> {
        if !(v >= self.v_min && v <= self.v_max) {
            return Err(Error::VoltageRange {
                shifter,
                value: v,
                min: self.v_min,
                max: self.v_max,
            });
        }
        Ok(match self.mode {
            PhaseMode::Linear => self.alpha * v + self.phi0,
            PhaseMode::Quadratic => self.alpha * v * v + self.phi0,
        })
    }

    /// Lowest in-range voltage whose phase equals `phase` modulo 2π.
    pub fn voltage_for_phase(&self, phase: f64) -> Option<f64> {
        let two_pi = 2.0 * std::f64::consts::PI;
        let ends = [self.phase(self.v_min).ok()?, self.phase(self.v_max).ok()?];
        let (lo, hi) = match self.mode {
            PhaseMode::Linear => (ends[0].min(ends[1]), ends[0].max(ends[1])),
            // v² is monotone on the non-negative part of the range only.
            PhaseMode::Quadratic if self.v_min >= 0.0 => (ends[0].min(ends[1]), ends[0].max(ends[1])),
            PhaseMode::Quadratic => return None,
        };
        let k0 = ((lo - phase) / two_pi).ceil() as i64;
        let k1 = ((hi - phase) / two_pi).floor() as i64;
        (k0..=k1)
            .filter_map(|k| {
                let p = phase + two_pi * k as f64 - self.phi0;
                let v = match self.mode {
                    PhaseMode::Linear => p / self.alpha,
                    PhaseMode::Quadratic => (p / self.alpha).max(0.0).sqrt(),
                };
                (v >= self.v_min && v <= self.v_max).then_some(v)
            })
            .min_by(f64::total_cmp)
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.v_min, self.v_max)
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.v_min + self.v_max)
    }

    pub fn span(&self) -> f64 {
        self.v_max - self.v_min
    }
}

/// One MZI of the mesh: the layer it sits in and the upper of its two modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct MziPlacement {
    pub layer: usize,
    pub top_mode: usize,
}

impl From<(usize, usize)> for MziPlacement {
    fn from((layer, top_mode): (usize, usize)) -> Self {
        Self { layer, top_mode }
    }
}

impl From<MziPlacement> for (usize, usize) {
    fn from(p: MziPlacement) -> Self {
        (p.layer, p.top_mode)
    }
}

/// Layout of the mesh. Serializes as the topology descriptor
/// `{"n": .., "layout": [[layer, top_mode], ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshTopology {
    n: usize,
    layout: Vec<MziPlacement>,
}

impl MeshTopology {
    /// Rectangular arrangement on `n + 1` modes: `n + 1` alternating layers,
    /// `(n + 1)·n / 2` MZIs in total.
    pub fn rectangular(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Topology("mesh dimension must be at least 1".into()));
        }
        let modes = n + 1;
        let mut layout = Vec::with_capacity(modes * n / 2);
        for layer in 0..modes {
            let mut top = layer % 2;
            while top + 1 < modes {
                layout.push(MziPlacement {
                    layer,
                    top_mode: top,
                });
                top += 2;
            }
        }
        Ok(Self { n, layout })
    }

    /// Builds a topology from an explicit layout, checking that every MZI
    /// couples adjacent modes, layers are non-decreasing and no two MZIs of
    /// one layer share a mode.
    pub fn from_layout(n: usize, layout: Vec<MziPlacement>) -> Result<Self> {
        let t = Self { n, layout };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Topology("mesh dimension must be at least 1".into()));
        }
        let modes = self.modes();
        let mut used: Vec<Option<usize>> = vec![None; modes];
        let mut last_layer = 0;
        for (k, p) in self.layout.iter().enumerate() {
            if p.top_mode + 1 >= modes {
                return Err(Error::Topology(format!(
                    "MZI {k} couples modes {} and {} but the mesh has {modes} modes",
                    p.top_mode,
                    p.top_mode + 1
                )));
            }
            if p.layer < last_layer {
                return Err(Error::Topology(format!(
                    "MZI {k} in layer {} follows layer {last_layer}",
                    p.layer
                )));
            }
            last_layer = p.layer;
            for m in [p.top_mode, p.top_mode + 1] {
                if used[m] == Some(p.layer) {
                    return Err(Error::Topology(format!(
                        "mode {m} used twice in layer {}",
                        p.layer
                    )));
                }
                used[m] = Some(p.layer);
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(s)?;
        t.validate()?;
        Ok(t)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Logical matrix dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Optical modes, including the dump port.
    pub fn modes(&self) -> usize {
        self.n + 1
    }

    pub fn layout(&self) -> &[MziPlacement] {
        &self.layout
    }

    pub fn n_mzi(&self) -> usize {
        self.layout.len()
    }

    pub fn n_diag(&self) -> usize {
        self.n
    }

    pub fn n_shifters(&self) -> usize {
        self.n_mzi() + self.n_diag()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShifterKind {
    Mzi,
    Diag,
}

/// Drive voltages of every shifter on the chip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoltageTable {
    pub mzi: Vec<f64>,
    pub diag: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct VoltageRow {
    shifter_id: usize,
    kind: ShifterKind,
    voltage: f64,
}

impl VoltageTable {
    pub fn uniform(topology: &MeshTopology, v: f64) -> Self {
        Self {
            mzi: vec![v; topology.n_mzi()],
            diag: vec![v; topology.n_diag()],
        }
    }

    /// Uniformly random voltages over the map's full range.
    pub fn random<R: Rng + ?Sized>(topology: &MeshTopology, map: &PhaseVoltageMap, rng: &mut R) -> Self {
        let mut draw = |k: usize| -> Vec<f64> {
            (0..k).map(|_| rng.random_range(map.v_min..=map.v_max)).collect()
        };
        let mzi = draw(topology.n_mzi());
        let diag = draw(topology.n_diag());
        Self { mzi, diag }
    }

    pub fn len(&self) -> usize {
        self.mzi.len() + self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All voltages, MZIs first then diagonal stages.
    pub fn flat(&self) -> Vec<f64> {
        self.mzi.iter().chain(&self.diag).copied().collect()
    }

    pub fn from_flat(topology: &MeshTopology, flat: &[f64]) -> Result<Self> {
        if flat.len() != topology.n_shifters() {
            return Err(Error::dim(topology.n_shifters(), flat.len()));
        }
        let (mzi, diag) = flat.split_at(topology.n_mzi());
        Ok(Self {
            mzi: mzi.to_vec(),
            diag: diag.to_vec(),
        })
    }

    pub fn check(&self, topology: &MeshTopology, map: &PhaseVoltageMap) -> Result<()> {
        if self.mzi.len() != topology.n_mzi() {
            return Err(Error::Topology(format!(
                "voltage table has {} MZI entries, topology has {}",
                self.mzi.len(),
                topology.n_mzi()
            )));
        }
        if self.diag.len() != topology.n_diag() {
            return Err(Error::Topology(format!(
                "voltage table has {} diagonal entries, topology has {}",
                self.diag.len(),
                topology.n_diag()
            )));
        }
        for (k, &v) in self.mzi.iter().chain(&self.diag).enumerate() {
            map.checked_phase(Some(k), v)?;
        }
        Ok(())
    }

    /// CSV with header `shifter_id,kind,voltage`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let rows = self
            .mzi
            .iter()
            .enumerate()
            .map(|(k, &v)| (k, ShifterKind::Mzi, v))
            .chain(self.diag.iter().enumerate().map(|(k, &v)| (k, ShifterKind::Diag, v)));
        for (shifter_id, kind, voltage) in rows {
            wtr.serialize(VoltageRow {
                shifter_id,
                kind,
                voltage,
            })?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut mzi: Vec<Option<f64>> = Vec::new();
        let mut diag: Vec<Option<f64>> = Vec::new();
        for row in rdr.deserialize() {
            let row: VoltageRow = row?;
            let slot = match row.kind {
                ShifterKind::Mzi => &mut mzi,
                ShifterKind::Diag => &mut diag,
            };
            if slot.len() <= row.shifter_id {
                slot.resize(row.shifter_id + 1, None);
            }
            if slot[row.shifter_id].replace(row.voltage).is_some() {
                return Err(Error::Config(format!(
                    "duplicate {:?} shifter {}",
                    row.kind, row.shifter_id
                )));
            }
        }
        let finish = |v: Vec<Option<f64>>, kind: &str| -> Result<Vec<f64>> {
            v.into_iter()
                .enumerate()
                .map(|(k, x)| x.ok_or_else(|| Error::Config(format!("missing {kind} shifter {k}"))))
                .collect()
        };
        Ok(Self {
            mzi: finish(mzi, "mzi")?,
            diag: finish(diag, "diag")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Gaussian phase jitter per shifter and additive readout noise per output.
/// Both zero makes the simulator exactly deterministic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub phase_jitter_sigma: f64,
    pub readout_sigma: f64,
    /// Seed for callers that own their noise stream (backends, CLI runs).
    #[serde(default)]
    pub seed: u64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn is_noiseless(&self) -> bool {
        self.phase_jitter_sigma == 0.0 && self.readout_sigma == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phase_jitter_sigma >= 0.0 && self.readout_sigma >= 0.0) {
            return Err(Error::Config("noise sigmas must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutMode {
    /// Signed weights from the real part of the field amplitude.
    #[default]
    Coherent,
    /// Non-negative weights from detected power.
    Intensity,
}

/// 2×2 field transfer of one MZI with internal phase `theta`:
/// `i·e^{iθ/2}·[[sin θ/2, cos θ/2], [cos θ/2, −sin θ/2]]`.
pub fn mzi_unit_transfer(theta: f64) -> Result<[[Complex64; 2]; 2]> {
    if !theta.is_finite() {
        return Err(Error::Domain(format!("non-finite MZI phase {theta}")));
    }
    Ok(mzi_block(theta))
}

#[inline]
fn mzi_block(theta: f64) -> [[Complex64; 2]; 2] {
    let (s, c) = (0.5 * theta).sin_cos();
    let g = I * Complex64::from_polar(1.0, 0.5 * theta);
    [[g * s, g * c], [g * c, -g * s]]
}

/// Fraction of the power entering one port that leaves on the same side.
pub fn bar_power(theta: f64) -> f64 {
    (0.5 * theta).sin().powi(2)
}

pub fn cross_power(theta: f64) -> f64 {
    (0.5 * theta).cos().powi(2)
}

/// Field transfer matrix of the whole mesh, `(n + 1) × (n + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferMatrix(pub Array2<Complex64>);

impl TransferMatrix {
    pub fn entries(&self) -> &Array2<Complex64> {
        &self.0
    }

    /// `‖M†M − I‖_F`.
    pub fn unitarity_error(&self) -> f64 {
        let m = &self.0;
        let prod = m.t().mapv(|z| z.conj()).dot(m);
        let mut acc = 0.0;
        for ((i, j), z) in prod.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            acc += (z - target).norm_sqr();
        }
        acc.sqrt()
    }

    pub fn apply(&self, field: &[Complex64]) -> Vec<Complex64> {
        self.0
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(field).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// A simulated chip: topology, shifter response, noise and detection model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotonicMesh {
    pub topology: MeshTopology,
    pub map: PhaseVoltageMap,
    pub noise: NoiseModel,
    #[serde(default)]
    pub readout: ReadoutMode,
}

impl PhotonicMesh {
    pub fn new(topology: MeshTopology, map: PhaseVoltageMap, noise: NoiseModel) -> Self {
        Self {
            topology,
            map,
            noise,
            readout: ReadoutMode::Coherent,
        }
    }

    /// Noiseless rectangular mesh of dimension `n` with the default phase map.
    pub fn ideal(n: usize) -> Result<Self> {
        Ok(Self::new(
            MeshTopology::rectangular(n)?,
            PhaseVoltageMap::default(),
            NoiseModel::noiseless(),
        ))
    }

    pub fn with_readout(mut self, readout: ReadoutMode) -> Self {
        self.readout = readout;
        self
    }

    pub fn n(&self) -> usize {
        self.topology.n()
    }

    /// Same chip with noise switched off.
    pub fn noiseless(&self) -> Self {
        Self {
            noise: NoiseModel {
                seed: self.noise.seed,
                ..NoiseModel::noiseless()
            },
            ..self.clone()
        }
    }

    fn phases<R: Rng + ?Sized>(&self, v: &VoltageTable, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
        v.check(&self.topology, &self.map)?;
        let jitter = self.noise.phase_jitter_sigma;
        let mut to_phases = |vs: &[f64]| -> Vec<f64> {
            vs.iter()
                .map(|&x| {
                    // Range already checked above.
                    let p = self.map.checked_phase(None, x).unwrap_or(f64::NAN);
                    if jitter > 0.0 {
                        p + jitter * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        p
                    }
                })
                .collect()
        };
        let mzi = to_phases(&v.mzi);
        let diag = to_phases(&v.diag);
        Ok((mzi, diag))
    }

    /// Applies every MZI, in layout order, to the rows of `m`.
    fn propagate(&self, thetas: &[f64], m: &mut Array2<Complex64>) {
        let cols = m.ncols();
        for (p, &theta) in self.topology.layout().iter().zip(thetas) {
            let b = mzi_block(theta);
            let (top, bot) = (p.top_mode, p.top_mode + 1);
            for c in 0..cols {
                let x = m[[top, c]];
                let y = m[[bot, c]];
                m[[top, c]] = b[0][0] * x + b[0][1] * y;
                m[[bot, c]] = b[1][0] * x + b[1][1] * y;
            }
        }
    }

    /// Full `(n + 1) × (n + 1)` field transfer of the MZI section.
    pub fn transfer<R: Rng + ?Sized>(&self, v: &VoltageTable, rng: &mut R) -> Result<TransferMatrix> {
        let (thetas, _) = self.phases(v, rng)?;
        let mut m = Array2::<Complex64>::eye(self.topology.modes());
        self.propagate(&thetas, &mut m);
        Ok(TransferMatrix(m))
    }

    /// Real `n × n` weight realized by the chip.
    pub fn effective_weight<R: Rng + ?Sized>(&self, v: &VoltageTable, rng: &mut R) -> Result<Array2<f64>> {
        let (thetas, diag) = self.phases(v, rng)?;
        let n = self.n();
        // Only the n driven input ports matter; the dump input carries no field.
        let mut m = Array2::<Complex64>::zeros((n + 1, n));
        for j in 0..n {
            m[[j, j]] = Complex64::new(1.0, 0.0);
        }
        self.propagate(&thetas, &mut m);
        let mut w = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            let d = bar_power(diag[i]);
            for j in 0..n {
                w[[i, j]] = match self.readout {
                    ReadoutMode::Coherent => d * m[[i, j]].re,
                    ReadoutMode::Intensity => d * m[[i, j]].norm_sqr(),
                };
            }
        }
        Ok(w)
    }

    /// Optical matrix-vector product `W_eff x` plus readout noise.
    pub fn forward<R: Rng + ?Sized>(&self, v: &VoltageTable, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        if x.len() != self.n() {
            return Err(Error::dim(self.n(), x.len()));
        }
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite mesh input {bad}")));
        }
        let w = self.effective_weight(v, rng)?;
        let mut y = matvec(&w, x);
        self.add_readout_noise(&mut y, rng);
        Ok(y)
    }

    fn add_readout_noise<R: Rng + ?Sized>(&self, y: &mut [f64], rng: &mut R) {
        let sigma = self.noise.readout_sigma;
        if sigma > 0.0 {
            for yi in y {
                *yi += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    /// Measures the realized matrix column by column with one-hot probes.
    pub fn probe<R: Rng + ?Sized>(&self, v: &VoltageTable, rng: &mut R) -> Result<Array2<f64>> {
        let n = self.n();
        let mut out = Array2::<f64>::zeros((n, n));
        if self.noise.phase_jitter_sigma > 0.0 {
            // Every probe sees its own phase realization.
            for j in 0..n {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let col = self.forward(v, &e, rng)?;
                for (i, c) in col.into_iter().enumerate() {
                    out[[i, j]] = c;
                }
            }
        } else {
            let w = self.effective_weight(v, rng)?;
            for j in 0..n {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let mut col = matvec(&w, &e);
                self.add_readout_noise(&mut col, rng);
                for (i, c) in col.into_iter().enumerate() {
                    out[[i, j]] = c;
                }
            }
        }
        Ok(out)
    }
}
