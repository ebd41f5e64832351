//! Python bindings: mesh simulation, SPGD calibration, the spiking actor, the
//! pendulum and a short TD3 training entry point. Matrices cross the boundary
//! as lists of rows.

use ndarray::Array2;
use photospike::envs::{Environment, Pendulum as CorePendulum, PendulumParams};
use photospike::mesh::{PhotonicMesh, VoltageTable};
use photospike::snn::{ActorArch, ActorNet};
use photospike::spgd::{calibrate as core_calibrate, SpgdConfig};
use photospike::td3::{evaluate, train, L2Source, Td3Agent, Td3Config};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_py(e: photospike::Error) -> PyErr {
    use photospike::Error as E;
    match e {
        E::Io(err) => PyIOError::new_err(err.to_string()),
        E::Numeric(_) | E::Protocol(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Rows to a dense matrix; ragged input is rejected.
pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>, String> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err("matrix rows have different lengths".into());
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), cols), flat).map_err(|e| e.to_string())
}

pub fn matrix_to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    rows_to_matrix(&rows).map_err(PyValueError::new_err)
}

/// Cosine similarity of two equally shaped matrices.
#[pyfunction]
fn cosine_similarity(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    photospike::linalg::cosine_similarity(&matrix(a)?, &matrix(b)?).map_err(to_py)
}

/// Noiseless rectangular mesh with the default phase map.
#[pyclass(name = "Mesh")]
struct PyMesh {
    inner: PhotonicMesh,
}

#[pymethods]
impl PyMesh {
    #[new]
    fn new(n: usize) -> PyResult<Self> {
        Ok(Self {
            inner: PhotonicMesh::ideal(n).map_err(to_py)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn shifters(&self) -> usize {
        self.inner.topology.n_shifters()
    }

    /// Uniformly random in-range voltages, MZI shifters first.
    fn random_voltages(&self, seed: u64) -> Vec<f64> {
        VoltageTable::random(&self.inner.topology, &self.inner.map, &mut ChaCha8Rng::seed_from_u64(seed)).flat()
    }

    fn effective_weight(&self, voltages: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let v = VoltageTable::from_flat(&self.inner.topology, &voltages).map_err(to_py)?;
        let w = self.inner.effective_weight(&v, &mut ChaCha8Rng::seed_from_u64(0)).map_err(to_py)?;
        Ok(matrix_to_rows(&w))
    }

    /// `‖M†M − I‖_F` of the full transfer matrix.
    fn unitarity_error(&self, voltages: Vec<f64>) -> PyResult<f64> {
        let v = VoltageTable::from_flat(&self.inner.topology, &voltages).map_err(to_py)?;
        let m = self.inner.transfer(&v, &mut ChaCha8Rng::seed_from_u64(0)).map_err(to_py)?;
        Ok(m.unitarity_error())
    }

    /// SPGD calibration towards `target`. Returns a dict with `voltages`,
    /// `best_similarity`, `converged` and the per-iteration `similarity`.
    #[pyo3(signature = (target, seed=0, max_iters=2500, target_similarity=0.999))]
    fn calibrate<'py>(
        &self,
        py: Python<'py>,
        target: Vec<Vec<f64>>,
        seed: u64,
        max_iters: usize,
        target_similarity: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let cfg = SpgdConfig {
            seed,
            max_iters,
            target_similarity,
            ..Default::default()
        };
        let rec = core_calibrate(&self.inner, &matrix(target)?, &cfg).map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("voltages", rec.best_voltages.flat())?;
        out.set_item("best_similarity", rec.best_similarity)?;
        out.set_item("converged", rec.converged)?;
        out.set_item("similarity", rec.history.iter().map(|p| p.similarity).collect::<Vec<_>>())?;
        Ok(out)
    }
}

/// The spiking actor.
#[pyclass(name = "Actor")]
struct PyActor {
    inner: ActorNet,
}

#[pymethods]
impl PyActor {
    /// Fresh pendulum-sized actor (3 → 16 → 16 → 1, one time step).
    #[staticmethod]
    #[pyo3(signature = (seed=0, time_steps=1))]
    fn pendulum(seed: u64, time_steps: usize) -> PyResult<Self> {
        let arch = ActorArch {
            time_steps,
            ..ActorArch::pendulum()
        };
        let inner = ActorNet::new(arch, vec![2.0], &mut ChaCha8Rng::seed_from_u64(seed)).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ActorNet::from_json(text).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ActorNet::load(path).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    fn act(&self, state: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.act(&state).map_err(to_py)
    }

    /// Action together with the per-step layer-2 spikes.
    fn forward(&self, state: Vec<f64>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let (a, trace) = self.inner.forward(&state).map_err(to_py)?;
        Ok((a, trace.spikes))
    }

    #[getter]
    fn w2(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.inner.l2.weight)
    }

    /// Mean deterministic return over `episodes` pendulum episodes.
    #[pyo3(signature = (episodes=10, seed=0))]
    fn evaluate_pendulum(&self, episodes: usize, seed: u64) -> PyResult<f64> {
        let mut env = CorePendulum::new(PendulumParams::default(), seed).map_err(to_py)?;
        let rets = evaluate(&mut env, &self.inner, L2Source::Software, episodes, seed).map_err(to_py)?;
        Ok(rets.iter().sum::<f64>() / rets.len().max(1) as f64)
    }
}

#[pyclass(name = "Pendulum")]
struct PyPendulum {
    inner: CorePendulum,
}

#[pymethods]
impl PyPendulum {
    #[new]
    #[pyo3(signature = (seed=0))]
    fn new(seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: CorePendulum::new(PendulumParams::default(), seed).map_err(to_py)?,
        })
    }

    #[pyo3(signature = (seed=None))]
    fn reset(&mut self, seed: Option<u64>) -> PyResult<Vec<f64>> {
        self.inner.reset(seed).map_err(to_py)
    }

    /// `(state, reward, done, truncated)`.
    fn step(&mut self, action: Vec<f64>) -> PyResult<(Vec<f64>, f64, bool, bool)> {
        let s = self.inner.step(&action).map_err(to_py)?;
        Ok((s.state, s.reward, s.done, s.truncated))
    }
}

/// Trains a pendulum actor with default TD3 settings except the step budget.
/// Returns the actor and the training episode returns.
#[pyfunction]
#[pyo3(signature = (seed=0, total_steps=150_000, warmup_steps=10_000))]
fn train_pendulum(py: Python<'_>, seed: u64, total_steps: usize, warmup_steps: usize) -> PyResult<(PyActor, Vec<f64>)> {
    let run = move || -> photospike::Result<(ActorNet, Vec<f64>)> {
        let mut env = CorePendulum::new(PendulumParams::default(), seed)?;
        let actor = ActorNet::new(ActorArch::pendulum(), vec![2.0], &mut ChaCha8Rng::seed_from_u64(seed))?;
        let cfg = Td3Config {
            seed,
            total_steps,
            warmup_steps,
            ..Default::default()
        };
        let mut agent = Td3Agent::new(actor, cfg)?;
        let report = train(&mut env, &mut agent, L2Source::Software)?;
        Ok((agent.actor, report.trace.episode_returns()))
    };
    let (actor, returns) = py.detach(run).map_err(to_py)?;
    Ok((PyActor { inner: actor }, returns))
}

#[pymodule]
#[pyo3(name = "photospike")]
fn photospike_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(train_pendulum, m)?)?;
    m.add_class::<PyMesh>()?;
    m.add_class::<PyActor>()?;
    m.add_class::<PyPendulum>()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_conversion_roundtrips() {
        let rows = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
        let m = rows_to_matrix(&rows).unwrap();
        assert_eq!(m.dim(), (2, 3));
        assert_eq!(m[[1, 0]], 4.0);
        assert_eq!(matrix_to_rows(&m), rows);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(rows_to_matrix(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
