use std::path::{Path, PathBuf};
use std::time::Duration;

use photospike::envs::{Environment, EnvSpec, Pendulum, PendulumParams, RemoteEnv, RemoteEnvEndpoint, Transport};
use photospike::mesh::{MeshTopology, NoiseModel, PhaseVoltageMap, PhotonicMesh, ReadoutMode};
use photospike::spgd::SpgdConfig;
use photospike::td3::{Td3Config, WarmupPolicy};
use photospike::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Pendulum,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActorSettings {
    pub hidden: usize,
    pub time_steps: usize,
}

impl Default for ActorSettings {
    fn default() -> Self {
        Self {
            hidden: 16,
            time_steps: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSettings {
    pub n: usize,
    pub noise: NoiseModel,
    pub map: PhaseVoltageMap,
    pub readout: ReadoutMode,
}

impl Default for MeshSettings {
    fn default() -> Self {
        Self {
            n: 16,
            noise: NoiseModel::noiseless(),
            map: PhaseVoltageMap::default(),
            readout: ReadoutMode::Coherent,
        }
    }
}

/// Which L2 the co-training forward pass uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    /// The noiseless digital twin of the realized matrix.
    Twin,
    /// The mesh simulator with its configured noise.
    Mesh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CotrainSettings {
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub warmup_policy: WarmupPolicy,
    pub route: Route,
}

impl Default for CotrainSettings {
    fn default() -> Self {
        Self {
            total_steps: 50_000,
            warmup_steps: 1_000,
            warmup_policy: WarmupPolicy::Policy,
            route: Route::Twin,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    /// `tcp:host:port` or `stdio:command args`, for the remote task.
    pub endpoint: Option<String>,
    pub endpoint_timeout_secs: f64,
    pub actor: ActorSettings,
    pub td3: Td3Config,
    pub cotrain: CotrainSettings,
    pub mesh: MeshSettings,
    pub spgd: SpgdConfig,
    /// Test-set size for extraction.
    pub samples: usize,
    /// Evaluation return counted as converged in reports.
    pub threshold: f64,
    pub out: Option<PathBuf>,
    /// Drives every module seed; the resolved file records the derived ones.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Pendulum,
            endpoint: None,
            endpoint_timeout_secs: 30.0,
            actor: ActorSettings::default(),
            td3: Td3Config::default(),
            cotrain: CotrainSettings::default(),
            mesh: MeshSettings::default(),
            spgd: SpgdConfig::default(),
            samples: 1000,
            threshold: -200.0,
            out: None,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))
    }

    /// Pushes the top-level seed into every module and checks the result.
    pub fn resolve(mut self) -> Result<Self> {
        self.td3.seed = self.seed;
        self.spgd.seed = self.seed;
        self.mesh.noise.seed = self.seed;
        self.td3.validate()?;
        self.spgd.validate()?;
        self.mesh.noise.validate()?;
        self.mesh.map.validate()?;
        if self.mesh.n == 0 || self.samples == 0 {
            return Err(Error::Config("mesh size and sample count must be positive".into()));
        }
        if !(self.endpoint_timeout_secs > 0.0) {
            return Err(Error::Config("endpoint timeout must be positive".into()));
        }
        if self.task == Task::Remote && self.endpoint.is_none() {
            return Err(Error::Config("the remote task needs an endpoint".into()));
        }
        Ok(self)
    }

    pub fn cotrain_td3(&self) -> Td3Config {
        Td3Config {
            seed: self.seed.wrapping_add(1000),
            total_steps: self.cotrain.total_steps,
            warmup_steps: self.cotrain.warmup_steps,
            warmup_policy: self.cotrain.warmup_policy,
            ..self.td3.clone()
        }
    }

    pub fn environment(&self) -> Result<Box<dyn Environment>> {
        match self.task {
            Task::Pendulum => Ok(Box::new(Pendulum::new(PendulumParams::default(), self.seed)?)),
            Task::Remote => {
                let spec = self.endpoint.as_deref().unwrap_or_default();
                let endpoint = RemoteEnvEndpoint {
                    transport: Transport::parse(spec)?,
                    timeout: Duration::from_secs_f64(self.endpoint_timeout_secs),
                    declared_dims: None,
                };
                Ok(Box::new(RemoteEnv::connect(&endpoint)?))
            }
        }
    }

    pub fn arch(&self, spec: &EnvSpec) -> photospike::snn::ActorArch {
        photospike::snn::ActorArch {
            state_dim: spec.state_dim,
            hidden: self.actor.hidden,
            action_dim: spec.action_dim,
            time_steps: self.actor.time_steps,
        }
    }

    pub fn mesh(&self) -> Result<PhotonicMesh> {
        let topology = MeshTopology::rectangular(self.mesh.n)?;
        Ok(PhotonicMesh::new(topology, self.mesh.map, self.mesh.noise).with_readout(self.mesh.readout))
    }

    pub fn output_dir(&self, command: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(command))
    }
}
