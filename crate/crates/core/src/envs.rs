//! Control environments: a self-contained Pendulum, the HalfCheetah reward
//! as a pure function, and a newline-delimited JSON protocol for driving an
//! external physics engine.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.action_low.len() != self.action_dim || self.action_high.len() != self.action_dim {
            return Err(Error::Protocol(format!(
                "action bounds have {}/{} entries for {} action dims",
                self.action_low.len(),
                self.action_high.len(),
                self.action_dim
            )));
        }
        if self.action_low.iter().zip(&self.action_high).any(|(l, h)| !(l < h)) {
            return Err(Error::Protocol("action_low must lie below action_high".into()));
        }
        Ok(())
    }

    /// Symmetric scale `max(|low|, |high|)` per action dimension.
    pub fn action_scale(&self) -> Vec<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(l, h)| l.abs().max(h.abs()))
            .collect()
    }

    pub fn clip_action(&self, action: &mut [f64]) {
        for ((a, l), h) in action.iter_mut().zip(&self.action_low).zip(&self.action_high) {
            *a = a.clamp(*l, *h);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub state: Vec<f64>,
    pub reward: f64,
    /// The episode is over.
    pub done: bool,
    /// It ended on a time limit rather than a terminal state.
    pub truncated: bool,
}

/// Reset/step contract shared by local and remote environments.
pub trait Environment {
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self, seed: Option<u64>) -> Result<Vec<f64>>;
    fn step(&mut self, action: &[f64]) -> Result<Step>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub dt: f64,
    pub max_torque: f64,
    pub max_speed: f64,
    pub episode_len: usize,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 9.8,
            dt: 0.05,
            max_torque: 2.0,
            max_speed: 8.0,
            episode_len: 200,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.mass, self.length, self.gravity, self.dt, self.max_torque, self.max_speed];
        if vals.iter().any(|v| !(*v > 0.0 && v.is_finite())) || self.episode_len == 0 {
            return Err(Error::Config(format!("pendulum parameters must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Angle from upright, angular velocity and steps taken in the episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
    pub step_count: usize,
}

impl PendulumState {
    pub fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

/// Wraps an angle into `(−π, π]`.
pub fn angle_normalize(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = theta - two_pi * (theta / two_pi).round();
    if w <= -PI {
        w += two_pi;
    } else if w > PI {
        w -= two_pi;
    }
    w
}

pub fn pendulum_reset<R: Rng + ?Sized>(rng: &mut R) -> (PendulumState, Vec<f64>) {
    let state = PendulumState {
        theta: rng.random_range(-PI..=PI),
        theta_dot: rng.random_range(-1.0..=1.0),
        step_count: 0,
    };
    (state, state.observation())
}

/// Semi-implicit Euler step. The reward is the negated penalty
/// `θ² + 0.1·θ̇² + 0.001·u²` evaluated before the update.
pub fn pendulum_step(state: &PendulumState, torque: f64, p: &PendulumParams) -> Result<(PendulumState, Vec<f64>, f64, bool)> {
    if !torque.is_finite() {
        return Err(Error::Numeric(format!("non-finite torque {torque}")));
    }
    let u = torque.clamp(-p.max_torque, p.max_torque);
    let th = state.theta;
    let thdot = state.theta_dot;
    let cost = angle_normalize(th).powi(2) + 0.1 * thdot * thdot + 0.001 * u * u;

    let accel = 3.0 * p.gravity / (2.0 * p.length) * th.sin() + 3.0 * u / (p.mass * p.length * p.length);
    let new_thdot = (thdot + accel * p.dt).clamp(-p.max_speed, p.max_speed);
    let next = PendulumState {
        theta: th + new_thdot * p.dt,
        theta_dot: new_thdot,
        step_count: state.step_count + 1,
    };
    let done = next.step_count >= p.episode_len;
    Ok((next, next.observation(), -cost, done))
}

/// Pendulum swing-up with an internal seeded random stream.
#[derive(Clone, Debug)]
pub struct Pendulum {
    pub params: PendulumParams,
    state: PendulumState,
    rng: ChaCha8Rng,
    spec: EnvSpec,
}

impl Pendulum {
    pub fn new(params: PendulumParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let spec = EnvSpec {
            state_dim: 3,
            action_dim: 1,
            action_low: vec![-params.max_torque],
            action_high: vec![params.max_torque],
        };
        Ok(Self {
            params,
            state: PendulumState {
                theta: 0.0,
                theta_dot: 0.0,
                step_count: 0,
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
            spec,
        })
    }

    pub fn state(&self) -> PendulumState {
        self.state
    }

    pub fn set_state(&mut self, state: PendulumState) {
        self.state = state;
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: Option<u64>) -> Result<Vec<f64>> {
        if let Some(s) = seed {
            self.rng = ChaCha8Rng::seed_from_u64(s);
        }
        let (state, obs) = pendulum_reset(&mut self.rng);
        self.state = state;
        Ok(obs)
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        if action.len() != 1 {
            return Err(Error::dim(1, action.len()));
        }
        let (next, obs, reward, done) = pendulum_step(&self.state, action[0], &self.params)?;
        self.state = next;
        Ok(Step {
            state: obs,
            reward,
            done,
            truncated: done,
        })
    }
}

/// Forward velocity minus control cost: `Δx/Δt − 0.1·Σ aᵢ²`.
pub fn cheetah_reward(dx: f64, dt: f64, actions: &[f64]) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("time step must be positive, got {dt}")));
    }
    let cost: f64 = actions.iter().map(|a| a * a).sum();
    Ok(dx / dt - 0.1 * cost)
}

// ---------------------------------------------------------------------------
// Remote environment protocol
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub enum Transport {
    /// `host:port`
    Tcp(String),
    /// Program and arguments; the protocol runs over its stdin/stdout.
    Stdio(Vec<String>),
}

impl Transport {
    /// Parses `tcp:host:port` or `stdio:program arg ...`.
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(addr) = s.strip_prefix("tcp:") {
            if addr.rsplit_once(':').is_none() {
                return Err(Error::Config(format!("tcp endpoint needs host:port, got {addr}")));
            }
            Ok(Transport::Tcp(addr.to_string()))
        } else if let Some(cmd) = s.strip_prefix("stdio:") {
            let parts: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if parts.is_empty() {
                return Err(Error::Config("stdio endpoint needs a command".into()));
            }
            Ok(Transport::Stdio(parts))
        } else {
            Err(Error::Config(format!("unknown endpoint {s}; use tcp:host:port or stdio:command")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RemoteEnvEndpoint {
    pub transport: Transport,
    pub timeout: Duration,
    /// Expected `(state_dim, action_dim)`, checked against every message.
    pub declared_dims: Option<(usize, usize)>,
}

/// Formats a float with 17 significant digits.
pub fn format_f64(x: f64) -> Result<String> {
    if !x.is_finite() {
        return Err(Error::Protocol(format!("cannot serialize non-finite value {x}")));
    }
    Ok(format!("{x:.16e}"))
}

pub fn format_f64_array(xs: &[f64]) -> Result<String> {
    let parts = xs.iter().map(|&x| format_f64(x)).collect::<Result<Vec<_>>>()?;
    Ok(format!("[{}]", parts.join(",")))
}

struct LineChannel {
    rx: Receiver<std::io::Result<String>>,
}

impl LineChannel {
    fn spawn<R: Read + Send + 'static>(reader: R) -> Self {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut r = BufReader::new(reader);
            loop {
                let mut line = String::new();
                match r.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        Self { rx }
    }

    fn recv(&self, timeout: Duration) -> Result<String> {
        match self.rx.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::Protocol(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::Protocol(format!(
                "no reply within {:.3} s",
                timeout.as_secs_f64()
            ))),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Protocol("remote closed the connection".into())),
        }
    }
}

/// Client side of the remote-environment protocol.
pub struct RemoteEnv {
    lines: LineChannel,
    writer: Box<dyn Write + Send>,
    timeout: Duration,
    spec: EnvSpec,
    messages: usize,
    child: Option<Child>,
}

impl std::fmt::Debug for RemoteEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteEnv")
            .field("spec", &self.spec)
            .field("messages", &self.messages)
            .finish()
    }
}

impl RemoteEnv {
    pub fn connect(endpoint: &RemoteEnvEndpoint) -> Result<Self> {
        match &endpoint.transport {
            Transport::Tcp(addr) => {
                let stream = TcpStream::connect(addr)
                    .map_err(|e| Error::Protocol(format!("cannot connect to {addr}: {e}")))?;
                let reader = stream.try_clone()?;
                Self::handshake(reader, Box::new(stream), None, endpoint)
            }
            Transport::Stdio(cmd) => {
                let mut child = Command::new(&cmd[0])
                    .args(&cmd[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()
                    .map_err(|e| Error::Protocol(format!("cannot start {}: {e}", cmd[0])))?;
                let stdout = child.stdout.take().expect("piped stdout");
                let stdin: ChildStdin = child.stdin.take().expect("piped stdin");
                Self::handshake(stdout, Box::new(stdin), Some(child), endpoint)
            }
        }
    }

    /// Speaks the protocol over arbitrary streams (in-process servers, tests).
    pub fn from_streams<R: Read + Send + 'static>(
        reader: R,
        writer: Box<dyn Write + Send>,
        timeout: Duration,
        declared_dims: Option<(usize, usize)>,
    ) -> Result<Self> {
        let endpoint = RemoteEnvEndpoint {
            transport: Transport::Tcp("in-process:0".into()),
            timeout,
            declared_dims,
        };
        Self::handshake(reader, writer, None, &endpoint)
    }

    fn handshake<R: Read + Send + 'static>(
        reader: R,
        writer: Box<dyn Write + Send>,
        child: Option<Child>,
        endpoint: &RemoteEnvEndpoint,
    ) -> Result<Self> {
        let mut env = Self {
            lines: LineChannel::spawn(reader),
            writer,
            timeout: endpoint.timeout,
            spec: EnvSpec {
                state_dim: 0,
                action_dim: 0,
                action_low: Vec::new(),
                action_high: Vec::new(),
            },
            messages: 0,
            child,
        };
        let reply = env.request("{\"cmd\":\"spec\"}")?;
        let spec: EnvSpec = serde_json::from_value(reply.clone())
            .map_err(|e| Error::Protocol(format!("bad spec reply {reply}: {e}")))?;
        spec.validate()?;
        if let Some((s, a)) = endpoint.declared_dims {
            if (s, a) != (spec.state_dim, spec.action_dim) {
                return Err(Error::Protocol(format!(
                    "declared dims ({s}, {a}) but remote reports ({}, {})",
                    spec.state_dim, spec.action_dim
                )));
            }
        }
        env.spec = spec;
        Ok(env)
    }

    fn request(&mut self, msg: &str) -> Result<Value> {
        writeln!(self.writer, "{msg}").map_err(|e| Error::Protocol(format!("write failed: {e}")))?;
        self.writer.flush().map_err(|e| Error::Protocol(format!("write failed: {e}")))?;
        let line = self.lines.recv(self.timeout)?;
        self.messages += 1;
        let trimmed = line.trim_end();
        let value: Value = serde_json::from_str(trimmed).map_err(|e| {
            Error::Protocol(format!("malformed reply #{} {:?}: {e}", self.messages, clip(trimmed)))
        })?;
        if let Some(err) = value.get("error") {
            return Err(Error::Protocol(format!("remote error: {err}")));
        }
        Ok(value)
    }

    fn state_from(&self, v: &Value) -> Result<Vec<f64>> {
        let state: Vec<f64> = v
            .get("state")
            .and_then(|s| serde_json::from_value(s.clone()).ok())
            .ok_or_else(|| Error::Protocol(format!("reply without numeric state: {}", clip(&v.to_string()))))?;
        if state.len() != self.spec.state_dim {
            return Err(Error::Protocol(format!(
                "state has {} entries, expected {}",
                state.len(),
                self.spec.state_dim
            )));
        }
        Ok(state)
    }
}

fn clip(s: &str) -> String {
    if s.len() > 200 {
        let mut end = 200;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &s[..end])
    } else {
        s.to_string()
    }
}

impl Environment for RemoteEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: Option<u64>) -> Result<Vec<f64>> {
        let msg = match seed {
            Some(s) => format!("{{\"cmd\":\"reset\",\"seed\":{s}}}"),
            None => "{\"cmd\":\"reset\"}".to_string(),
        };
        let reply = self.request(&msg)?;
        self.state_from(&reply)
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        if action.len() != self.spec.action_dim {
            return Err(Error::Protocol(format!(
                "action has {} entries, remote expects {}",
                action.len(),
                self.spec.action_dim
            )));
        }
        let msg = format!("{{\"cmd\":\"step\",\"action\":{}}}", format_f64_array(action)?);
        let reply = self.request(&msg)?;
        let state = self.state_from(&reply)?;
        let reward = reply
            .get("reward")
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::Protocol(format!("step reply without reward: {}", clip(&reply.to_string()))))?;
        let flag = |k: &str| reply.get(k).and_then(Value::as_bool).unwrap_or(false);
        let truncated = flag("truncated");
        Ok(Step {
            state,
            reward,
            done: flag("done") || truncated,
            truncated,
        })
    }
}

impl Drop for RemoteEnv {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Server side: answers protocol requests for a local environment until the
/// reader reaches end of input. Unknown commands and malformed lines get an
/// `{"error": ...}` reply.
pub fn serve_environment<E: Environment + ?Sized, R: BufRead, W: Write>(env: &mut E, reader: R, mut writer: W) -> Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match handle_request(env, &line) {
            Ok(r) => r,
            Err(e) => format!("{{\"error\":{}}}", serde_json::to_string(&e.to_string())?),
        };
        writeln!(writer, "{reply}")?;
        writer.flush()?;
    }
    Ok(())
}

fn handle_request<E: Environment + ?Sized>(env: &mut E, line: &str) -> Result<String> {
    let v: Value = serde_json::from_str(line)
        .map_err(|e| Error::Protocol(format!("malformed request {:?}: {e}", clip(line))))?;
    match v.get("cmd").and_then(Value::as_str) {
        Some("spec") => {
            let s = env.spec();
            Ok(format!(
                "{{\"state_dim\":{},\"action_dim\":{},\"action_low\":{},\"action_high\":{}}}",
                s.state_dim,
                s.action_dim,
                format_f64_array(&s.action_low)?,
                format_f64_array(&s.action_high)?
            ))
        }
        Some("reset") => {
            let seed = v.get("seed").and_then(Value::as_u64);
            let state = env.reset(seed)?;
            Ok(format!("{{\"state\":{}}}", format_f64_array(&state)?))
        }
        Some("step") => {
            let action: Vec<f64> = v
                .get("action")
                .and_then(|a| serde_json::from_value(a.clone()).ok())
                .ok_or_else(|| Error::Protocol("step without numeric action".into()))?;
            let s = env.step(&action)?;
            Ok(format!(
                "{{\"state\":{},\"reward\":{},\"done\":{},\"truncated\":{}}}",
                format_f64_array(&s.state)?,
                format_f64(s.reward)?,
                s.done,
                s.truncated
            ))
        }
        Some(other) => Err(Error::Protocol(format!("unknown cmd {other:?}"))),
        None => Err(Error::Protocol("request without cmd".into())),
    }
}
