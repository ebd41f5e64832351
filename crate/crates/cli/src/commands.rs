use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use photospike::hybrid::{
    convergence_report, cotrain as run_cotrain, extract_l2, map_to_hardware, offline_compare, HardwareLayer,
    MeshBackend, WeightSnapshot,
};
use photospike::mesh::VoltageTable;
use photospike::snn::ActorNet;
use photospike::td3::{train as run_train, CriticPair, L2Source, RewardTrace, Td3Agent, TrainReport};
use photospike::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Route};

/// Creates the output directory and records the resolved config in it.
fn prepare(cfg: &ExperimentConfig, command: &str) -> Result<PathBuf> {
    let dir = cfg.output_dir(command);
    std::fs::create_dir_all(&dir)?;
    write_json(&dir.join("resolved-config.json"), cfg)?;
    Ok(dir)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn write_trace(dir: &Path, trace: &RewardTrace, window: usize) -> Result<()> {
    trace.write_csv(create(&dir.join("reward.csv"))?)?;
    trace.write_ma_csv(create(&dir.join("reward_ma.csv"))?, window)
}

fn train_summary(command: &str, cfg: &ExperimentConfig, report: &TrainReport) -> Value {
    json!({
        "command": command,
        "seed": cfg.seed,
        "steps": report.steps,
        "episodes": report.trace.episode_returns().len(),
        "solved_at": report.solved_at,
        "last_eval_mean": report.last_eval.map(|e| e.0),
        "last_eval_std": report.last_eval.map(|e| e.1),
        "critic_updates": report.critic_updates,
        "actor_updates": report.actor_updates,
    })
}

pub fn train(cfg: &ExperimentConfig) -> Result<()> {
    let dir = prepare(cfg, "train")?;
    let mut env = cfg.environment()?;
    let spec = env.spec().clone();
    let actor = ActorNet::new(cfg.arch(&spec), spec.action_scale(), &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let mut agent = Td3Agent::new(actor, cfg.td3.clone())?;
    let report = run_train(env.as_mut(), &mut agent, L2Source::Software)?;
    agent.actor.save(dir.join("actor.json"))?;
    agent.critic_pair().save(dir.join("critics.json"))?;
    write_trace(&dir, &report.trace, cfg.td3.ma_window)?;
    write_json(&dir.join("summary.json"), &train_summary("train", cfg, &report))
}

pub fn calibrate(cfg: &ExperimentConfig, snapshot: &Path) -> Result<()> {
    let dir = prepare(cfg, "calibrate")?;
    let actor = ActorNet::load(snapshot)?;
    let mut env = cfg.environment()?;
    let weights = extract_l2(&actor, env.as_mut(), cfg.samples, cfg.seed)?;
    weights.save(dir.join("weights.json"))?;
    let mesh = cfg.mesh()?;
    let (record, layer) = map_to_hardware(&weights, &mesh, &cfg.spgd)?;
    layer.voltages.save(dir.join("voltages.csv"))?;
    record.write_trace_csv(create(&dir.join("calibration.csv"))?)?;
    write_json(&dir.join("hardware.json"), &layer)?;
    let summary = json!({
        "command": "calibrate",
        "seed": cfg.seed,
        "converged": record.converged,
        "best_similarity": finite(record.best_similarity),
        "iterations": record.history.len(),
        "target_similarity": cfg.spgd.target_similarity,
        "scale": layer.scale,
        "gain": layer.gain,
        "transmitted_values": weights.transmitted_values(),
    });
    write_json(&dir.join("summary.json"), &summary)
}

fn realize(cfg: &ExperimentConfig, weights: &Path, voltages: &Path) -> Result<(WeightSnapshot, HardwareLayer)> {
    let snap = WeightSnapshot::load(weights)?;
    let v = VoltageTable::load(voltages)?;
    let layer = HardwareLayer::realize(&cfg.mesh()?, v, &snap.l2_target)?;
    Ok((snap, layer))
}

pub fn compare(cfg: &ExperimentConfig, weights: &Path, voltages: &Path) -> Result<()> {
    let dir = prepare(cfg, "compare")?;
    let (snap, layer) = realize(cfg, weights, voltages)?;
    let backend = MeshBackend::from_layer(&cfg.mesh()?, &layer);
    let report = offline_compare(&snap, &backend)?;
    report.write_json(create(&dir.join("deviation.json"))?)?;
    report.write_series_csv(create(&dir.join("deviation_series.csv"))?)?;
    let summary = json!({
        "command": "compare",
        "seed": cfg.seed,
        "similarity": layer.similarity,
        "n_samples": report.n_samples,
        "mean_pct_deviation": report.mean_pct_deviation,
        "max_pct_deviation": report.max_pct_deviation,
    });
    write_json(&dir.join("summary.json"), &summary)
}

pub fn cotrain(cfg: &ExperimentConfig, weights: &Path, voltages: &Path, critics: Option<&Path>) -> Result<()> {
    let dir = prepare(cfg, "cotrain")?;
    let (snap, layer) = realize(cfg, weights, voltages)?;
    let backend = match cfg.cotrain.route {
        Route::Twin => MeshBackend::twin(&layer),
        Route::Mesh => MeshBackend::from_layer(&cfg.mesh()?, &layer),
    };
    let critics = critics.map(|p| CriticPair::load(p).map(|c| c.critics)).transpose()?;
    let mut env = cfg.environment()?;
    let td3 = cfg.cotrain_td3();
    let out = run_cotrain(&snap.actor()?, critics, &backend, env.as_mut(), td3.clone())?;
    out.actor.save(dir.join("actor.json"))?;
    out.critics.save(dir.join("critics.json"))?;
    write_trace(&dir, &out.report.trace, td3.ma_window)?;
    let mut summary = train_summary("cotrain", cfg, &out.report);
    summary["similarity"] = json!(layer.similarity);
    write_json(&dir.join("summary.json"), &summary)
}

struct RunDir {
    command: String,
    seed: u64,
    trace: RewardTrace,
}

fn read_run(dir: &Path) -> Result<RunDir> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)?;
    let command = v["command"].as_str().unwrap_or_default().to_string();
    let seed = v["seed"]
        .as_u64()
        .ok_or_else(|| Error::Config(format!("{} has no seed", path.display())))?;
    let trace = RewardTrace::read_csv(File::open(dir.join("reward.csv"))?)?;
    Ok(RunDir { command, seed, trace })
}

pub fn report(cfg: &ExperimentConfig, runs: &[PathBuf]) -> Result<()> {
    let mut software = BTreeMap::new();
    let mut cotrained = BTreeMap::new();
    for dir in runs {
        let run = read_run(dir)?;
        let slot = match run.command.as_str() {
            "train" => &mut software,
            "cotrain" => &mut cotrained,
            other => {
                return Err(Error::Config(format!(
                    "{} holds a {other:?} run; expected train or cotrain",
                    dir.display()
                )))
            }
        };
        if slot.insert(run.seed, run.trace).is_some() {
            return Err(Error::Config(format!("two {} runs for seed {}", run.command, run.seed)));
        }
    }
    let mut pairs = Vec::new();
    for (seed, sw) in &software {
        let co = cotrained
            .get(seed)
            .ok_or_else(|| Error::Config(format!("seed {seed} has no cotrain run")))?;
        pairs.push((*seed, sw, co));
    }
    if let Some(seed) = cotrained.keys().find(|s| !software.contains_key(s)) {
        return Err(Error::Config(format!("seed {seed} has no train run")));
    }
    let dir = prepare(cfg, "report")?;
    let report = convergence_report(&pairs, cfg.threshold);
    write_json(&dir.join("convergence.json"), &report)?;
    report.write_csv(create(&dir.join("convergence.csv"))?)
}
