//! Checkpoints: a JSON manifest plus one little-endian `f64` file per array.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use wisdom_tensor::{Adam, Tensor};

use crate::buffer::EpisodeBuffer;
use crate::config::ExperimentConfig;
use crate::envs::Transition;
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::norm::RunningNorm;
use crate::rng::RngState;
use crate::trainer::Trainer;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizerEntry {
    pub name: String,
    pub steps: u64,
    /// Moment files, one `(m, v)` pair per slot.
    pub slots: Vec<(String, String)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BufferEntry {
    pub file: String,
    pub capacity: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub omega_dim: usize,
    pub episode_lengths: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub epoch: usize,
    pub env_steps: usize,
    pub config: ExperimentConfig,
    pub arrays: Vec<ArrayEntry>,
    pub optimizers: Vec<OptimizerEntry>,
    pub rngs: Vec<(String, RngState)>,
    pub norm: RunningNorm,
    pub ctx_norm: RunningNorm,
    pub buffer: BufferEntry,
    pub metrics: Vec<MetricsRecord>,
}

fn ck_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Checkpoint(msg.into()))
}

fn write_f64s(path: &Path, data: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f64s(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return ck_err(format!("{} is not a whole number of f64s", path.display()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

fn file_name(name: &str) -> String {
    format!("{}.bin", name.replace(['/', '\\'], "_"))
}

fn save_optimizer(dir: &Path, name: &str, opt: &Adam) -> Result<OptimizerEntry> {
    let (steps, m, v) = opt.state();
    let mut slots = Vec::with_capacity(m.len());
    for (i, (mi, vi)) in m.iter().zip(v).enumerate() {
        let fm = file_name(&format!("opt.{name}.{i}.m"));
        let fv = file_name(&format!("opt.{name}.{i}.v"));
        write_f64s(&dir.join(&fm), mi)?;
        write_f64s(&dir.join(&fv), vi)?;
        slots.push((fm, fv));
    }
    Ok(OptimizerEntry {
        name: name.to_string(),
        steps,
        slots,
    })
}

fn load_optimizer(dir: &Path, entry: &OptimizerEntry, opt: &mut Adam) -> Result<()> {
    let mut m = Vec::with_capacity(entry.slots.len());
    let mut v = Vec::with_capacity(entry.slots.len());
    for (fm, fv) in &entry.slots {
        m.push(read_f64s(&dir.join(fm))?);
        v.push(read_f64s(&dir.join(fv))?);
    }
    opt.restore(entry.steps, m, v)?;
    Ok(())
}

fn omega_dim(buffer: &EpisodeBuffer) -> usize {
    buffer
        .episodes()
        .next()
        .and_then(|e| e.first())
        .map_or(0, |t| t.omega.len())
}

fn encode_transition(t: &Transition, out: &mut Vec<f64>) {
    out.extend_from_slice(&t.s);
    out.extend_from_slice(&t.a);
    out.extend_from_slice(&t.s_next);
    out.push(t.r);
    out.push(if t.done { 1.0 } else { 0.0 });
    out.push(if t.truncated { 1.0 } else { 0.0 });
    out.extend_from_slice(&t.omega);
    out.push(t.step as f64);
    out.push(t.segment as f64);
}

fn decode_transition(row: &[f64], obs: usize, act: usize, omega: usize) -> Transition {
    let mut i = 0;
    let mut take = |n: usize| {
        let v = row[i..i + n].to_vec();
        i += n;
        v
    };
    let s = take(obs);
    let a = take(act);
    let s_next = take(obs);
    let rest = take(3 + omega + 2);
    Transition {
        s,
        a,
        s_next,
        r: rest[0],
        done: rest[1] != 0.0,
        truncated: rest[2] != 0.0,
        omega: rest[3..3 + omega].to_vec(),
        step: rest[3 + omega] as usize,
        segment: rest[4 + omega] as usize,
    }
}

/// Writes the whole training state into `dir` (created if missing).
pub fn save(trainer: &Trainer, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let agent = &trainer.agent;
    let mut arrays = Vec::new();
    for (name, t) in agent.tensor_names().into_iter().zip(agent.tensors()) {
        let file = file_name(&name);
        write_f64s(&dir.join(&file), t.data())?;
        arrays.push(ArrayEntry {
            name,
            shape: t.shape().to_vec(),
            file,
        });
    }
    let optimizers = vec![
        save_optimizer(dir, "repr", &agent.repr_opt)?,
        save_optimizer(dir, "policy", &agent.sac.policy_opt)?,
        save_optimizer(dir, "critic", &agent.sac.critic_opt)?,
        save_optimizer(dir, "alpha", &agent.sac.alpha_opt)?,
    ];
    let mut flat = Vec::new();
    for e in trainer.buffer.episodes() {
        for t in e {
            encode_transition(t, &mut flat);
        }
    }
    let buffer = BufferEntry {
        file: "buffer.bin".into(),
        capacity: trainer.buffer.capacity(),
        obs_dim: trainer.obs_dim,
        act_dim: trainer.act_dim,
        omega_dim: omega_dim(&trainer.buffer),
        episode_lengths: trainer.buffer.episodes().map(<[Transition]>::len).collect(),
    };
    write_f64s(&dir.join(&buffer.file), &flat)?;
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT,
        epoch: trainer.epoch,
        env_steps: trainer.env_steps,
        config: trainer.cfg.clone(),
        arrays,
        optimizers,
        rngs: vec![
            ("env".into(), RngState::capture(&trainer.env_rng)),
            ("sampling".into(), RngState::capture(&trainer.sample_rng)),
            ("noise".into(), RngState::capture(&trainer.noise_rng)),
        ],
        norm: agent.norm.clone(),
        ctx_norm: agent.ctx_norm.clone(),
        buffer,
        metrics: trainer.metrics.clone(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != CHECKPOINT_FORMAT {
        return ck_err(format!("checkpoint format {} (expected {CHECKPOINT_FORMAT})", m.format));
    }
    Ok(m)
}

/// Rebuilds a trainer from `dir`.
pub fn load(dir: &Path) -> Result<Trainer> {
    let m = read_manifest(dir)?;
    let mut trainer = Trainer::new(m.config.clone())?;
    let names = trainer.agent.tensor_names();
    if names.len() != m.arrays.len() {
        return ck_err(format!(
            "checkpoint has {} arrays, model has {}",
            m.arrays.len(),
            names.len()
        ));
    }
    for ((name, t), entry) in names
        .iter()
        .zip(trainer.agent.tensors_mut())
        .zip(&m.arrays)
    {
        if *name != entry.name || t.shape() != entry.shape.as_slice() {
            return ck_err(format!(
                "array {} {:?} does not match model tensor {name} {:?}",
                entry.name,
                entry.shape,
                t.shape()
            ));
        }
        let data = read_f64s(&dir.join(&entry.file))?;
        if data.len() != t.numel() {
            return ck_err(format!("{} holds {} values", entry.file, data.len()));
        }
        t.data_mut().copy_from_slice(&data);
    }
    let agent = &mut trainer.agent;
    for entry in &m.optimizers {
        let opt = match entry.name.as_str() {
            "repr" => &mut agent.repr_opt,
            "policy" => &mut agent.sac.policy_opt,
            "critic" => &mut agent.sac.critic_opt,
            "alpha" => &mut agent.sac.alpha_opt,
            other => return ck_err(format!("unknown optimizer {other}")),
        };
        load_optimizer(dir, entry, opt)?;
    }
    agent.norm = m.norm.clone();
    agent.ctx_norm = m.ctx_norm.clone();
    for (name, state) in &m.rngs {
        let r = state.restore();
        match name.as_str() {
            "env" => trainer.env_rng = r,
            "sampling" => trainer.sample_rng = r,
            "noise" => trainer.noise_rng = r,
            other => return ck_err(format!("unknown rng {other}")),
        }
    }
    let b = &m.buffer;
    let flat = read_f64s(&dir.join(&b.file))?;
    let width = 2 * b.obs_dim + b.act_dim + 3 + b.omega_dim + 2;
    let total: usize = b.episode_lengths.iter().sum();
    if flat.len() != total * width {
        return ck_err("buffer file does not match its episode lengths");
    }
    let mut buffer = EpisodeBuffer::new(b.capacity);
    let mut rows = flat.chunks_exact(width);
    for &len in &b.episode_lengths {
        let ep = rows
            .by_ref()
            .take(len)
            .map(|r| decode_transition(r, b.obs_dim, b.act_dim, b.omega_dim))
            .collect();
        buffer.push_episode(ep);
    }
    trainer.buffer = buffer;
    trainer.epoch = m.epoch;
    trainer.env_steps = m.env_steps;
    trainer.metrics = m.metrics;
    Ok(trainer)
}

/// Reads one array without rebuilding the trainer.
pub fn tensor_by_name(dir: &Path, name: &str) -> Result<Tensor> {
    let m = read_manifest(dir)?;
    let e = m
        .arrays
        .iter()
        .find(|a| a.name == name)
        .ok_or_else(|| Error::Checkpoint(format!("no array {name}")))?;
    Ok(Tensor::new(&e.shape, read_f64s(&dir.join(&e.file))?)?)
}
