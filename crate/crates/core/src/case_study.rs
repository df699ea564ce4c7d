//! Representation-only run on the oscillator with a scripted damping
//! schedule, and a comparison of the reconstructed `zhat` against it.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wisdom_tensor::Tensor;

use crate::config::{Ablation, ExperimentConfig};
use crate::encoder::encoder_input;
use crate::envs::{make_env, EnvKind, Segment, TaskSchedule, Transition};
use crate::error::{param_err, Result};
use crate::metrics::write_table;
use crate::motivating::write_stack;
use crate::signals::pearson;
use crate::trainer::{ContextTracker, Trainer};
use crate::wavelet::dwt_full;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseStudySetup {
    pub seed: u64,
    /// Damping per segment; neighbours must differ.
    pub omegas: Vec<f64>,
    pub segment_len: usize,
    pub collect_steps: usize,
    pub repr_steps: usize,
    /// Probability of pushing along the current velocity.
    pub pump_prob: f64,
    pub config: ExperimentConfig,
}

impl Default for CaseStudySetup {
    fn default() -> Self {
        let mut config = ExperimentConfig::default();
        config.env.kind = EnvKind::OscDamp;
        config.env.episode_len = EnvKind::OscDamp.default_episode_len();
        config.ablation = Ablation::Full;
        config.train.kl_weight = 1e-4;
        config.train.lr = 1e-3;
        config.train.repr_batch = 128;
        config.train.decoder_horizons = vec![1];
        CaseStudySetup {
            seed: 0,
            omegas: vec![0.85, 1.0, 0.9, 0.95, 0.85, 1.0, 0.9, 0.95],
            segment_len: 55,
            collect_steps: 16_000,
            repr_steps: 2_000,
            pump_prob: 0.8,
            config,
        }
    }
}

impl CaseStudySetup {
    pub fn schedule(&self) -> Result<TaskSchedule> {
        if self.omegas.windows(2).any(|w| w[0] == w[1]) {
            return param_err("neighbouring segments must differ");
        }
        TaskSchedule::from_segments(
            self.omegas
                .iter()
                .map(|&w| Segment {
                    omega: vec![w],
                    duration: self.segment_len,
                })
                .collect(),
        )
    }
}

/// Pushes with the velocity most of the time so the damping term stays
/// visible; otherwise acts uniformly.
pub fn pump_action(obs: &[f64], pump_prob: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if rng.random::<f64>() < pump_prob {
        vec![if obs[1] >= 0.0 { 1.0 } else { -1.0 }]
    } else {
        vec![rng.random_range(-1.0..1.0)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyReport {
    pub seed: u64,
    /// `|corr(zhat_k, omega)|` per latent dimension.
    pub abs_corr: Vec<f64>,
    pub best_abs_corr: f64,
    pub final_kl: f64,
    pub final_decoder: f64,
}

pub struct CaseStudyRun {
    pub transitions: Vec<Transition>,
    /// Posterior means, one row per step.
    pub z: Vec<Vec<f64>>,
    /// Context after each step.
    pub zhat: Vec<Vec<f64>>,
    pub trainer: Trainer,
    pub report: CaseStudyReport,
}

pub fn run_case_study(setup: &CaseStudySetup) -> Result<CaseStudyRun> {
    if setup.config.env.kind != EnvKind::OscDamp {
        return param_err("the case study runs on oscdamp");
    }
    if !(0.0..=1.0).contains(&setup.pump_prob) {
        return param_err(format!("pump_prob must be in [0, 1], got {}", setup.pump_prob));
    }
    let schedule = setup.schedule()?;
    let mut cfg = setup.config.clone();
    cfg.seed = setup.seed;
    let mut trainer = Trainer::new(cfg)?;
    let p = setup.pump_prob;
    let mut pump = |obs: &[f64], rng: &mut ChaCha8Rng| pump_action(obs, p, rng);
    trainer.collect_with(setup.collect_steps, Some(&mut pump))?;
    let stats = trainer.train_representation_phase(setup.repr_steps)?;

    let mut env = make_env(&trainer.cfg.env, setup.seed ^ 0x6361_7365)?;
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed ^ 0x7075_6d70);
    let mut s = env.reset_with(schedule.clone());
    let mode = trainer.agent.context_mode(trainer.cfg.ablation)?;
    let agent = &trainer.agent;
    let mut tracker = ContextTracker::new(agent, &mode);
    let (mut transitions, mut z, mut zhat) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..schedule.total_steps() {
        let tr = env.step(&pump_action(&s, p, &mut rng));
        s = tr.s_next.clone();
        tracker.push(&tr);
        z.push(agent.encoder.mean_row(&agent.norm.apply(&encoder_input(&tr))));
        zhat.push(tracker.raw());
        transitions.push(tr);
    }
    let omega: Vec<f64> = transitions.iter().map(|t| t.omega[0]).collect();
    let abs_corr: Vec<f64> = (0..trainer.cfg.model.latent_dim)
        .map(|k| {
            let c: Vec<f64> = zhat.iter().map(|r| r[k]).collect();
            let r = pearson(&c, &omega).abs();
            if r.is_finite() { r } else { 0.0 }
        })
        .collect();
    let best_abs_corr = abs_corr.iter().copied().fold(0.0, f64::max);
    let report = CaseStudyReport {
        seed: setup.seed,
        abs_corr,
        best_abs_corr,
        final_kl: stats.kl,
        final_decoder: stats.decoder,
    };
    Ok(CaseStudyRun {
        transitions,
        z,
        zhat,
        trainer,
        report,
    })
}

/// Writes `case_study.csv` (step, omega, z, zhat), the wavelet coefficients
/// of `z` and `report.json`.
pub fn write_case_study(dir: &Path, run: &CaseStudyRun) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let d = run.trainer.cfg.model.latent_dim;
    let mut header = vec!["step".to_string(), "omega".to_string(), "segment".to_string()];
    header.extend((0..d).map(|k| format!("z{k}")));
    header.extend((0..d).map(|k| format!("zhat{k}")));
    let rows: Vec<Vec<f64>> = run
        .transitions
        .iter()
        .enumerate()
        .map(|(i, tr)| {
            let mut r = vec![i as f64, tr.omega[0], tr.segment as f64];
            r.extend(&run.z[i]);
            r.extend(&run.zhat[i]);
            r
        })
        .collect();
    write_table(&dir.join("case_study.csv"), &header, &rows)?;
    let flat: Vec<f64> = run.z.iter().flatten().copied().collect();
    let z = Tensor::new(&[run.z.len(), d], flat)?;
    let repr = &run.trainer.agent.repr;
    let stack = dwt_full(&z, &repr.bank, repr.levels)?;
    let names: Vec<String> = (0..d).map(|k| format!("z{k}")).collect();
    write_stack(dir, &stack, &names)?;
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&run.report)?,
    )?;
    Ok(())
}
