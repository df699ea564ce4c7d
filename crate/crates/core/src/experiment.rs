//! Top-level run loop and on-disk outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{Ablation, ExperimentConfig};
use crate::error::Result;
use crate::metrics::{write_metrics, MetricsRecord};
use crate::trainer::Trainer;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub ablation: Ablation,
    pub env: String,
    pub epochs: usize,
    pub env_steps: usize,
    pub final_mean_eval_return: f64,
    pub final_std_eval_return: f64,
    /// Mean of the last quarter of the evaluation rows.
    pub tail_mean_eval_return: f64,
}

impl Summary {
    pub fn from_trainer(t: &Trainer) -> Self {
        let rows = &t.metrics;
        let last = rows.last();
        let tail = &rows[rows.len() - rows.len().div_ceil(4).min(rows.len())..];
        let tail_mean = if tail.is_empty() {
            f64::NAN
        } else {
            tail.iter().map(|r| r.mean_eval_return).sum::<f64>() / tail.len() as f64
        };
        Summary {
            seed: t.cfg.seed,
            ablation: t.cfg.ablation,
            env: format!("{:?}", t.cfg.env.kind),
            epochs: t.epoch,
            env_steps: t.env_steps,
            final_mean_eval_return: last.map_or(f64::NAN, |r| r.mean_eval_return),
            final_std_eval_return: last.map_or(f64::NAN, |r| r.std_eval_return),
            tail_mean_eval_return: tail_mean,
        }
    }
}

fn flush(trainer: &Trainer, out: &Path) -> Result<()> {
    write_metrics(&out.join(METRICS_FILE), &trainer.metrics)?;
    checkpoint::save(trainer, &out.join(CHECKPOINT_DIR))
}

/// Trains `trainer` until it has run `cfg.train.epochs` epochs, writing
/// outputs into `out`. Works for fresh and resumed trainers alike.
pub fn continue_experiment(mut trainer: Trainer, out: &Path) -> Result<Summary> {
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), trainer.cfg.to_toml()?)?;
    if let Err(e) = trainer.warm_start() {
        let _ = flush(&trainer, out);
        return Err(trainer.epoch_error(e));
    }
    let every = trainer.cfg.train.checkpoint_every;
    while trainer.epoch < trainer.cfg.train.epochs {
        match trainer.run_epoch() {
            Ok(Some(rec)) => log::info!(
                "epoch {} steps {} return {:.3} +- {:.3}",
                rec.epoch,
                rec.env_steps,
                rec.mean_eval_return,
                rec.std_eval_return
            ),
            Ok(None) => {}
            Err(e) => {
                let err = trainer.epoch_error(e);
                if let Err(fe) = flush(&trainer, out) {
                    log::error!("checkpoint flush after failure also failed: {fe}");
                }
                return Err(err);
            }
        }
        write_metrics(&out.join(METRICS_FILE), &trainer.metrics)?;
        if every > 0 && trainer.epoch % every == 0 {
            checkpoint::save(&trainer, &out.join(CHECKPOINT_DIR))?;
        }
    }
    flush(&trainer, out)?;
    let summary = Summary::from_trainer(&trainer);
    fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

pub fn run_experiment(cfg: ExperimentConfig, out: &Path) -> Result<Summary> {
    continue_experiment(Trainer::new(cfg)?, out)
}

/// Resumes from `out/checkpoint`.
pub fn resume_experiment(out: &Path) -> Result<Summary> {
    continue_experiment(checkpoint::load(&out.join(CHECKPOINT_DIR))?, out)
}

/// Runs every ablation with the same seed, one subdirectory each.
pub fn run_ablation_matrix(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<(Ablation, Summary)>> {
    let mut results = Vec::new();
    for ablation in Ablation::ALL {
        let mut c = cfg.clone();
        c.ablation = ablation;
        let dir: PathBuf = out.join(ablation.name());
        results.push((ablation, run_experiment(c, &dir)?));
    }
    Ok(results)
}

pub fn final_return(rows: &[MetricsRecord]) -> Option<f64> {
    rows.last().map(|r| r.mean_eval_return)
}
