//! Experiment configuration (TOML).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{EnvConfig, EnvKind};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    Full,
    /// Wavelet TD weight forced to 0.
    NoWaveletTd,
    /// The policy reads the encoder mean directly; `Y` and `W` are unused.
    NoYNet,
    /// Zero representation; no representation training at all.
    PlainSac,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoWaveletTd,
        Ablation::NoYNet,
        Ablation::PlainSac,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoWaveletTd => "no-wavelet-td",
            Ablation::NoYNet => "no-y-net",
            Ablation::PlainSac => "plain-sac",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    /// Window `L` seen by `Y` and `W`.
    pub window: usize,
    pub levels: usize,
    pub keep_fraction: f64,
    pub filter_taps: usize,
    pub trainable_filters: bool,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub rl_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 5,
            window: 16,
            levels: 2,
            keep_fraction: 0.5,
            filter_taps: 2,
            trainable_filters: true,
            encoder_hidden: vec![64, 64],
            decoder_hidden: vec![64, 64],
            rl_hidden: vec![64, 64],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Uniform-random warm-start steps.
    pub initial_transitions: usize,
    pub collect_steps: usize,
    pub repr_steps: usize,
    pub repr_batch: usize,
    pub policy_steps: usize,
    pub policy_batch: usize,
    pub lr: f64,
    pub tau: f64,
    pub gamma: f64,
    pub wavelet_gamma: f64,
    /// Wavelet TD weight; `None` picks the per-environment default.
    pub alpha_y: Option<f64>,
    pub kl_weight: f64,
    pub decoder_weight: f64,
    /// The decoder predicts transition `i + h - 1` from the context after
    /// transition `i - 1`, for every `h` here.
    pub decoder_horizons: Vec<usize>,
    /// Weight of the reward column in the decoder loss.
    pub decoder_reward_weight: f64,
    pub encoder_from_repr_losses: bool,
    pub normalize_inputs: bool,
    pub buffer_capacity: usize,
    pub eval_trajectories: usize,
    pub eval_every: usize,
    /// 0 disables periodic checkpoints (the final one is always written).
    pub checkpoint_every: usize,
    pub initial_alpha: f64,
    pub entropy_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            initial_transitions: 800,
            collect_steps: 800,
            repr_steps: 50,
            repr_batch: 32,
            policy_steps: 200,
            policy_batch: 128,
            lr: 3e-4,
            tau: 5e-3,
            gamma: 0.99,
            wavelet_gamma: 0.99,
            alpha_y: None,
            kl_weight: 0.01,
            decoder_weight: 1.0,
            decoder_horizons: vec![1, 4, 8],
            decoder_reward_weight: 1.0,
            encoder_from_repr_losses: true,
            normalize_inputs: true,
            buffer_capacity: 100_000,
            eval_trajectories: 2,
            eval_every: 1,
            checkpoint_every: 0,
            initial_alpha: 1.0,
            entropy_factor: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub ablation: Ablation,
    pub env: EnvConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            ablation: Ablation::Full,
            env: EnvConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Restores the full-size settings: network widths, batch sizes, step
    /// counts, buffer size and window length.
    pub fn paper_scale(mut self) -> Self {
        let glucose = self.env.kind == EnvKind::GlucoSim;
        let m = &mut self.model;
        m.window = 64;
        m.encoder_hidden = vec![200, 200, 200];
        m.decoder_hidden = vec![200, 200, 200];
        m.rl_hidden = vec![300, 300, 300];
        let t = &mut self.train;
        t.repr_steps = 200;
        t.repr_batch = 256;
        t.policy_batch = 256;
        t.policy_steps = if glucose { 200 } else { 2000 };
        t.initial_transitions = if glucose { 400 } else { 200 };
        t.collect_steps = if glucose { 200 } else { 800 };
        t.buffer_capacity = 10_000_000;
        t.epochs = 200;
        self
    }

    pub fn alpha_y(&self) -> f64 {
        if self.ablation == Ablation::NoWaveletTd {
            return 0.0;
        }
        self.train.alpha_y.unwrap_or(match self.env.kind {
            EnvKind::GlucoSim => 0.1,
            _ => 0.9,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        let m = &self.model;
        let t = &self.train;
        let bad = |msg: String| Err(Error::Config(msg));
        if m.levels == 0 || m.window < 1 << m.levels {
            return bad(format!(
                "window {} must be >= 2^levels with levels >= 1 (levels = {})",
                m.window, m.levels
            ));
        }
        if m.latent_dim == 0 {
            return bad("latent_dim must be >= 1".into());
        }
        if !(m.keep_fraction > 0.0 && m.keep_fraction <= 1.0) {
            return bad(format!("keep_fraction must be in (0, 1], got {}", m.keep_fraction));
        }
        if m.filter_taps < 2 || m.filter_taps % 2 != 0 {
            return bad(format!("filter_taps must be even and >= 2, got {}", m.filter_taps));
        }
        for (name, v) in [("lr", t.lr), ("tau", t.tau), ("initial_alpha", t.initial_alpha)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if t.tau > 1.0 {
            return bad(format!("tau must be <= 1, got {}", t.tau));
        }
        for (name, v) in [("gamma", t.gamma), ("wavelet_gamma", t.wavelet_gamma)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1), got {v}"));
            }
        }
        if let Some(a) = t.alpha_y {
            if !(a >= 0.0) {
                return bad(format!("alpha_y must be >= 0, got {a}"));
            }
        }
        if t.kl_weight < 0.0 || t.decoder_weight < 0.0 || t.decoder_reward_weight < 0.0 {
            return bad("loss weights must be >= 0".into());
        }
        if t.decoder_horizons.is_empty() || t.decoder_horizons.iter().any(|&h| h == 0 || h > m.window) {
            return bad(format!("decoder_horizons must be in 1..={}", m.window));
        }
        if t.repr_batch == 0 || t.policy_batch == 0 {
            return bad("batch sizes must be >= 1".into());
        }
        if t.buffer_capacity < m.window + 1 {
            return bad("buffer_capacity must hold at least one window".into());
        }
        if t.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        Ok(())
    }
}
