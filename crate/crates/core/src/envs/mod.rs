//! Piecewise-stationary environments whose task parameter changes inside an
//! episode according to a [`TaskSchedule`].

mod glucose;
mod noise;
mod oscdamp;
pub mod schedule;
mod veltrack;

use serde::{Deserialize, Serialize};

pub use glucose::{glucose_reward, GlucoSim, MealVariant, Patient};
pub use noise::ObservationNoise;
pub use oscdamp::OscDamp;
pub use schedule::{
    make_schedule, nonstationarity_degree, sample_duration, ScheduleParams, Segment, TaskSchedule,
};
pub use veltrack::VelTrack;

use crate::error::{param_err, Result};

/// One environment step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    pub r: f64,
    /// Terminal: the next state must not be bootstrapped from.
    pub done: bool,
    /// Episode cut by the time limit; still bootstrapped.
    pub truncated: bool,
    /// Hidden task parameter, for evaluation only.
    pub omega: Vec<f64>,
    pub step: usize,
    pub segment: usize,
}

impl Transition {
    pub fn ends_episode(&self) -> bool {
        self.done || self.truncated
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub observation: Vec<f64>,
    pub step_index: usize,
    pub current_segment: usize,
    pub true_omega: Vec<f64>,
}

pub trait Env {
    fn name(&self) -> &'static str;
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn max_steps(&self) -> usize;

    /// Starts an episode under a freshly drawn schedule.
    fn reset(&mut self) -> Vec<f64>;

    /// Starts an episode under a given schedule.
    fn reset_with(&mut self, schedule: TaskSchedule) -> Vec<f64>;

    /// Advances one step; actions outside `[-1, 1]` are clamped and counted.
    fn step(&mut self, action: &[f64]) -> Transition;

    fn state(&self) -> EnvState;
    fn schedule(&self) -> &TaskSchedule;

    /// Number of clamped out-of-range actions so far.
    fn clamp_warnings(&self) -> usize;
}

/// Clamps each entry to `[-1, 1]`, reporting whether anything moved.
pub(crate) fn clamp_action(action: &[f64]) -> (Vec<f64>, bool) {
    let mut clamped = false;
    let out = action
        .iter()
        .map(|&a| {
            let c = if a.is_nan() { 0.0 } else { a.clamp(-1.0, 1.0) };
            clamped |= c != a;
            c
        })
        .collect();
    (out, clamped)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    #[serde(alias = "veltrack")]
    VelTrack,
    #[serde(alias = "oscdamp")]
    OscDamp,
    #[serde(alias = "glucosim")]
    GlucoSim,
}

impl EnvKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "veltrack" => Ok(EnvKind::VelTrack),
            "oscdamp" => Ok(EnvKind::OscDamp),
            "glucosim" => Ok(EnvKind::GlucoSim),
            other => param_err(format!("unknown env {other:?}")),
        }
    }

    pub fn default_episode_len(self) -> usize {
        match self {
            EnvKind::VelTrack | EnvKind::OscDamp => 800,
            EnvKind::GlucoSim => 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub episode_len: usize,
    pub schedule: ScheduleParams,
    /// Std of Gaussian noise added to observations; 0 disables.
    pub obs_noise: f64,
    pub patient: Patient,
    pub meals: MealVariant,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            kind: EnvKind::VelTrack,
            episode_len: EnvKind::VelTrack.default_episode_len(),
            schedule: ScheduleParams::default(),
            obs_noise: 0.0,
            patient: Patient::Adult,
            meals: MealVariant::Two,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.episode_len == 0 {
            return param_err("episode_len must be >= 1");
        }
        if !(self.obs_noise >= 0.0) {
            return param_err(format!("obs_noise must be >= 0, got {}", self.obs_noise));
        }
        Ok(())
    }
}

pub fn make_env(cfg: &EnvConfig, seed: u64) -> Result<Box<dyn Env>> {
    cfg.validate()?;
    let base: Box<dyn Env> = match cfg.kind {
        EnvKind::VelTrack => Box::new(VelTrack::new(cfg.episode_len, cfg.schedule.clone(), seed)),
        EnvKind::OscDamp => Box::new(OscDamp::new(cfg.episode_len, cfg.schedule.clone(), seed)),
        EnvKind::GlucoSim => Box::new(GlucoSim::new(
            cfg.episode_len,
            cfg.schedule.clone(),
            cfg.patient,
            cfg.meals,
            seed,
        )),
    };
    if cfg.obs_noise > 0.0 {
        // Separate stream so noise draws never shift the schedule draws.
        Ok(Box::new(ObservationNoise::new(
            base,
            cfg.obs_noise,
            seed ^ 0x6e6f_6973_65,
        )?))
    } else {
        Ok(base)
    }
}

/// Schedule bookkeeping shared by the environments.
pub(crate) struct EpisodeClock {
    pub params: ScheduleParams,
    pub schedule: TaskSchedule,
    pub step: usize,
    pub max_steps: usize,
    pub rng: rand_chacha::ChaCha8Rng,
    pub warnings: usize,
}

impl EpisodeClock {
    pub fn new(max_steps: usize, params: ScheduleParams, seed: u64) -> Self {
        use rand::SeedableRng;
        let placeholder = TaskSchedule {
            segments: vec![Segment {
                omega: Vec::new(),
                duration: max_steps.max(1),
            }],
            seed: 0,
        };
        EpisodeClock {
            params,
            schedule: placeholder,
            step: 0,
            max_steps,
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
            warnings: 0,
        }
    }

    /// Draws a new schedule covering the episode.
    pub fn redraw<F>(&mut self, sampler: F)
    where
        F: FnMut(&[Vec<f64>], &mut rand_chacha::ChaCha8Rng) -> Vec<f64>,
    {
        use rand::Rng;
        let seed = self.rng.random::<u64>();
        self.schedule = make_schedule(self.max_steps, &self.params, sampler, seed)
            .expect("schedule params validated at construction");
        self.step = 0;
    }

    pub fn omega(&self) -> &[f64] {
        self.schedule.omega_at(self.step)
    }

    pub fn segment(&self) -> usize {
        self.schedule.segment_at(self.step)
    }
}
