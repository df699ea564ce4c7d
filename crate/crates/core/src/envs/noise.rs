use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Env, EnvState, TaskSchedule, Transition};
use crate::error::{param_err, Result};

/// Adds i.i.d. `N(0, sigma^2)` noise to every observation of the inner env.
pub struct ObservationNoise<E> {
    inner: E,
    sigma: f64,
    rng: ChaCha8Rng,
    last: Vec<f64>,
}

impl<E: Env> ObservationNoise<E> {
    pub fn new(inner: E, sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return param_err(format!("noise sigma must be >= 0, got {sigma}"));
        }
        Ok(ObservationNoise {
            inner,
            sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last: Vec::new(),
        })
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    fn noisy(&mut self, obs: &[f64]) -> Vec<f64> {
        if self.sigma == 0.0 {
            return obs.to_vec();
        }
        let normal = Normal::new(0.0, self.sigma).expect("validated sigma");
        obs.iter().map(|x| x + normal.sample(&mut self.rng)).collect()
    }
}

impl<E: Env> Env for ObservationNoise<E> {
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }

    fn max_steps(&self) -> usize {
        self.inner.max_steps()
    }

    fn reset(&mut self) -> Vec<f64> {
        let obs = self.inner.reset();
        self.last = self.noisy(&obs);
        self.last.clone()
    }

    fn reset_with(&mut self, schedule: TaskSchedule) -> Vec<f64> {
        let obs = self.inner.reset_with(schedule);
        self.last = self.noisy(&obs);
        self.last.clone()
    }

    fn step(&mut self, action: &[f64]) -> Transition {
        let mut tr = self.inner.step(action);
        tr.s = std::mem::take(&mut self.last);
        tr.s_next = self.noisy(&tr.s_next);
        self.last = tr.s_next.clone();
        tr
    }

    fn state(&self) -> EnvState {
        EnvState {
            observation: self.last.clone(),
            ..self.inner.state()
        }
    }

    fn schedule(&self) -> &TaskSchedule {
        self.inner.schedule()
    }

    fn clamp_warnings(&self) -> usize {
        self.inner.clamp_warnings()
    }
}

impl Env for Box<dyn Env> {
    fn name(&self) -> &'static str {
        (**self).name()
    }
    fn obs_dim(&self) -> usize {
        (**self).obs_dim()
    }
    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }
    fn max_steps(&self) -> usize {
        (**self).max_steps()
    }
    fn reset(&mut self) -> Vec<f64> {
        (**self).reset()
    }
    fn reset_with(&mut self, schedule: TaskSchedule) -> Vec<f64> {
        (**self).reset_with(schedule)
    }
    fn step(&mut self, action: &[f64]) -> Transition {
        (**self).step(action)
    }
    fn state(&self) -> EnvState {
        (**self).state()
    }
    fn schedule(&self) -> &TaskSchedule {
        (**self).schedule()
    }
    fn clamp_warnings(&self) -> usize {
        (**self).clamp_warnings()
    }
}
