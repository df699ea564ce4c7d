use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{clamp_action, Env, EnvState, EpisodeClock, ScheduleParams, TaskSchedule, Transition};

/// 1-D point mass that must match a target velocity changing per segment.
pub struct VelTrack {
    clock: EpisodeClock,
    v: f64,
}

pub const TARGET_RANGE: (f64, f64) = (0.5, 3.0);

fn sample_target(_history: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<f64> {
    vec![rng.random_range(TARGET_RANGE.0..TARGET_RANGE.1)]
}

impl VelTrack {
    pub fn new(max_steps: usize, params: ScheduleParams, seed: u64) -> Self {
        let mut env = VelTrack {
            clock: EpisodeClock::new(max_steps, params, seed),
            v: 0.0,
        };
        env.reset();
        env
    }

    pub fn velocity(&self) -> f64 {
        self.v
    }

    pub fn set_velocity(&mut self, v: f64) {
        self.v = v;
    }
}

impl Env for VelTrack {
    fn name(&self) -> &'static str {
        "veltrack"
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn max_steps(&self) -> usize {
        self.clock.max_steps
    }

    fn reset(&mut self) -> Vec<f64> {
        self.clock.redraw(sample_target);
        self.v = 0.0;
        vec![self.v]
    }

    fn reset_with(&mut self, schedule: TaskSchedule) -> Vec<f64> {
        self.clock.schedule = schedule;
        self.clock.step = 0;
        self.v = 0.0;
        vec![self.v]
    }

    fn step(&mut self, action: &[f64]) -> Transition {
        let (a, clamped) = clamp_action(action);
        self.clock.warnings += clamped as usize;
        let omega = self.clock.omega().to_vec();
        let segment = self.clock.segment();
        let s = vec![self.v];
        self.v = (self.v + 0.2 * a[0]).clamp(-5.0, 5.0);
        let r = -(self.v - omega[0]).abs();
        let step = self.clock.step;
        self.clock.step += 1;
        Transition {
            s,
            a,
            s_next: vec![self.v],
            r,
            done: false,
            truncated: self.clock.step >= self.clock.max_steps,
            omega,
            step,
            segment,
        }
    }

    fn state(&self) -> EnvState {
        EnvState {
            observation: vec![self.v],
            step_index: self.clock.step,
            current_segment: self.clock.segment(),
            true_omega: self.clock.omega().to_vec(),
        }
    }

    fn schedule(&self) -> &TaskSchedule {
        &self.clock.schedule
    }

    fn clamp_warnings(&self) -> usize {
        self.clock.warnings
    }
}
