use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{clamp_action, Env, EnvState, EpisodeClock, ScheduleParams, TaskSchedule, Transition};

pub const DAMPING_SET: [f64; 4] = [0.85, 0.9, 0.95, 1.0];
pub const DT: f64 = 0.05;

/// Next damping differs from the current one, so every boundary is a change.
fn sample_damping(history: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let prev = history.last().map(|w| w[0]);
    let choices: Vec<f64> = DAMPING_SET
        .iter()
        .copied()
        .filter(|&w| Some(w) != prev)
        .collect();
    vec![choices[rng.random_range(0..choices.len())]]
}

/// Forced damped oscillator `x'' = -x - w x' + a`, semi-implicit Euler.
pub struct OscDamp {
    clock: EpisodeClock,
    x: f64,
    xd: f64,
}

impl OscDamp {
    pub fn new(max_steps: usize, params: ScheduleParams, seed: u64) -> Self {
        let mut env = OscDamp {
            clock: EpisodeClock::new(max_steps, params, seed),
            x: 0.0,
            xd: 0.0,
        };
        env.reset();
        env
    }

    pub fn set_state(&mut self, x: f64, xd: f64) {
        self.x = x;
        self.xd = xd;
    }

    fn start_state(&mut self) -> Vec<f64> {
        self.x = self.clock.rng.random_range(-1.0..1.0);
        self.xd = 0.0;
        vec![self.x, self.xd]
    }
}

impl Env for OscDamp {
    fn name(&self) -> &'static str {
        "oscdamp"
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn max_steps(&self) -> usize {
        self.clock.max_steps
    }

    fn reset(&mut self) -> Vec<f64> {
        self.clock.redraw(sample_damping);
        self.start_state()
    }

    fn reset_with(&mut self, schedule: TaskSchedule) -> Vec<f64> {
        self.clock.schedule = schedule;
        self.clock.step = 0;
        self.start_state()
    }

    fn step(&mut self, action: &[f64]) -> Transition {
        let (a, clamped) = clamp_action(action);
        self.clock.warnings += clamped as usize;
        let omega = self.clock.omega().to_vec();
        let segment = self.clock.segment();
        let s = vec![self.x, self.xd];
        let r = -(self.x * self.x + 0.1 * a[0] * a[0]);
        self.xd += DT * (-self.x - omega[0] * self.xd + a[0]);
        self.x += DT * self.xd;
        let step = self.clock.step;
        self.clock.step += 1;
        Transition {
            s,
            a,
            s_next: vec![self.x, self.xd],
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
            observation: vec![self.x, self.xd],
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
