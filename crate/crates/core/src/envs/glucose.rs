//! Toy blood-glucose regulation with an insulin pump.
//!
//! One step is five minutes starting at 06:00. Carbohydrates pass through a
//! gut compartment and insulin through an on-board compartment, both with
//! first-order release; glucose drifts upward and relaxes toward a basal
//! level. The hidden task is the size of the varying meals.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{clamp_action, Env, EnvState, EpisodeClock, ScheduleParams, TaskSchedule, Transition};
use crate::error::{param_err, Result};

pub const MAX_DOSE: u32 = 5;
const MINUTES_PER_STEP: usize = 5;
const START_MINUTE: usize = 6 * 60;

const GUT_RATE: f64 = 0.1;
const INSULIN_RATE: f64 = 0.05;
const CARB_GAIN: f64 = 1.2;
const INSULIN_GAIN: f64 = 4.0;
const DRIFT: f64 = 0.6;
const RELAX: f64 = 0.01;
const BASAL: f64 = 140.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Patient {
    Adolescent,
    Adult,
}

impl Patient {
    pub fn meal_range(self) -> (f64, f64) {
        match self {
            Patient::Adolescent => (50.0, 80.0),
            Patient::Adult => (60.0, 80.0),
        }
    }
}

/// Which meals vary with the task: lunch only, or lunch and dinner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MealVariant {
    One,
    Two,
}

/// Reward and termination for glucose `g` after a change of `delta`.
pub fn glucose_reward(g: f64, delta: f64) -> (f64, bool) {
    if !(70.0..=200.0).contains(&g) {
        (-20.0, true)
    } else if g < 100.0 && delta < 0.5 {
        (-1.0, false)
    } else if g > 150.0 && delta > 0.5 {
        (-1.0, false)
    } else if (100.0..=150.0).contains(&g) {
        (50.0, false)
    } else {
        (0.0, false)
    }
}

/// Maps a continuous action in `[-1, 1]` to a dose in `0..=5`.
pub fn action_to_dose(a: f64) -> u32 {
    let x = ((a.clamp(-1.0, 1.0) + 1.0) * 0.5 * MAX_DOSE as f64).round();
    x as u32
}

pub struct GlucoSim {
    clock: EpisodeClock,
    patient: Patient,
    meals: MealVariant,
    glucose: f64,
    delta: f64,
    gut: f64,
    insulin: f64,
    terminated: bool,
}

impl GlucoSim {
    pub fn new(
        max_steps: usize,
        params: ScheduleParams,
        patient: Patient,
        meals: MealVariant,
        seed: u64,
    ) -> Self {
        let mut env = GlucoSim {
            clock: EpisodeClock::new(max_steps, params, seed),
            patient,
            meals,
            glucose: 120.0,
            delta: 0.0,
            gut: 0.0,
            insulin: 0.0,
            terminated: false,
        };
        env.reset();
        env
    }

    pub fn glucose(&self) -> f64 {
        self.glucose
    }

    fn minute_of_day(&self) -> usize {
        (START_MINUTE + self.clock.step * MINUTES_PER_STEP) % (24 * 60)
    }

    /// Carbohydrates eaten during the current step.
    fn carbs_now(&self) -> f64 {
        let start = self.minute_of_day();
        let omega = self.clock.omega();
        let meal = |hour: usize, size: f64| {
            let m = hour * 60;
            if (start..start + MINUTES_PER_STEP).contains(&m) {
                size
            } else {
                0.0
            }
        };
        meal(7, 45.0) + meal(12, omega[0]) + meal(16, 15.0) + meal(18, omega[1]) + meal(23, 10.0)
    }

    fn observe(&self) -> Vec<f64> {
        vec![
            self.glucose / 100.0,
            self.delta / 10.0,
            self.insulin / 10.0,
            self.minute_of_day() as f64 / 1440.0,
        ]
    }

    fn start(&mut self) -> Vec<f64> {
        self.glucose = self.clock.rng.random_range(110.0..130.0);
        self.delta = 0.0;
        self.gut = 0.0;
        self.insulin = 0.0;
        self.terminated = false;
        self.observe()
    }

    /// Advances one step with an integer dose.
    pub fn step_dose(&mut self, dose: u32) -> Result<Transition> {
        if dose > MAX_DOSE {
            return param_err(format!("dose {dose} outside 0..={MAX_DOSE}"));
        }
        let omega = self.clock.omega().to_vec();
        let segment = self.clock.segment();
        let s = self.observe();
        self.gut += self.carbs_now();
        let absorbed = GUT_RATE * self.gut;
        self.gut -= absorbed;
        self.insulin += dose as f64;
        let active = INSULIN_RATE * self.insulin;
        self.insulin -= active;
        let prev = self.glucose;
        self.glucose += CARB_GAIN * absorbed - INSULIN_GAIN * active + DRIFT
            + RELAX * (BASAL - self.glucose);
        self.delta = self.glucose - prev;
        let (r, done) = glucose_reward(self.glucose, self.delta);
        self.terminated = done;
        let step = self.clock.step;
        self.clock.step += 1;
        Ok(Transition {
            s,
            a: vec![dose as f64],
            s_next: self.observe(),
            r,
            done,
            truncated: !done && self.clock.step >= self.clock.max_steps,
            omega,
            step,
            segment,
        })
    }
}

fn sample_meals(patient: Patient, meals: MealVariant) -> impl FnMut(&[Vec<f64>], &mut ChaCha8Rng) -> Vec<f64> {
    move |_, rng| {
        let (lo, hi) = patient.meal_range();
        let lunch = rng.random_range(lo..=hi);
        let dinner = match meals {
            MealVariant::Two => rng.random_range(lo..=hi),
            MealVariant::One => 80.0,
        };
        vec![lunch, dinner]
    }
}

impl Env for GlucoSim {
    fn name(&self) -> &'static str {
        "glucosim"
    }

    fn obs_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn max_steps(&self) -> usize {
        self.clock.max_steps
    }

    fn reset(&mut self) -> Vec<f64> {
        self.clock.redraw(sample_meals(self.patient, self.meals));
        self.start()
    }

    fn reset_with(&mut self, schedule: TaskSchedule) -> Vec<f64> {
        self.clock.schedule = schedule;
        self.clock.step = 0;
        self.start()
    }

    /// The stored action is the continuous one the agent emitted, so the
    /// replay buffer stays in the policy's action space.
    fn step(&mut self, action: &[f64]) -> Transition {
        let (a, clamped) = clamp_action(action);
        self.clock.warnings += clamped as usize;
        let mut tr = self
            .step_dose(action_to_dose(a[0]))
            .expect("mapped dose is in range");
        tr.a = a;
        tr
    }

    fn state(&self) -> EnvState {
        EnvState {
            observation: self.observe(),
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
