use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};

/// Duration distribution of task segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleParams {
    pub mean_period: f64,
    /// Standard deviation of the segment length.
    pub period_std: f64,
    pub min_period: usize,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams {
            mean_period: 60.0,
            period_std: 20.0,
            min_period: 10,
        }
    }
}

impl ScheduleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_period > 0.0) {
            return param_err(format!("mean_period must be positive, got {}", self.mean_period));
        }
        if !(self.period_std >= 0.0 && self.period_std < self.mean_period) {
            return param_err(format!(
                "period_std must be in [0, mean_period), got {}",
                self.period_std
            ));
        }
        if self.min_period == 0 {
            return param_err("min_period must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub omega: Vec<f64>,
    pub duration: usize,
}

/// Realised sequence of task segments for one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSchedule {
    pub segments: Vec<Segment>,
    pub seed: u64,
}

impl TaskSchedule {
    /// Scripted schedule from `(omega, duration)` pairs.
    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() || segments.iter().any(|s| s.duration == 0) {
            return param_err("schedule needs non-empty segments of positive duration");
        }
        Ok(TaskSchedule { segments, seed: 0 })
    }

    pub fn total_steps(&self) -> usize {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn durations(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.duration).collect()
    }

    /// Segment containing `step`; steps past the end stay in the last one.
    pub fn segment_at(&self, step: usize) -> usize {
        let mut end = 0;
        for (h, s) in self.segments.iter().enumerate() {
            end += s.duration;
            if step < end {
                return h;
            }
        }
        self.segments.len() - 1
    }

    pub fn omega_at(&self, step: usize) -> &[f64] {
        &self.segments[self.segment_at(step)].omega
    }
}

/// `round(N(mean, std))`, clamped below at `min_period`.
pub fn sample_duration<R: rand::Rng + ?Sized>(params: &ScheduleParams, rng: &mut R) -> usize {
    let normal = Normal::new(params.mean_period, params.period_std).expect("validated params");
    let d = normal.sample(rng).round();
    if d < params.min_period as f64 {
        params.min_period
    } else {
        d as usize
    }
}

/// Draws segments until they cover `total_steps`. The sampler sees the task
/// parameters drawn so far, so the task process may depend on its history.
pub fn make_schedule<F>(
    total_steps: usize,
    params: &ScheduleParams,
    mut omega_sampler: F,
    seed: u64,
) -> Result<TaskSchedule>
where
    F: FnMut(&[Vec<f64>], &mut ChaCha8Rng) -> Vec<f64>,
{
    params.validate()?;
    if total_steps == 0 {
        return param_err("total_steps must be >= 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history: Vec<Vec<f64>> = Vec::new();
    let mut segments = Vec::new();
    let mut covered = 0;
    while covered < total_steps {
        let duration = sample_duration(params, &mut rng);
        let omega = omega_sampler(&history, &mut rng);
        history.push(omega.clone());
        segments.push(Segment { omega, duration });
        covered += duration;
    }
    Ok(TaskSchedule { segments, seed })
}

/// `(T - mean T_h) / T` with `T` the summed segment durations.
pub fn nonstationarity_degree(schedule: &TaskSchedule) -> Result<f64> {
    if schedule.segments.is_empty() {
        return param_err("empty schedule");
    }
    let total = schedule.total_steps() as f64;
    let mean = total / schedule.segments.len() as f64;
    Ok((total - mean) / total)
}
