use serde::{Deserialize, Serialize};

/// Per-feature running mean and variance (Welford).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub count: f64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
    pub enabled: bool,
}

impl RunningNorm {
    pub fn new(dim: usize, enabled: bool) -> Self {
        RunningNorm {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            enabled,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, x: &[f64]) {
        self.count += 1.0;
        for (i, &v) in x.iter().enumerate() {
            let d = v - self.mean[i];
            self.mean[i] += d / self.count;
            self.m2[i] += d * (v - self.mean[i]);
        }
    }

    pub fn std(&self, i: usize) -> f64 {
        if self.count < 2.0 {
            return 1.0;
        }
        (self.m2[i] / self.count).sqrt().max(1e-6)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        if !self.enabled || self.count < 2.0 {
            return x.to_vec();
        }
        x.iter()
            .enumerate()
            .map(|(i, v)| ((v - self.mean[i]) / self.std(i)).clamp(-10.0, 10.0))
            .collect()
    }
}
